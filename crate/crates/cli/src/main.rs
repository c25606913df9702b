use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use extract_cli::config::ExperimentConfig;
use extract_cli::stages::{run_stage, Stage};

/// Skill-extraction experiment harness: scripted demonstrations, offline
/// skill extraction and learning, prior-guided online RL, baselines,
/// ablations, and figures.
#[derive(Parser)]
#[command(name = "extract-skills", version, about)]
struct Cli {
    #[command(subcommand)]
    stage: StageCmd,
}

#[derive(Subcommand)]
enum StageCmd {
    /// Generate scripted demonstrations into an archive.
    GenDemos(StageArgs),
    /// Embed, cluster, median-filter, and segment a dataset.
    Extract(StageArgs),
    /// Train the skill decoder and priors offline.
    TrainSkills(StageArgs),
    /// Fine-tune a trained model on a target-task dataset.
    Finetune(StageArgs),
    /// Online prior-guided skill RL on the target task.
    Rl(StageArgs),
    /// Run a baseline method (spirl | bc | sac).
    Baseline(StageArgs),
    /// Sweep over K or the embedding source and tabulate results.
    Ablate(StageArgs),
    /// Render figures from run directories.
    Plot(StageArgs),
}

#[derive(clap::Args)]
struct StageArgs {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Rerun even if the run directory already holds this config.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, args) = match &cli.stage {
        StageCmd::GenDemos(a) => (Stage::GenDemos, a),
        StageCmd::Extract(a) => (Stage::Extract, a),
        StageCmd::TrainSkills(a) => (Stage::TrainSkills, a),
        StageCmd::Finetune(a) => (Stage::Finetune, a),
        StageCmd::Rl(a) => (Stage::Rl, a),
        StageCmd::Baseline(a) => (Stage::Baseline, a),
        StageCmd::Ablate(a) => (Stage::Ablate, a),
        StageCmd::Plot(a) => (Stage::Plot, a),
    };
    let mut config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    match run_stage(stage, &config, args.force) {
        Ok(dir) => {
            println!("ok: artifacts in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
