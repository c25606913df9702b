//! Pilots the online RL stage on the held-out target task: skill-based RL
//! with prior guidance vs the fixed-length and flat baselines. Used to
//! calibrate step budgets before freezing them in the acceptance suite.

use extract_core::cluster::{fit_clusters, KMeansConfig};
use extract_core::embed::{embed_dataset, pooled_diffs, SyntheticOracleEmbedder};
use extract_core::env::{
    generate_demos, DemoConfig, StationWorldConfig, TaskDistribution, TaskSpec, OBS_DIM,
};
use extract_core::segment::{relabel_with_model, LabelingConfig};
use extract_learn::baselines::{train_spirl, SpirlConfig};
use extract_learn::rl::{rl_train, RlConfig};
use extract_learn::sac::{flat_sac_train, FlatSacConfig};
use extract_learn::skills::{train_offline, SkillModel, SkillModelConfig, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("extract");
    let budget: usize = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(40_000);
    let seeds: Vec<u64> = args
        .get(3)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0]);

    let target = TaskSpec::default_target();
    let dist = TaskDistribution::uniform_excluding(target.clone());
    let env_cfg = StationWorldConfig::default();
    let t0 = std::time::Instant::now();
    let mut archive = generate_demos(
        &env_cfg,
        &dist,
        &DemoConfig {
            n_demos: 200,
            seed: 1,
            attach_context: false,
        },
    )
    .unwrap();

    if which == "sac" {
        for &seed in &seeds {
            let t1 = std::time::Instant::now();
            let cfg = FlatSacConfig {
                env_step_budget: budget,
                eval_every_env_steps: budget / 4,
                seed,
                ..Default::default()
            };
            let (_, log) = flat_sac_train(&env_cfg, &target, cfg, None, "sac").unwrap();
            print_curve("sac", seed, &log, t1.elapsed());
        }
        return;
    }

    if which == "spirl" {
        let spirl_cfg = SpirlConfig {
            train: TrainConfig {
                steps: 2000,
                seed: 11,
                ..Default::default()
            },
            model_seed: 11,
            ..Default::default()
        };
        let (model, _) = train_spirl(&archive, OBS_DIM, &spirl_cfg).unwrap();
        println!("spirl pretrain done at {:?}", t0.elapsed());
        for &seed in &seeds {
            let t1 = std::time::Instant::now();
            let cfg = RlConfig {
                env_step_budget: budget,
                eval_every_env_steps: budget / 4,
                fixed_skill_len: Some(model.cfg.max_len),
                seed,
                ..Default::default()
            };
            let (_, log) = rl_train(&env_cfg, &target, &model, cfg, "spirl").unwrap();
            print_curve("spirl", seed, &log, t1.elapsed());
        }
        return;
    }

    // EXTRACT pipeline.
    let embedder = SyntheticOracleEmbedder::with_defaults(1);
    embed_dataset(&mut archive, Some(&embedder), true).unwrap();
    let (pooled, _) = pooled_diffs(&archive).unwrap();
    let cluster_model = fit_clusters(pooled.view(), &KMeansConfig::new(8, 1)).unwrap();
    let labeled =
        relabel_with_model(&cluster_model, &mut archive, None, &LabelingConfig::default()).unwrap();
    let mut model = SkillModel::new(SkillModelConfig::new(OBS_DIM, 2, 8));
    let log = train_offline(
        &mut model,
        &labeled,
        &TrainConfig {
            steps: 2000,
            seed: 7,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    println!(
        "extract pretrain done at {:?}, final rec {:.4}",
        t0.elapsed(),
        log.last().unwrap().action_rec
    );

    for &seed in &seeds {
        let t1 = std::time::Instant::now();
        let cfg = RlConfig {
            env_step_budget: budget,
            eval_every_env_steps: budget / 4,
            seed,
            ..Default::default()
        };
        let (_, log) = rl_train(&env_cfg, &target, &model, cfg, "extract").unwrap();
        print_curve("extract", seed, &log, t1.elapsed());
    }
}

fn print_curve(
    method: &str,
    seed: u64,
    log: &[extract_learn::rl::RlLogRecord],
    elapsed: std::time::Duration,
) {
    let evals: Vec<(usize, f64)> = log
        .iter()
        .filter_map(|r| r.eval_return.map(|e| (r.env_steps, e)))
        .collect();
    let train_returns: Vec<f64> = log.iter().filter_map(|r| r.episode_return).collect();
    let recent: f64 = if train_returns.is_empty() {
        0.0
    } else {
        let k = train_returns.len().min(20);
        train_returns[train_returns.len() - k..].iter().sum::<f64>() / k as f64
    };
    println!(
        "{method} seed {seed}: evals {:?} last-20-train {recent:.2} elapsed {elapsed:?}",
        evals
    );
}
