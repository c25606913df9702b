//! Pipeline stages behind the CLI: demo generation, skill extraction,
//! offline skill learning, fine-tuning, online RL, baselines, the ablation
//! sweep, and figure generation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use extract_core::archive::{load_dataset, save_dataset};
use extract_core::cluster::{fit_clusters, ClusterModel, KMeansConfig};
use extract_core::data::DatasetArchive;
use extract_core::embed::{embed_dataset, pooled_diffs, EmbeddingSource, SyntheticOracleEmbedder};
use extract_core::env::{
    generate_demos, DemoConfig, TaskDistribution, TaskSpec, N_STATIONS,
};
use extract_core::error::{Error, Result};
use extract_core::filter::BoundaryMode;
use extract_core::pca::pca_project;
use extract_core::segment::{
    cluster_statistics, relabel_with_model, ClusterStatistics, LabelingConfig, SkillLabeledDataset,
};
use extract_learn::baselines::{
    run_baseline_rl, train_bc, train_spirl, BaselineInputs, BaselineMethod, BcConfig, SpirlConfig,
};
use extract_learn::checkpoint::{load_model, save_model};
use extract_learn::rl::{rl_train, RlLogRecord};
use extract_learn::skills::{train_offline, SkillModel, SkillModelConfig};

use crate::config::{DemoDistribution, ExperimentConfig, Method};
use crate::plot;
use crate::rundir::{prepare_run_dir, read_jsonl, JsonlWriter, LogMeta, RunDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenDemos,
    Extract,
    TrainSkills,
    Finetune,
    Rl,
    Baseline,
    Ablate,
    Plot,
}

pub fn run_stage(stage: Stage, config: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    config.validate()?;
    let run = prepare_run_dir(config, force)?;
    match stage {
        Stage::GenDemos => gen_demos(config, &run),
        Stage::Extract => extract(config, &run),
        Stage::TrainSkills => train_skills(config, &run),
        Stage::Finetune => finetune_stage(config, &run),
        Stage::Rl => rl_stage(config, &run),
        Stage::Baseline => baseline_stage(config, &run),
        Stage::Ablate => ablate_stage(config, &run, force),
        Stage::Plot => plot_stage(config, &run),
    }?;
    Ok(run.path.clone())
}

fn task_spec(config: &ExperimentConfig) -> Result<TaskSpec> {
    TaskSpec::new(config.target_task.clone())
}

fn demo_distribution(config: &ExperimentConfig) -> Result<TaskDistribution> {
    let target = task_spec(config)?;
    Ok(match config.demo_distribution {
        DemoDistribution::Uniform => TaskDistribution::uniform_excluding(target),
        DemoDistribution::Focused => TaskDistribution::focused(target)?,
    })
}

fn gen_demos(config: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let dist = demo_distribution(config)?;
    let archive = generate_demos(
        &config.env,
        &dist,
        &DemoConfig {
            n_demos: config.n_demos,
            seed: config.seed,
            attach_context: config.attach_context,
        },
    )?;
    let out = run.path.join("archive");
    save_dataset(&archive, &out)?;
    let summary = serde_json::json!({
        "config_hash": run.config_hash,
        "n_demos": archive.len(),
        "total_timesteps": archive.trajectories.iter().map(|t| t.len()).sum::<usize>(),
    });
    std::fs::write(
        run.path.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(())
}

/// Frozen clustering artifact written by the extract stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedClusters {
    pub model: ClusterModel,
    pub filter_window: usize,
    pub boundary: BoundaryMode,
    pub source: EmbeddingSource,
    pub embedder_noise: f64,
    #[serde(default)]
    pub standardizer: Option<extract_core::embed::Standardizer>,
}

fn dataset_path<'a>(config: &'a ExperimentConfig, what: &str) -> Result<&'a Path> {
    config
        .dataset
        .as_deref()
        .ok_or_else(|| Error::MissingArtifact(format!("{what} requires `dataset` in the config")))
}

fn embedder_for(config: &ExperimentConfig) -> SyntheticOracleEmbedder {
    SyntheticOracleEmbedder::new(
        SyntheticOracleEmbedder::DEFAULT_DIM,
        N_STATIONS,
        config.embedder_noise,
        config.seed,
    )
}

fn extract(config: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let src = dataset_path(config, "extract stage")?;
    let mut archive = load_dataset(src)?;
    let embedder = embedder_for(config);
    // Build the pooled feature matrix according to the configured source.
    let pooled = match config.embedding_source {
        EmbeddingSource::Embedder => {
            embed_dataset(&mut archive, Some(&embedder), true)?;
            pooled_diffs(&archive)?.0
        }
        EmbeddingSource::Precomputed => pooled_diffs(&archive)?.0,
        other => {
            let mut rows = Vec::new();
            let mut width = 0;
            for traj in &archive.trajectories {
                let seq = extract_core::embed::features_for(traj, other, None)?;
                width = seq.diffs.ncols();
                rows.extend(seq.diffs.into_iter());
            }
            ndarray::Array2::from_shape_vec((rows.len() / width, width), rows)
                .map_err(|e| Error::Dimension(e.to_string()))?
        }
    };
    let standardizer = config
        .standardize
        .then(|| extract_core::embed::Standardizer::fit(&pooled));
    let pooled = match &standardizer {
        Some(st) => st.apply(&pooled),
        None => pooled,
    };
    let labeling = LabelingConfig {
        filter_window: config.filter_window,
        boundary: config.boundary,
        source: config.embedding_source,
        standardizer: standardizer.clone(),
    };
    let model = fit_clusters(pooled.view(), &KMeansConfig::new(config.k, config.seed))?;
    let needs_embedder = config.embedding_source == EmbeddingSource::Embedder;
    let labeled = relabel_with_model(
        &model,
        &mut archive,
        needs_embedder.then_some(&embedder as &dyn extract_core::embed::Embedder),
        &labeling,
    )?;
    save_dataset(&archive, &run.path.join("archive"))?;

    let clusters = SavedClusters {
        model,
        filter_window: config.filter_window,
        boundary: config.boundary,
        source: config.embedding_source,
        embedder_noise: config.embedder_noise,
        standardizer,
    };
    std::fs::write(
        run.path.join("clusters.json"),
        serde_json::to_string_pretty(&clusters)? + "\n",
    )?;

    let stats = cluster_statistics(&labeled)?;
    std::fs::write(
        run.path.join("stats.json"),
        serde_json::to_string_pretty(&stats)? + "\n",
    )?;

    // 2-D projection for cluster visualization.
    let proj = pca_project(pooled.view(), 2)?;
    let labels: Vec<i32> = archive
        .trajectories
        .iter()
        .flat_map(|t| t.labels.clone().expect("labeled above"))
        .collect();
    let stride = (labels.len() / 5000).max(1);
    let points: Vec<(f64, f64)> = proj
        .points
        .rows()
        .into_iter()
        .step_by(stride)
        .map(|r| (r[0], r[1]))
        .collect();
    let picked_labels: Vec<i32> = labels.iter().step_by(stride).copied().collect();
    let pca_doc = serde_json::json!({
        "config_hash": run.config_hash,
        "points": points,
        "labels": picked_labels,
        "explained_variance_ratio": proj.explained_variance_ratio,
    });
    std::fs::write(
        run.path.join("pca.json"),
        serde_json::to_string(&pca_doc)? + "\n",
    )?;
    Ok(())
}

fn state_dim_of(archive: &DatasetArchive) -> Result<usize> {
    let first = archive
        .trajectories
        .first()
        .ok_or_else(|| Error::Validation("archive is empty".into()))?;
    let ctx = first.context.as_ref().map(|c| c.len()).unwrap_or(0);
    Ok(first.observations.flat_dim() + ctx)
}

fn model_config(config: &ExperimentConfig, state_dim: usize, act_dim: usize) -> SkillModelConfig {
    let mut cfg = SkillModelConfig::new(state_dim, act_dim, config.k);
    cfg.z_dim = config.z_dim;
    cfg.beta = config.beta;
    cfg.max_len = config.max_len;
    cfg.seed = config.train.seed;
    cfg
}

fn train_skills(config: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let src = dataset_path(config, "train-skills stage")?;
    let archive = load_dataset(src)?;
    if !archive.all_labeled() {
        return Err(Error::MissingArtifact(format!(
            "archive {} has no skill labels; run the extract stage first",
            src.display()
        )));
    }
    let dataset = SkillLabeledDataset::from_labeled_archive(&archive, config.k)?;
    let state_dim = state_dim_of(&archive)?;
    let act_dim = archive.trajectories[0].act_dim();
    let mut model = SkillModel::new(model_config(config, state_dim, act_dim));

    let meta = LogMeta {
        config_hash: run.config_hash.clone(),
        fairness_hash: run.fairness_hash.clone(),
        method: "extract".into(),
        seed: config.train.seed,
    };
    let mut writer = JsonlWriter::create(&run.path.join("train_metrics.jsonl"), &meta)?;
    let ckpt_path = run.path.join("model.ckpt");
    let cadence = config.checkpoint_every.unwrap_or(0);
    let mut cb = |m: &SkillModel, metrics: &extract_learn::skills::StepMetrics| {
        let _ = writer.write(metrics);
        if cadence > 0 && (metrics.step + 1) % cadence == 0 {
            let _ = save_model(m, &ckpt_path);
        }
    };
    train_offline(&mut model, &dataset, &config.train, Some(&mut cb))?;
    writer.finish()?;
    save_model(&model, &ckpt_path)?;
    Ok(())
}

fn load_clusters(path: &Path) -> Result<SavedClusters> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::MissingArtifact(format!(
            "clusters file {} not found ({e}); run the extract stage first",
            path.display()
        ))
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn finetune_stage(config: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let ckpt = config.checkpoint.as_deref().ok_or_else(|| {
        Error::MissingArtifact("finetune requires `checkpoint` (run train-skills first)".into())
    })?;
    let clusters_path = config.clusters.as_deref().ok_or_else(|| {
        Error::MissingArtifact("finetune requires `clusters` (run extract first)".into())
    })?;
    let target = config.target_dataset.as_deref().ok_or_else(|| {
        Error::MissingArtifact("finetune requires `target_dataset`".into())
    })?;
    let mut model = load_model(ckpt)?;
    let clusters = load_clusters(clusters_path)?;
    let mut archive = load_dataset(target)?;
    let embedder = embedder_for(config);
    let labeling = LabelingConfig {
        filter_window: clusters.filter_window,
        boundary: clusters.boundary,
        source: clusters.source,
        standardizer: clusters.standardizer.clone(),
    };
    let needs_embedder = clusters.source == EmbeddingSource::Embedder;
    let dataset = relabel_with_model(
        &clusters.model,
        &mut archive,
        needs_embedder.then_some(&embedder as &dyn extract_core::embed::Embedder),
        &labeling,
    )?;
    let meta = LogMeta {
        config_hash: run.config_hash.clone(),
        fairness_hash: run.fairness_hash.clone(),
        method: "extract".into(),
        seed: config.train.seed,
    };
    let mut writer = JsonlWriter::create(&run.path.join("finetune_metrics.jsonl"), &meta)?;
    let log = extract_learn::skills::finetune(&mut model, &dataset, &config.train)?;
    for record in &log {
        writer.write(record)?;
    }
    writer.finish()?;
    save_model(&model, &run.path.join("model.ckpt"))?;
    save_dataset(&archive, &run.path.join("target_archive"))?;
    Ok(())
}

fn write_curve(
    run: &RunDir,
    method: &str,
    seed: u64,
    records: &[RlLogRecord],
) -> Result<()> {
    let meta = LogMeta {
        config_hash: run.config_hash.clone(),
        fairness_hash: run.fairness_hash.clone(),
        method: method.to_string(),
        seed,
    };
    let mut writer = JsonlWriter::create(
        &run.path.join(format!("curve_seed{seed}.jsonl")),
        &meta,
    )?;
    for r in records {
        writer.write(r)?;
    }
    writer.finish()
}

fn final_eval(records: &[RlLogRecord]) -> f64 {
    records
        .iter()
        .rev()
        .find_map(|r| r.eval_return)
        .unwrap_or(0.0)
}

fn write_final_returns(run: &RunDir, finals: &[(u64, f64)]) -> Result<()> {
    let doc = serde_json::json!({
        "config_hash": run.config_hash,
        "fairness_hash": run.fairness_hash,
        "final_eval_returns": finals.iter().map(|(s, r)| serde_json::json!({"seed": s, "return": r})).collect::<Vec<_>>(),
    });
    std::fs::write(
        run.path.join("final_returns.json"),
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    Ok(())
}

fn rl_stage(config: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let ckpt = config.checkpoint.as_deref().ok_or_else(|| {
        Error::MissingArtifact(
            "rl stage requires `checkpoint` pointing at a trained skill model \
             (run train-skills first)"
                .into(),
        )
    })?;
    let model = load_model(ckpt)?;
    let task = task_spec(config)?;
    let mut finals = Vec::new();
    for &seed in &config.seeds {
        let mut rl = config.rl.clone();
        rl.seed = seed;
        let (_, records) = rl_train(&config.env, &task, &model, rl, "extract")?;
        write_curve(run, "extract", seed, &records)?;
        finals.push((seed, final_eval(&records)));
    }
    write_final_returns(run, &finals)
}

fn baseline_stage(config: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let method = config.method.clone().ok_or_else(|| {
        Error::InvalidArgument("baseline stage requires `method` (spirl|bc|sac)".into())
    })?;
    let task = task_spec(config)?;
    let mut finals = Vec::new();
    match method {
        Method::Extract => {
            return Err(Error::InvalidArgument(
                "use the `rl` stage for the primary method".into(),
            ))
        }
        Method::Spirl => {
            let src = dataset_path(config, "spirl baseline")?;
            let archive = load_dataset(src)?;
            let state_dim = state_dim_of(&archive)?;
            let spirl_cfg = SpirlConfig {
                window: config.spirl_window,
                train: config.train.clone(),
                model_seed: config.train.seed,
            };
            let (model, _) = train_spirl(&archive, state_dim, &spirl_cfg)?;
            save_model(&model, &run.path.join("spirl_model.ckpt"))?;
            for &seed in &config.seeds {
                let mut rl = config.rl.clone();
                rl.seed = seed;
                rl.fixed_skill_len = Some(model.cfg.max_len);
                let (_, _, records) = run_baseline_rl(
                    BaselineMethod::Spirl,
                    &config.env,
                    &task,
                    BaselineInputs::Spirl(&model),
                    rl,
                    config.sac.clone(),
                )?;
                write_curve(run, "spirl", seed, &records)?;
                finals.push((seed, final_eval(&records)));
            }
        }
        Method::Bc => {
            let src = dataset_path(config, "bc baseline")?;
            let archive = load_dataset(src)?;
            let bc_cfg = BcConfig {
                steps: config.train.steps,
                batch_size: config.train.batch_size,
                lr: config.train.lr,
                seed: config.train.seed,
                ..Default::default()
            };
            let (policy, _, holdout_mse) = train_bc(&archive, &bc_cfg)?;
            std::fs::write(
                run.path.join("bc_eval.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "config_hash": run.config_hash,
                    "holdout_mse": holdout_mse,
                }))? + "\n",
            )?;
            for &seed in &config.seeds {
                let mut sac = config.sac.clone();
                sac.seed = seed;
                let (_, _, records) = run_baseline_rl(
                    BaselineMethod::Bc,
                    &config.env,
                    &task,
                    BaselineInputs::Bc(&policy),
                    config.rl.clone(),
                    sac,
                )?;
                write_curve(run, "bc", seed, &records)?;
                finals.push((seed, final_eval(&records)));
            }
        }
        Method::Sac => {
            for &seed in &config.seeds {
                let mut sac = config.sac.clone();
                sac.seed = seed;
                let (_, _, records) = run_baseline_rl(
                    BaselineMethod::Sac,
                    &config.env,
                    &task,
                    BaselineInputs::None,
                    config.rl.clone(),
                    sac,
                )?;
                write_curve(run, "sac", seed, &records)?;
                finals.push((seed, final_eval(&records)));
            }
        }
    }
    write_final_returns(run, &finals)
}

#[derive(Debug, Serialize)]
struct AblationRow {
    axis: String,
    value: String,
    seed: u64,
    final_return: Option<f64>,
    status: String,
}

fn ablate_stage(config: &ExperimentConfig, run: &RunDir, force: bool) -> Result<()> {
    let axis = config.ablate.axis.clone();
    let values: Vec<(String, ExperimentConfig)> = match axis.as_str() {
        "k" => config
            .ablate
            .k_values
            .iter()
            .map(|&k| {
                let mut c = config.clone();
                c.k = k;
                (format!("k={k}"), c)
            })
            .collect(),
        "embedding-source" => config
            .ablate
            .sources
            .iter()
            .map(|&s| {
                let mut c = config.clone();
                c.embedding_source = s;
                (format!("{s:?}"), c)
            })
            .collect(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown ablation axis '{other}' (use k or embedding-source)"
            )))
        }
    };
    let mut rows: Vec<AblationRow> = Vec::new();
    for (label, mut sub) in values {
        let sub_root = run.path.join("sweep").join(label.replace('=', "_"));
        // extract -> train-skills -> rl, reusing the stage functions.
        let result = (|| -> Result<Vec<(u64, f64)>> {
            sub.out_dir = sub_root.join("extract");
            run_stage(Stage::Extract, &sub, force)?;
            let mut train_cfg = sub.clone();
            train_cfg.out_dir = sub_root.join("train");
            train_cfg.dataset = Some(sub.out_dir.join("archive"));
            run_stage(Stage::TrainSkills, &train_cfg, force)?;
            let mut rl_cfg = train_cfg.clone();
            rl_cfg.out_dir = sub_root.join("rl");
            rl_cfg.checkpoint = Some(train_cfg.out_dir.join("model.ckpt"));
            let dir = run_stage(Stage::Rl, &rl_cfg, force)?;
            let text = std::fs::read_to_string(dir.join("final_returns.json"))?;
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            let finals = doc["final_eval_returns"]
                .as_array()
                .map(|a| {
                    a.iter()
                        .map(|v| {
                            (
                                v["seed"].as_u64().unwrap_or(0),
                                v["return"].as_f64().unwrap_or(0.0),
                            )
                        })
                        .collect::<Vec<_>>()
                })
                .unwrap_or_default();
            Ok(finals)
        })();
        match result {
            Ok(finals) => {
                for (seed, ret) in finals {
                    rows.push(AblationRow {
                        axis: axis.clone(),
                        value: label.clone(),
                        seed,
                        final_return: Some(ret),
                        status: "ok".into(),
                    });
                }
            }
            Err(e) => {
                // Record the failure and continue the sweep.
                rows.push(AblationRow {
                    axis: axis.clone(),
                    value: label.clone(),
                    seed: 0,
                    final_return: None,
                    status: format!("error: {e}"),
                });
            }
        }
    }
    // CSV table.
    let mut csv = format!("# config_hash={}\naxis,value,seed,final_return,status\n", run.config_hash);
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.axis,
            r.value,
            r.seed,
            r.final_return.map(|v| format!("{v:.4}")).unwrap_or_default(),
            r.status.replace(',', ";"),
        ));
    }
    std::fs::write(run.path.join("ablation.csv"), csv)?;

    // Aggregate mean ± std per value for the bar chart.
    let mut order: Vec<String> = Vec::new();
    for r in &rows {
        if !order.contains(&r.value) {
            order.push(r.value.clone());
        }
    }
    let bars: Vec<(String, f64, f64)> = order
        .iter()
        .map(|v| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| &r.value == v)
                .filter_map(|r| r.final_return)
                .collect();
            let n = vals.len().max(1) as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
            (v.clone(), mean, std)
        })
        .collect();
    let svg = plot::bar_chart_svg(
        &bars,
        &format!("ablation over {axis}"),
        &axis,
        "final eval return",
        &run.config_hash,
    );
    std::fs::write(run.path.join("ablation.svg"), svg)?;
    Ok(())
}

fn plot_stage(config: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let spec = config.plot.as_ref().ok_or_else(|| {
        Error::InvalidArgument("plot stage requires a `plot` section in the config".into())
    })?;
    let out = spec
        .out
        .clone()
        .unwrap_or_else(|| run.path.join(format!("{}.svg", spec.kind)));
    match spec.kind.as_str() {
        "learning-curve" => {
            let mut curves: Vec<plot::MethodCurve> = Vec::new();
            let mut fairness: Option<String> = None;
            for dir in &spec.runs {
                let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
                    .map_err(|e| Error::MissingArtifact(format!("{}: {e}", dir.display())))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.file_name()
                            .and_then(|n| n.to_str())
                            .map(|n| n.starts_with("curve_seed") && n.ends_with(".jsonl"))
                            .unwrap_or(false)
                    })
                    .collect();
                entries.sort();
                if entries.is_empty() {
                    return Err(Error::MissingArtifact(format!(
                        "no curve logs in {}",
                        dir.display()
                    )));
                }
                let mut method = String::new();
                let mut seeds = Vec::new();
                for path in entries {
                    let (meta, records) = read_jsonl(&path)?;
                    let meta = meta.ok_or_else(|| {
                        Error::Format(format!("{}: missing meta header", path.display()))
                    })?;
                    // Fairness contract: compared runs must differ only in
                    // the method field.
                    match &fairness {
                        None => fairness = Some(meta.fairness_hash.clone()),
                        Some(h) if *h != meta.fairness_hash => {
                            return Err(Error::Validation(format!(
                                "{}: fairness hash mismatch; runs being compared were not \
                                 produced by configs identical up to `method`",
                                path.display()
                            )))
                        }
                        _ => {}
                    }
                    method = meta.method.clone();
                    let pts: Vec<(f64, f64)> = records
                        .iter()
                        .filter_map(|r| {
                            let steps = r["env_steps"].as_f64()?;
                            let eval = r["eval_return"].as_f64()?;
                            Some((steps, eval))
                        })
                        .collect();
                    seeds.push(pts);
                }
                curves.push(plot::MethodCurve { method, seeds });
            }
            let svg = plot::learning_curve_svg(&curves, "evaluation return", &run.config_hash);
            std::fs::write(&out, svg)?;
        }
        "pca" => {
            let dir = spec.runs.first().ok_or_else(|| {
                Error::InvalidArgument("pca plot requires one extract-stage run dir".into())
            })?;
            let text = std::fs::read_to_string(dir.join("pca.json")).map_err(|e| {
                Error::MissingArtifact(format!("{}: pca.json: {e}", dir.display()))
            })?;
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            let points: Vec<(f64, f64)> = doc["points"]
                .as_array()
                .map(|a| {
                    a.iter()
                        .map(|p| {
                            (
                                p[0].as_f64().unwrap_or(0.0),
                                p[1].as_f64().unwrap_or(0.0),
                            )
                        })
                        .collect()
                })
                .unwrap_or_default();
            let labels: Vec<i32> = doc["labels"]
                .as_array()
                .map(|a| a.iter().map(|v| v.as_i64().unwrap_or(0) as i32).collect())
                .unwrap_or_default();
            let explained: Vec<f64> = doc["explained_variance_ratio"]
                .as_array()
                .map(|a| a.iter().map(|v| v.as_f64().unwrap_or(0.0)).collect())
                .unwrap_or_default();
            if points.is_empty() {
                return Err(Error::Validation("pca.json holds no points".into()));
            }
            let svg = plot::pca_scatter_svg(
                &points,
                &labels,
                &explained,
                "embedding differences, 2-D projection",
                &run.config_hash,
            );
            std::fs::write(&out, svg)?;
        }
        "skill-lengths" => {
            let dir = spec.runs.first().ok_or_else(|| {
                Error::InvalidArgument("skill-lengths plot requires one extract-stage run dir".into())
            })?;
            let text = std::fs::read_to_string(dir.join("stats.json")).map_err(|e| {
                Error::MissingArtifact(format!("{}: stats.json: {e}", dir.display()))
            })?;
            let stats: ClusterStatistics = serde_json::from_str(&text)?;
            let svg =
                plot::skill_length_boxes_svg(&stats, "segment lengths per skill", &run.config_hash);
            std::fs::write(&out, svg)?;
        }
        "executed-lengths" => {
            let dir = spec.runs.first().ok_or_else(|| {
                Error::InvalidArgument("executed-lengths plot requires one rl-stage run dir".into())
            })?;
            let mut counts = vec![0usize; config.max_len + 1];
            let mut found = false;
            for entry in std::fs::read_dir(dir)
                .map_err(|e| Error::MissingArtifact(format!("{}: {e}", dir.display())))?
            {
                let path = entry?.path();
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
                if !name.starts_with("curve_seed") || !name.ends_with(".jsonl") {
                    continue;
                }
                let (_, records) = read_jsonl(&path)?;
                for r in &records {
                    if let Some(len) = r["executed_len"].as_u64() {
                        let len = (len as usize).min(config.max_len);
                        counts[len] += 1;
                        found = true;
                    }
                }
            }
            if !found {
                return Err(Error::Validation(format!(
                    "no executed-length records found in {}",
                    dir.display()
                )));
            }
            let svg = plot::histogram_svg(
                &counts,
                "executed skill lengths",
                "low-level steps per skill",
                &run.config_hash,
            );
            std::fs::write(&out, svg)?;
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown plot kind '{other}' \
                 (learning-curve | pca | skill-lengths | executed-lengths)"
            )))
        }
    }
    Ok(())
}
