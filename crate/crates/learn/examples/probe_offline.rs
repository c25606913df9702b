//! Times offline training and prints the criterion-4 style evaluation
//! numbers on a 50-demo focused dataset; development aid for budget tuning.

use extract_core::cluster::{fit_clusters, KMeansConfig};
use extract_core::embed::{embed_dataset, pooled_diffs, SyntheticOracleEmbedder};
use extract_core::env::{
    generate_demos, DemoConfig, StationWorldConfig, TaskDistribution, TaskSpec, OBS_DIM,
};
use extract_core::segment::{relabel_with_model, LabelingConfig, SkillLabeledDataset};
use extract_learn::skills::{
    eval_prior_top1, eval_progress_final, eval_reconstruction_mse, train_offline, SkillModel,
    SkillModelConfig, TrainConfig,
};

fn main() {
    let t0 = std::time::Instant::now();
    let dist = TaskDistribution::focused(TaskSpec::default_target()).unwrap();
    let mut archive = generate_demos(
        &StationWorldConfig::default(),
        &dist,
        &DemoConfig {
            n_demos: 50,
            seed: 4,
            attach_context: false,
        },
    )
    .unwrap();
    let embedder = SyntheticOracleEmbedder::with_defaults(4);
    embed_dataset(&mut archive, Some(&embedder), true).unwrap();
    let (pooled, _) = pooled_diffs(&archive).unwrap();
    let model_k = fit_clusters(pooled.view(), &KMeansConfig::new(8, 4)).unwrap();
    let labeled = relabel_with_model(&model_k, &mut archive, None, &LabelingConfig::default())
        .unwrap();
    println!("setup: {:?}, segments {}", t0.elapsed(), labeled.len());

    // Split segments 80/20 by trajectory order.
    let split = labeled.segments.len() * 4 / 5;
    let train_set = SkillLabeledDataset {
        segments: labeled.segments[..split].to_vec(),
        k: 8,
    };
    let held = SkillLabeledDataset {
        segments: labeled.segments[split..].to_vec(),
        k: 8,
    };

    let mut model = SkillModel::new(SkillModelConfig::new(OBS_DIM, 2, 8));
    let rec0 = eval_reconstruction_mse(&model, &held, 0, 200).unwrap();
    println!("initial recon MSE {rec0:.5}");

    let t1 = std::time::Instant::now();
    let steps = 2000;
    let log = train_offline(
        &mut model,
        &train_set,
        &TrainConfig {
            steps,
            ..Default::default()
        },
        None,
    )
    .unwrap();
    let dt = t1.elapsed();
    println!(
        "train {} steps: {:?} ({:.1} ms/step), loss {:.4} -> {:.4}",
        steps,
        dt,
        dt.as_millis() as f64 / steps as f64,
        log[0].total,
        log.last().unwrap().total
    );
    println!(
        "rec {:.4} -> {:.4}",
        log[0].action_rec,
        log.last().unwrap().action_rec
    );

    let rec = eval_reconstruction_mse(&model, &held, 0, 200).unwrap();
    let top1 = eval_prior_top1(&model, &held, 0, 200).unwrap();
    let prog = eval_progress_final(&model, &held, 0, 200, 0.1).unwrap();
    println!(
        "held-out: recon {rec:.5} (ratio {:.3}), prior top1 {top1:.3}, progress-final {prog:.3}",
        rec / rec0
    );

    // Miss anatomy: final-progress error by segment length.
    let mut rng = extract_core::rng::rng_from_seed(0);
    let mut by_len: std::collections::BTreeMap<usize, (usize, usize, f64)> = Default::default();
    for seg in &held.segments {
        let w = extract_core::data::sample_window(seg, model.cfg.max_len, &mut rng);
        let actions = w.actions.mapv(|v| v as f64);
        let (_, mu, _) = model.encode(&actions, seg.label as usize, None).unwrap();
        let n = actions.nrows();
        let (_, progress) = model.decode(&mu, seg.label as usize, n).unwrap();
        let err = (progress[n - 1] - 1.0).abs();
        let e = by_len.entry(n).or_insert((0, 0, 0.0));
        e.0 += 1;
        if err > 0.1 {
            e.1 += 1;
        }
        e.2 += err;
    }
    for (len, (count, misses, err_sum)) in by_len {
        println!(
            "  len {len:2}: {count:3} segs, {misses:3} misses, mean |err| {:.3}",
            err_sum / count as f64
        );
    }
}
