//! Prints extraction-quality numbers on scripted data; development aid for
//! picking environment constants.

use extract_core::cluster::{assign_labels, fit_clusters, KMeansConfig};
use extract_core::embed::{embed_dataset, pooled_diffs, SyntheticOracleEmbedder};
use extract_core::env::{
    generate_demos, DemoConfig, StationWorldConfig, TaskDistribution, TaskSpec, N_STATIONS,
};
use extract_core::filter::{median_filter_labels, BoundaryMode};
use extract_core::segment::{cluster_statistics, relabel_with_model, LabelingConfig};

fn main() {
    let dist = TaskDistribution::uniform_excluding(TaskSpec::default_target());
    let mut archive = generate_demos(
        &StationWorldConfig::default(),
        &dist,
        &DemoConfig {
            n_demos: 200,
            seed: 0,
            attach_context: false,
        },
    )
    .unwrap();
    let lens: Vec<usize> = archive.trajectories.iter().map(|t| t.len()).collect();
    println!(
        "episodes: n={} len min/mean/max = {}/{:.1}/{}",
        lens.len(),
        lens.iter().min().unwrap(),
        lens.iter().sum::<usize>() as f64 / lens.len() as f64,
        lens.iter().max().unwrap()
    );

    let embedder = SyntheticOracleEmbedder::with_defaults(0);
    embed_dataset(&mut archive, Some(&embedder), true).unwrap();
    let (pooled, _) = pooled_diffs(&archive).unwrap();
    for k in [3usize, 5, 8, 15] {
        let model = fit_clusters(pooled.view(), &KMeansConfig::new(k, 0)).unwrap();
        let mut counts = vec![vec![0usize; N_STATIONS]; k];
        let mut total = 0usize;
        for traj in &archive.trajectories {
            let raw =
                assign_labels(&model, traj.embeddings.as_ref().unwrap().view(), &traj.id).unwrap();
            let filt = median_filter_labels(&raw, 7, BoundaryMode::EdgeReplicate).unwrap();
            for (l, g) in filt.labels.iter().zip(traj.gt_labels.as_ref().unwrap()) {
                counts[*l as usize][*g as usize] += 1;
                total += 1;
            }
        }
        let majority: usize = counts
            .iter()
            .map(|c| c.iter().max().copied().unwrap_or(0))
            .sum();
        println!(
            "K={k}: purity {:.4} inertia {:.1} nonempty {}",
            majority as f64 / total as f64,
            model.inertia,
            counts.iter().filter(|c| c.iter().sum::<usize>() > 0).count()
        );
        if k == 8 {
            let labeled =
                relabel_with_model(&model, &mut archive.clone(), None, &LabelingConfig::default())
                    .unwrap();
            let stats = cluster_statistics(&labeled).unwrap();
            println!("  mean segment length {:.1}", stats.overall_mean_len);
            for s in &stats.per_label {
                println!(
                    "  label {}: count {} mean {:.1} median {:.1} q1 {:.1} q3 {:.1}",
                    s.label, s.count, s.mean_len, s.median_len, s.q1_len, s.q3_len
                );
            }
        }
    }
}
