//! Property suites for the core invariants: archive round-trips, window
//! sampling bounds, median-filter order statistics, segmentation cover,
//! nearest-centroid equivalence, and embedding-difference conventions.

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use extract_core::archive::{load_dataset, save_dataset};
use extract_core::cluster::{assign_labels, ClusterModel, LabelSequence};
use extract_core::data::{
    sample_window, ArchiveMetadata, DatasetArchive, Observations, SkillSegment, Trajectory,
};
use extract_core::embed::{embed_differences, IdentityEmbedder};
use extract_core::filter::{median_filter_labels, BoundaryMode};
use extract_core::rng::rng_from_seed;
use extract_core::segment::segment;

fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
    (2usize..20, 1usize..4, 1usize..3, "[a-z]{1,8}").prop_flat_map(|(t, obs_dim, act_dim, id)| {
        (
            proptest::collection::vec(-100f32..100.0, t * obs_dim),
            proptest::collection::vec(-1f32..1.0, t * act_dim),
            proptest::option::of(proptest::collection::vec(0i32..5, t)),
            Just((t, obs_dim, act_dim, id)),
        )
            .prop_map(|(obs, act, labels, (t, od, ad, id))| {
                let mut traj = Trajectory::new(
                    id,
                    Observations::Flat(Array2::from_shape_vec((t, od), obs).unwrap()),
                    Array2::from_shape_vec((t, ad), act).unwrap(),
                );
                traj.labels = labels;
                traj
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn archive_round_trip_is_bit_exact(traj in arb_trajectory(), seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let mut t2 = traj.clone();
        t2.id = format!("{}-b", traj.id);
        let archive = DatasetArchive::new(
            vec![traj, t2],
            ArchiveMetadata { k: Some(8), embedder: Some("synthetic".into()), seed: Some(seed) },
        );
        save_dataset(&archive, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(loaded.trajectories.len(), archive.trajectories.len());
        for (a, b) in archive.trajectories.iter().zip(loaded.trajectories.iter()) {
            prop_assert_eq!(&a.id, &b.id);
            match (&a.observations, &b.observations) {
                (Observations::Flat(x), Observations::Flat(y)) => {
                    prop_assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
                }
                _ => prop_assert!(false, "observation kind changed"),
            }
            prop_assert!(a.actions.iter().zip(b.actions.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
            prop_assert_eq!(&a.labels, &b.labels);
        }
        prop_assert_eq!(&loaded.metadata, &archive.metadata);

        // Save -> load -> save reproduces every byte of the payload files.
        let dir2 = tempfile::tempdir().unwrap();
        save_dataset(&loaded, dir2.path()).unwrap();
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            let p1 = entry.unwrap().path();
            let p2 = dir2.path().join(p1.file_name().unwrap());
            prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn sampled_windows_respect_bounds(
        n in 1usize..60,
        max_len in 1usize..40,
        seed in 0u64..500,
    ) {
        let segment = SkillSegment {
            trajectory_id: "t".into(),
            label: 0,
            start: 0,
            actions: Array2::from_shape_fn((n, 2), |(i, j)| (i + j) as f32),
            observations: Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f32),
            context: None,
        };
        let mut rng = rng_from_seed(seed);
        let w = sample_window(&segment, max_len, &mut rng);
        prop_assert!(w.len <= max_len);
        prop_assert_eq!(w.len, n.min(max_len));
        prop_assert_eq!(w.actions.nrows(), w.len);
        // first_obs corresponds to the window's first action row: the
        // fixture encodes the row index in both matrices.
        let start = (w.first_obs[0] / 3.0).round() as usize;
        prop_assert!(start + w.len <= n);
        prop_assert_eq!(w.actions[[0, 0]], segment.actions[[start, 0]]);
    }

    #[test]
    fn median_filter_output_is_window_element(
        labels in proptest::collection::vec(0i32..6, 1..40),
        half in 0usize..4,
    ) {
        let window = 2 * half + 1;
        let seq = LabelSequence { trajectory_id: "t".into(), labels: labels.clone() };
        let out = median_filter_labels(&seq, window, BoundaryMode::EdgeReplicate).unwrap();
        prop_assert_eq!(out.labels.len(), labels.len());
        let t_len = labels.len() as isize;
        for (t, &v) in out.labels.iter().enumerate() {
            let mut window_vals = Vec::new();
            for off in -(half as isize)..=(half as isize) {
                let idx = (t as isize + off).clamp(0, t_len - 1);
                window_vals.push(labels[idx as usize]);
            }
            prop_assert!(
                window_vals.contains(&v),
                "output {} not in window {:?} at {}", v, window_vals, t
            );
        }
    }

    #[test]
    fn segmentation_covers_and_inverts(
        labels in proptest::collection::vec(0i32..4, 2..40),
    ) {
        let t_len = labels.len();
        let traj = Trajectory::new(
            "t",
            Observations::Flat(Array2::zeros((t_len, 2))),
            Array2::zeros((t_len, 1)),
        );
        let seq = LabelSequence { trajectory_id: "t".into(), labels: labels.clone() };
        let segs = segment(&seq, &traj).unwrap();
        // Contiguity and full cover.
        let mut cursor = 0usize;
        let mut flattened = Vec::new();
        for s in &segs {
            prop_assert_eq!(s.start, cursor);
            prop_assert!(s.len() >= 1);
            cursor += s.len();
            flattened.extend(std::iter::repeat(s.label).take(s.len()));
        }
        prop_assert_eq!(cursor, t_len);
        prop_assert_eq!(flattened, labels.clone());
        // Maximality: adjacent segments have different labels.
        for pair in segs.windows(2) {
            prop_assert_ne!(pair[0].label, pair[1].label);
        }
        // Segment count equals label changes + 1.
        let changes = labels.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert_eq!(segs.len(), changes + 1);
    }

    #[test]
    fn assignment_equals_exhaustive_search(
        points in proptest::collection::vec(-10f32..10.0, 2..300),
        k in 2usize..6,
        seed in 0u64..100,
    ) {
        let dim = 2;
        let n = points.len() / dim;
        prop_assume!(n >= 1);
        let data = Array2::from_shape_vec((n, dim), points[..n * dim].to_vec()).unwrap();
        let mut rng = rng_from_seed(seed);
        use rand::Rng;
        let centroids: Vec<Vec<f32>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let model = ClusterModel { k, centroids, seed, inertia: 0.0 };
        let seq = assign_labels(&model, data.view(), "t").unwrap();
        for (i, &label) in seq.labels.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in model.centroids.iter().enumerate() {
                let d: f64 = (0..dim)
                    .map(|j| (data[[i, j]] as f64 - centroid[j] as f64).powi(2))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            prop_assert_eq!(label as usize, best);
        }
    }

    #[test]
    fn embedding_first_two_rows_agree(
        obs in proptest::collection::vec(-5f32..5.0, 4..60),
    ) {
        let dim = 2;
        let t_len = obs.len() / dim;
        prop_assume!(t_len >= 2);
        let traj = Trajectory::new(
            "t",
            Observations::Flat(Array2::from_shape_vec((t_len, dim), obs[..t_len * dim].to_vec()).unwrap()),
            Array2::zeros((t_len, 1)),
        );
        let emb = IdentityEmbedder { dim };
        let seq = embed_differences(&traj, &emb).unwrap();
        prop_assert_eq!(seq.diffs.row(0).to_vec(), seq.diffs.row(1).to_vec());
        // Zero-diff property: rows matching the first observation map to 0.
        for t in 1..t_len {
            if traj.observations.flat_row(t) == traj.observations.flat_row(0) {
                prop_assert!(seq.diffs.row(t).iter().all(|&v| v == 0.0));
            }
        }
    }
}
