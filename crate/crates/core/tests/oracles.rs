//! Independent-oracle checks for clustering, PCA, and the archive format.

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::Array2;

use extract_core::archive::{load_dataset, read_arrays, save_dataset};
use extract_core::cluster::{
    fit_clusters, kmeanspp_initial_centroids, KMeansConfig,
};
use extract_core::data::Observations;
use extract_core::pca::pca_project;
use extract_core::rng::{next_standard_normal, rng_from_seed};

/// Full-batch Lloyd iterations written independently of the library
/// implementation, starting from the same k-means++ centroids.
fn lloyd_oracle(points: &Array2<f32>, mut centroids: Vec<Vec<f64>>, iters: usize) -> Vec<usize> {
    let n = points.nrows();
    let dim = points.ncols();
    let k = centroids.len();
    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for i in 0..n {
            let mut best = (0usize, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let mut d = 0.0;
                for j in 0..dim {
                    let diff = points[[i, j]] as f64 - centroid[j];
                    d += diff * diff;
                }
                if d < best.1 {
                    best = (c, d);
                }
            }
            assign[i] = best.0;
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for j in 0..dim {
                sums[assign[i]][j] += points[[i, j]] as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
    }
    for i in 0..n {
        let mut best = (0usize, f64::INFINITY);
        for (c, centroid) in centroids.iter().enumerate() {
            let mut d = 0.0;
            for j in 0..dim {
                let diff = points[[i, j]] as f64 - centroid[j];
                d += diff * diff;
            }
            if d < best.1 {
                best = (c, d);
            }
        }
        assign[i] = best.0;
    }
    assign
}

#[test]
fn kmeans_matches_independent_lloyd_on_blobs() {
    // 40 points from 2 well-separated blobs.
    let mut rng = rng_from_seed(7);
    let mut data = Array2::<f32>::zeros((40, 2));
    for i in 0..40 {
        let center = if i < 20 { [-6.0, -6.0] } else { [6.0, 6.0] };
        data[[i, 0]] = (center[0] + 0.5 * next_standard_normal(&mut rng)) as f32;
        data[[i, 1]] = (center[1] + 0.5 * next_standard_normal(&mut rng)) as f32;
    }
    let cfg = KMeansConfig::new(2, 13);
    let model = fit_clusters(data.view(), &cfg).unwrap();
    let init = kmeanspp_initial_centroids(data.view(), 2, 13).unwrap();
    let oracle = lloyd_oracle(&data, init, 300);

    // Library labels agree with the oracle's converged assignment.
    let labels = extract_core::cluster::assign_labels(&model, data.view(), "t").unwrap();
    for (a, b) in labels.labels.iter().zip(oracle.iter()) {
        assert_eq!(*a as usize, *b);
    }
    // And with blob membership, up to permutation.
    let first = labels.labels[0];
    for (i, &l) in labels.labels.iter().enumerate() {
        if i < 20 {
            assert_eq!(l, first);
        } else {
            assert_ne!(l, first);
        }
    }
}

#[test]
fn kmeans_inertia_no_worse_than_initialization() {
    let mut rng = rng_from_seed(3);
    let data = Array2::from_shape_fn((150, 3), |_| next_standard_normal(&mut rng) as f32);
    let cfg = KMeansConfig::new(5, 21);
    let model = fit_clusters(data.view(), &cfg).unwrap();
    let init = kmeanspp_initial_centroids(data.view(), 5, 21).unwrap();
    let inertia_of = |centroids: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for row in data.rows() {
            let mut best = f64::INFINITY;
            for c in centroids {
                let d: f64 = row
                    .iter()
                    .zip(c.iter())
                    .map(|(&x, &y)| (x as f64 - y) * (x as f64 - y))
                    .sum();
                best = best.min(d);
            }
            total += best;
        }
        total
    };
    assert!(model.inertia <= inertia_of(&init) + 1e-9);
}

#[test]
fn pca_isotropic_cloud_has_flat_spectrum() {
    let e = 8usize;
    let mut rng = rng_from_seed(5);
    let data = Array2::from_shape_fn((4000, e), |_| next_standard_normal(&mut rng) as f32);
    let proj = pca_project(data.view(), 2).unwrap();
    let sum_top2: f64 = proj.explained_variance_ratio.iter().sum();
    let expected = 2.0 / e as f64;
    assert!(
        (sum_top2 - expected).abs() < 0.05,
        "top-2 explained variance {sum_top2:.4} vs isotropic {expected:.4}"
    );
    // Oracle: explained variance of each component equals the variance of
    // the data projected onto it.
    let mean = data
        .mapv(|v| v as f64)
        .mean_axis(ndarray::Axis(0))
        .unwrap();
    for c in 0..2 {
        let comp = proj.components.row(c);
        let mut vals = Vec::with_capacity(data.nrows());
        for row in data.rows() {
            let proj_val: f64 = row
                .iter()
                .zip(comp.iter())
                .zip(mean.iter())
                .map(|((&x, &w), &m)| (x as f64 - m) * w)
                .sum();
            vals.push(proj_val);
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
        assert!(
            (var - proj.eigenvalues[c]).abs() < 1e-6 * var.max(1.0),
            "component {c}: projected variance {var} vs eigenvalue {}",
            proj.eigenvalues[c]
        );
    }
}

/// Hand-written container fixture: a 5-step trajectory with labels
/// `[0,0,1,1,1]`, built byte-by-byte, must load and round-trip exactly.
#[test]
fn hand_written_labeled_fixture_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = serde_json::json!({
        "format_version": "1",
        "trajectories": [{"id": "fix", "len": 5}],
        "obs_shape": [2],
        "act_dim": 1,
    });
    std::fs::write(
        dir.path().join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .unwrap();

    let mut bytes: Vec<u8> = Vec::new();
    bytes.extend_from_slice(b"EXTARR01");
    bytes.write_u32::<LittleEndian>(3).unwrap();
    let write_header = |bytes: &mut Vec<u8>, name: &str, dtype: u8, shape: &[u64]| {
        bytes.write_u16::<LittleEndian>(name.len() as u16).unwrap();
        bytes.extend_from_slice(name.as_bytes());
        bytes.push(dtype);
        bytes.push(shape.len() as u8);
        for &d in shape {
            bytes.write_u64::<LittleEndian>(d).unwrap();
        }
    };
    write_header(&mut bytes, "observations", 0, &[5, 2]);
    for v in [0.0f32, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5] {
        bytes.write_f32::<LittleEndian>(v).unwrap();
    }
    write_header(&mut bytes, "actions", 0, &[5, 1]);
    for v in [0.1f32, -0.1, 0.2, -0.2, 0.3] {
        bytes.write_f32::<LittleEndian>(v).unwrap();
    }
    write_header(&mut bytes, "labels", 1, &[5]);
    for v in [0i32, 0, 1, 1, 1] {
        bytes.write_i32::<LittleEndian>(v).unwrap();
    }
    std::fs::write(dir.path().join("traj_fix.bin"), &bytes).unwrap();

    let archive = load_dataset(dir.path()).unwrap();
    assert_eq!(archive.trajectories.len(), 1);
    let traj = &archive.trajectories[0];
    assert_eq!(traj.labels.as_deref(), Some(&[0, 0, 1, 1, 1][..]));
    match &traj.observations {
        Observations::Flat(a) => assert_eq!(a[[4, 1]], 4.5),
        _ => panic!("expected flat observations"),
    }

    // Round-trip back to disk: the payload container must be byte-identical
    // to the hand-written one.
    let dir2 = tempfile::tempdir().unwrap();
    save_dataset(&archive, dir2.path()).unwrap();
    let rewritten = std::fs::read(dir2.path().join("traj_fix.bin")).unwrap();
    assert_eq!(rewritten, bytes);
    let reread = read_arrays(&dir2.path().join("traj_fix.bin")).unwrap();
    assert_eq!(reread.len(), 3);
}

#[test]
fn embeddings_preserve_declared_width() {
    let dir = tempfile::tempdir().unwrap();
    let mut traj = extract_core::Trajectory::new(
        "e",
        Observations::Flat(Array2::zeros((4, 3))),
        Array2::zeros((4, 2)),
    );
    traj.embeddings = Some(Array2::from_shape_fn((4, 32), |(i, j)| (i * 32 + j) as f32));
    let archive = extract_core::DatasetArchive::new(vec![traj], Default::default());
    save_dataset(&archive, dir.path()).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    let emb = loaded.trajectories[0].embeddings.as_ref().unwrap();
    assert_eq!(emb.shape(), &[4, 32]);
}
