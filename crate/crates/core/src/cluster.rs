//! K-means over pooled embedding differences: k-means++ seeding, Lloyd
//! iterations with empty-cluster reseeding, and a mini-batch mode for pools
//! that exceed a memory budget. All arithmetic is f64 internally; centroids
//! are stored as f32 for serialization.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    /// Lloyd iteration cap.
    pub max_iter: usize,
    /// Stop when the largest centroid movement falls below this.
    pub tol: f64,
    /// Pools larger than this switch to mini-batch updates.
    pub minibatch_threshold: usize,
    pub minibatch_size: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 300,
            tol: 1e-6,
            minibatch_threshold: 1_000_000,
            minibatch_size: 4096,
        }
    }
}

/// A fitted clustering model. `predict` is deterministic; ties break toward
/// the smallest centroid index.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// `[K, E]` row-major centroid list.
    pub centroids: Vec<Vec<f32>>,
    pub seed: u64,
    /// Sum of squared distances of the fit data to assigned centroids.
    pub inertia: f64,
}

impl ClusterModel {
    pub fn dim(&self) -> usize {
        self.centroids.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn centroid_matrix(&self) -> Array2<f32> {
        let e = self.dim();
        let mut m = Array2::zeros((self.k, e));
        for (i, c) in self.centroids.iter().enumerate() {
            for (j, &v) in c.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        m
    }

    /// Nearest-centroid label for a single point.
    pub fn predict_point(&self, point: ArrayView1<'_, f32>) -> Result<usize> {
        if point.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point width {} != centroid width {}",
                point.len(),
                self.dim()
            )));
        }
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.centroids.iter().enumerate() {
            let d = sq_dist_f32(point, c);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        Ok(best)
    }
}

fn sq_dist_f32(a: ArrayView1<'_, f32>, b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// k-means++ seeding. Deterministic given the RNG state.
fn kmeanspp_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.gen_range(0..n);
    centroids.push(points[first].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            // All remaining mass at zero distance: pick uniformly.
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(points[idx].clone());
        let latest = centroids.last().unwrap();
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, latest);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    (best, best_d)
}

/// Reseeds any empty cluster to the point farthest from its assigned
/// centroid.
fn fix_empty_clusters(
    centroids: &mut [Vec<f64>],
    counts: &[usize],
    points: &[Vec<f64>],
    assign: &[usize],
) {
    for k in 0..centroids.len() {
        if counts[k] > 0 {
            continue;
        }
        let mut far_idx = 0usize;
        let mut far_d = -1.0f64;
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, &centroids[assign[i]]);
            if d > far_d {
                far_d = d;
                far_idx = i;
            }
        }
        centroids[k] = points[far_idx].clone();
    }
}

/// Full-batch Lloyd iterations. Returns (centroids, assignment).
fn lloyd(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
    tol: f64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut assign = vec![0usize; points.len()];
    for _ in 0..max_iter {
        for (i, p) in points.iter().enumerate() {
            assign[i] = nearest(&centroids, p).0;
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut movement = 0.0f64;
        for kk in 0..k {
            if counts[kk] == 0 {
                continue;
            }
            let inv = 1.0 / counts[kk] as f64;
            let mut delta = 0.0;
            for (c, s) in centroids[kk].iter_mut().zip(sums[kk].iter()) {
                let nv = s * inv;
                delta += (nv - *c) * (nv - *c);
                *c = nv;
            }
            movement = movement.max(delta.sqrt());
        }
        fix_empty_clusters(&mut centroids, &counts, points, &assign);
        if movement < tol {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assign[i] = nearest(&centroids, p).0;
    }
    (centroids, assign)
}

/// Mini-batch k-means updates (per-center running counts).
fn minibatch<R: Rng>(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut counts = vec![0usize; centroids.len()];
    for _ in 0..max_iter {
        for _ in 0..batch_size {
            let i = rng.gen_range(0..n);
            let (k, _) = nearest(&centroids, &points[i]);
            counts[k] += 1;
            let eta = 1.0 / counts[k] as f64;
            for (c, v) in centroids[k].iter_mut().zip(points[i].iter()) {
                *c += eta * (v - *c);
            }
        }
    }
    centroids
}

/// Fits K-means on pooled feature rows.
pub fn fit_clusters(diffs: ArrayView2<'_, f32>, config: &KMeansConfig) -> Result<ClusterModel> {
    let n = diffs.nrows();
    if config.k < 2 {
        return Err(Error::InvalidArgument(format!("K must be >= 2, got {}", config.k)));
    }
    if n < config.k {
        return Err(Error::Validation(format!(
            "{} points is fewer than K = {}",
            n, config.k
        )));
    }
    if !diffs.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation("non-finite values in clustering input".into()));
    }
    let points: Vec<Vec<f64>> = diffs
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let mut rng = rng_from_seed(config.seed);
    let init = kmeanspp_init(&points, config.k, &mut rng);
    let centroids = if n > config.minibatch_threshold {
        let c = minibatch(
            &points,
            init,
            config.max_iter,
            config.minibatch_size,
            &mut rng,
        );
        // One full refinement pass keeps the final model consistent with
        // full-batch semantics.
        lloyd(&points, c, 1, config.tol).0
    } else {
        lloyd(&points, init, config.max_iter, config.tol).0
    };
    let mut inertia = 0.0f64;
    for p in &points {
        inertia += nearest(&centroids, p).1;
    }
    Ok(ClusterModel {
        k: config.k,
        centroids: centroids
            .into_iter()
            .map(|c| c.into_iter().map(|v| v as f32).collect())
            .collect(),
        seed: config.seed,
        inertia,
    })
}

/// The k-means++ initialization alone, exposed so an independent Lloyd
/// oracle can start from identical centroids.
pub fn kmeanspp_initial_centroids(
    diffs: ArrayView2<'_, f32>,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = diffs.nrows();
    if n < k {
        return Err(Error::Validation(format!("{n} points is fewer than K = {k}")));
    }
    let points: Vec<Vec<f64>> = diffs
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let mut rng = rng_from_seed(seed);
    Ok(kmeanspp_init(&points, k, &mut rng))
}

/// Per-timestep skill labels for one trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub trajectory_id: String,
    pub labels: Vec<i32>,
}

/// Assigns each row of `diffs` to its nearest centroid (squared Euclidean,
/// smallest-index tie-break).
pub fn assign_labels(model: &ClusterModel, diffs: ArrayView2<'_, f32>, trajectory_id: &str) -> Result<LabelSequence> {
    if diffs.ncols() != model.dim() {
        return Err(Error::Dimension(format!(
            "diff width {} != centroid width {}",
            diffs.ncols(),
            model.dim()
        )));
    }
    let labels = diffs
        .rows()
        .into_iter()
        .map(|row| model.predict_point(row).map(|k| k as i32))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelSequence {
        trajectory_id: trajectory_id.to_string(),
        labels,
    })
}
