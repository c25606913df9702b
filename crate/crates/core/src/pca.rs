//! PCA projection of pooled embedding differences for 2-D cluster
//! visualization. Uses a cyclic Jacobi eigensolver on the covariance matrix;
//! dimensionality here is small (tens), so no external linear algebra is
//! needed.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Result of projecting points onto the top principal components.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// `[N, out_dim]` projected coordinates.
    pub points: Array2<f64>,
    /// `[out_dim, E]` principal directions, sign-fixed so each component's
    /// largest-magnitude coordinate is positive.
    pub components: Array2<f64>,
    /// Fraction of total variance captured per component, descending.
    pub explained_variance_ratio: Vec<f64>,
    /// Eigenvalues (variances) of all E components, descending.
    pub eigenvalues: Vec<f64>,
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
pub fn jacobi_eigen(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols());
    let mut a = matrix.clone();
    let mut v = Array2::eye(n);
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[[i, p]];
                    let aiq = a[[i, q]];
                    a[[i, p]] = c * aip - s * aiq;
                    a[[i, q]] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[[p, j]];
                    let aqj = a[[q, j]];
                    a[[p, j]] = c * apj - s * aqj;
                    a[[q, j]] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[[i, i]]).collect();
    (eigenvalues, v)
}

/// Projects `diffs` onto the top `out_dim` principal components of their
/// covariance. Centering makes the projection invariant to constant offsets;
/// sign fixing makes it deterministic.
pub fn pca_project(diffs: ArrayView2<'_, f32>, out_dim: usize) -> Result<PcaProjection> {
    let n = diffs.nrows();
    let e = diffs.ncols();
    if n < 2 {
        return Err(Error::Validation(format!(
            "PCA needs at least 2 points, got {n}"
        )));
    }
    if out_dim > e {
        return Err(Error::InvalidArgument(format!(
            "out_dim {out_dim} exceeds feature width {e}"
        )));
    }
    let data = diffs.mapv(|v| v as f64);
    let mean: Array1<f64> = data.mean_axis(ndarray::Axis(0)).expect("n >= 2");
    let centered = &data - &mean;
    let mut cov = Array2::zeros((e, e));
    for row in centered.rows() {
        for i in 0..e {
            for j in i..e {
                cov[[i, j]] += row[i] * row[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..e {
        for j in i..e {
            let val = cov[[i, j]] / denom;
            cov[[i, j]] = val;
            cov[[j, i]] = val;
        }
    }
    let (eigenvalues, eigenvectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by(|&i, &j| {
        eigenvalues[j]
            .partial_cmp(&eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let sorted_eigenvalues: Vec<f64> = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();
    let total: f64 = sorted_eigenvalues.iter().sum();
    let mut components = Array2::zeros((out_dim, e));
    for (row, &col) in order.iter().take(out_dim).enumerate() {
        let mut comp: Vec<f64> = (0..e).map(|i| eigenvectors[[i, col]]).collect();
        // Sign convention: largest-magnitude coordinate positive.
        let mut max_idx = 0;
        for (i, c) in comp.iter().enumerate() {
            if c.abs() > comp[max_idx].abs() {
                max_idx = i;
            }
        }
        if comp[max_idx] < 0.0 {
            for c in comp.iter_mut() {
                *c = -*c;
            }
        }
        for (i, c) in comp.into_iter().enumerate() {
            components[[row, i]] = c;
        }
    }
    let points = centered.dot(&components.t());
    let explained_variance_ratio = sorted_eigenvalues
        .iter()
        .take(out_dim)
        .map(|&l| if total > 0.0 { l / total } else { 0.0 })
        .collect();
    Ok(PcaProjection {
        points,
        components,
        explained_variance_ratio,
        eigenvalues: sorted_eigenvalues,
    })
}
