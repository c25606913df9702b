//! KL divergences: exact scalar forms (used by targets and tests) and
//! tape-level row-wise builders (used inside differentiable losses).

use extract_core::error::{Error, Result};
use extract_nn::{Tape, Var};

/// Minimum probability substituted into the reference distribution.
pub const Q_FLOOR: f64 = 1e-8;

/// `Σ p log(p/q)` with `q` floored at `Q_FLOOR`; zero `p` entries contribute
/// nothing.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::InvalidArgument(
            "kl_categorical: distributions must have equal non-zero length".into(),
        ));
    }
    for (&pv, &qv) in p.iter().zip(q.iter()) {
        if !(pv.is_finite() && qv.is_finite()) || pv < 0.0 || qv < 0.0 {
            return Err(Error::Validation(
                "kl_categorical: probabilities must be finite and non-negative".into(),
            ));
        }
    }
    let sum_p: f64 = p.iter().sum();
    let sum_q: f64 = q.iter().sum();
    if (sum_p - 1.0).abs() > 1e-6 || (sum_q - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "kl_categorical: distributions must sum to 1 (got {sum_p}, {sum_q})"
        )));
    }
    let mut kl = 0.0;
    for (&pv, &qv) in p.iter().zip(q.iter()) {
        if pv > 0.0 {
            kl += pv * (pv / qv.max(Q_FLOOR)).ln();
        }
    }
    Ok(kl)
}

/// Closed-form KL between diagonal Gaussians, summed over dimensions:
/// `Σ_i [ln(σ2/σ1) + (σ1² + (μ1−μ2)²) / (2σ2²) − 1/2]`.
pub fn kl_gaussian_diag(mu1: &[f64], sigma1: &[f64], mu2: &[f64], sigma2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if sigma1.len() != d || mu2.len() != d || sigma2.len() != d || d == 0 {
        return Err(Error::InvalidArgument(
            "kl_gaussian_diag: all parameter vectors must share a non-zero length".into(),
        ));
    }
    if sigma1.iter().chain(sigma2.iter()).any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::Validation(
            "kl_gaussian_diag: standard deviations must be positive and finite".into(),
        ));
    }
    let mut kl = 0.0;
    for i in 0..d {
        let var_ratio = (sigma1[i] * sigma1[i]) / (sigma2[i] * sigma2[i]);
        let mean_term = (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]) / (sigma2[i] * sigma2[i]);
        kl += (sigma2[i] / sigma1[i]).ln() + 0.5 * (var_ratio + mean_term) - 0.5;
    }
    Ok(kl)
}

/// Log density of `x` under a diagonal Gaussian, summed over dimensions.
pub fn gaussian_log_prob(x: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    let mut lp = 0.0;
    for i in 0..x.len() {
        let z = (x[i] - mu[i]) / sigma[i];
        lp -= 0.5 * z * z + sigma[i].ln() + 0.5 * (std::f64::consts::TAU).ln();
    }
    lp
}

// ----- tape builders (row-wise over a batch) -----

/// Row-wise KL between diagonal Gaussians given as `[B, z]` tape vars.
/// Returns `[B, 1]`.
pub fn kl_gaussian_rows(
    tape: &mut Tape,
    mu1: Var,
    sigma1: Var,
    mu2: Var,
    sigma2: Var,
) -> Var {
    let ln_s2 = tape.ln(sigma2);
    let ln_s1 = tape.ln(sigma1);
    let log_ratio = tape.sub(ln_s2, ln_s1);
    let s1_sq = tape.square(sigma1);
    let s2_sq = tape.square(sigma2);
    let dmu = tape.sub(mu1, mu2);
    let dmu_sq = tape.square(dmu);
    let num = tape.add(s1_sq, dmu_sq);
    let frac = tape.div(num, s2_sq);
    let half_frac = tape.mul_scalar(frac, 0.5);
    let inner = tape.add(log_ratio, half_frac);
    let inner = tape.add_scalar(inner, -0.5);
    tape.sum_cols(inner)
}

/// Row-wise KL between categoricals given log-probabilities `[B, K]`:
/// `Σ_k exp(logp)·(logp − logq)`. Returns `[B, 1]`.
pub fn kl_categorical_rows(tape: &mut Tape, logp: Var, logq: Var) -> Var {
    let p = tape.exp(logp);
    let diff = tape.sub(logp, logq);
    let terms = tape.mul(p, diff);
    tape.sum_cols(terms)
}

/// Row-wise negative log density of `x` under a diagonal Gaussian `[B, z]`.
/// Returns `[B, 1]`, including the `½ ln 2π` constants.
pub fn gaussian_nll_rows(tape: &mut Tape, x: Var, mu: Var, sigma: Var) -> Var {
    let d = tape.value(x).ncols();
    let diff = tape.sub(x, mu);
    let z = tape.div(diff, sigma);
    let zsq = tape.square(z);
    let half_zsq = tape.mul_scalar(zsq, 0.5);
    let ln_sigma = tape.ln(sigma);
    let per_dim = tape.add(half_zsq, ln_sigma);
    let summed = tape.sum_cols(per_dim);
    tape.add_scalar(summed, 0.5 * (std::f64::consts::TAU).ln() * d as f64)
}
