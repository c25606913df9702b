//! Offline skill learning and online prior-regularized skill RL, plus the
//! baseline methods (fixed-length skills, behavior cloning, flat SAC).

pub mod baselines;
pub mod checkpoint;
pub mod kl;
pub mod rl;
pub mod sac;
pub mod skills;

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
