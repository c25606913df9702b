//! Adam optimizer over a parameter group, with global-norm gradient
//! clipping.

use ndarray::Array2;

use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 gradient-norm clip; `None` disables.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// One optimizer instance per parameter group (e.g. policy vs critics) so
/// bias-correction steps stay independent.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    group: Vec<ParamId>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, group: Vec<ParamId>, store: &ParamStore) -> Self {
        let m = group
            .iter()
            .map(|&id| Array2::zeros(store.value(id).raw_dim()))
            .collect();
        let v = group
            .iter()
            .map(|&id| Array2::zeros(store.value(id).raw_dim()))
            .collect();
        Self {
            config,
            group,
            m,
            v,
            t: 0,
        }
    }

    pub fn group(&self) -> &[ParamId] {
        &self.group
    }

    /// Applies one update from the gradients currently accumulated in the
    /// store, then leaves the grads untouched (caller zeroes them).
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let mut scale = 1.0;
        if let Some(clip) = self.config.clip_norm {
            let mut sq = 0.0;
            for &id in &self.group {
                sq += store.grad(id).iter().map(|g| g * g).sum::<f64>();
            }
            let norm = sq.sqrt();
            if norm > clip {
                scale = clip / norm;
            }
        }
        let bc1 = 1.0 - self.config.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.config.beta2.powi(self.t as i32);
        for (i, &id) in self.group.iter().enumerate() {
            let grad = store.grad(id).mapv(|g| g * scale);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(&grad).for_each(|m, &g| {
                *m = self.config.beta1 * *m + (1.0 - self.config.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(&grad).for_each(|v, &g| {
                *v = self.config.beta2 * *v + (1.0 - self.config.beta2) * g * g;
            });
            let lr = self.config.lr;
            let eps = self.config.eps;
            let value = store.value_mut(id);
            ndarray::Zip::from(value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
