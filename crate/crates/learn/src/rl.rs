//! Online skill-based RL: a factorized policy (categorical skill head ×
//! Gaussian argument head), d-headed twin critics with targets, dual-KL
//! regularization toward the frozen skill priors, prior initialization, and
//! progress-based skill termination.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use extract_core::env::{StationWorld, StationWorldConfig, TaskSpec};
use extract_core::error::{Error, Result};
use extract_core::rng::{derive_seed, derive_seed_indexed, next_standard_normal, rng_from_seed};
use extract_nn::{Adam, AdamConfig, Mlp, ParamId, ParamStore, Tape, Var};

use crate::kl::{kl_categorical_rows, kl_gaussian_diag, kl_gaussian_rows};
use crate::skills::{sigma_from_raw, SkillModel};

/// Skill-level replay tuple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkillTransition {
    pub state: Vec<f64>,
    pub d: usize,
    pub z: Vec<f64>,
    /// Undiscounted reward sum over the executed low-level steps.
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub executed_len: usize,
}

/// FIFO replay buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: VecDeque<SkillTransition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            data: VecDeque::with_capacity(capacity.min(65536)),
            capacity,
        }
    }

    pub fn push(&mut self, t: SkillTransition) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &SkillTransition {
        &self.data[i]
    }

    pub fn sample_indices<R: Rng>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        (0..batch).map(|_| rng.gen_range(0..self.data.len())).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SkillTransition> {
        self.data.iter()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RlConfig {
    pub alpha_d: f64,
    pub alpha_z: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Soft target-update rate.
    pub tau: f64,
    /// Total budget in low-level environment steps.
    pub env_step_budget: usize,
    /// Skill transitions collected before updates start.
    pub warmup_transitions: usize,
    pub updates_per_transition: usize,
    pub eval_every_env_steps: usize,
    pub eval_episodes: usize,
    pub lr: f64,
    pub seed: u64,
    /// Execute exactly this many low-level steps per skill instead of
    /// stopping at progress ≥ 1 (the fixed-length baseline configuration).
    pub fixed_skill_len: Option<usize>,
    /// Discount once per skill transition (`false`, the default) or by
    /// `γ^executed_len` (`true`).
    pub discount_per_step: bool,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            alpha_d: 0.1,
            alpha_z: 0.01,
            gamma: 0.99,
            buffer_capacity: 20_000,
            batch_size: 64,
            tau: 5e-3,
            env_step_budget: 100_000,
            warmup_transitions: 256,
            updates_per_transition: 1,
            eval_every_env_steps: 10_000,
            eval_episodes: 5,
            lr: 1e-3,
            seed: 0,
            fixed_skill_len: None,
            discount_per_step: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Sample,
    Greedy,
}

/// A `(d', z')` draw from the current policy at a successor state.
#[derive(Debug, Clone)]
pub struct NextSample {
    pub d: usize,
    pub z: Vec<f64>,
}

/// One learning-curve record; written as JSON lines by the harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RlLogRecord {
    pub method: String,
    pub env_steps: usize,
    pub episode: Option<usize>,
    pub episode_return: Option<f64>,
    pub eval_return: Option<f64>,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    /// Low-level steps the most recent skill actually executed.
    pub executed_len: Option<usize>,
    pub alpha_d: f64,
    pub alpha_z: f64,
}

fn eval_mlp(mlp: &Mlp, store: &ParamStore, input: &Array2<f64>) -> Array2<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let out = mlp.forward(&mut tape, store, x);
    tape.value(out).clone()
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

/// Exact categorical KL from logits, `Σ softmax(p)·(logsoftmax(p) −
/// logsoftmax(q))`; log-space throughout, no probability flooring.
pub fn kl_categorical_from_logits(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax_vec(p_logits);
    let lq = log_softmax_vec(q_logits);
    lp.iter()
        .zip(lq.iter())
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum()
}

fn log_softmax_vec(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

fn one_hot_rows(ds: &[usize], k: usize) -> Array2<f64> {
    let mut m = Array2::zeros((ds.len(), k));
    for (i, &d) in ds.iter().enumerate() {
        m[[i, d]] = 1.0;
    }
    m
}

/// Frozen-prior evaluations used by both losses.
pub struct PriorEval {
    /// `[B, K]` log-probabilities of the discrete prior.
    pub log_pd: Array2<f64>,
    /// Per skill: `([B, z] μ, [B, z] σ)` of the continuous prior.
    pub pz: Vec<(Array2<f64>, Array2<f64>)>,
}

pub fn eval_priors(model: &SkillModel, states: &Array2<f64>) -> PriorEval {
    let logits = eval_mlp(&model.priors.pd, &model.store, states);
    let log_pd = log_softmax_rows(&logits);
    let b = states.nrows();
    let mut pz = Vec::with_capacity(model.cfg.k);
    for d in 0..model.cfg.k {
        let onehot = one_hot_rows(&vec![d; b], model.cfg.k);
        let mut input = Array2::zeros((b, states.ncols() + model.cfg.k));
        input
            .slice_mut(ndarray::s![.., ..states.ncols()])
            .assign(states);
        input
            .slice_mut(ndarray::s![.., states.ncols()..])
            .assign(&onehot);
        let out = eval_mlp(&model.priors.pz, &model.store, &input);
        let (mu, sigma) = split_gaussian(&out, model.cfg.z_dim, model.cfg.sigma_min, model.cfg.sigma_max);
        pz.push((mu, sigma));
    }
    PriorEval { log_pd, pz }
}

fn split_gaussian(
    out: &Array2<f64>,
    z_dim: usize,
    sigma_min: f64,
    sigma_max: f64,
) -> (Array2<f64>, Array2<f64>) {
    let mu = out.slice(ndarray::s![.., ..z_dim]).to_owned();
    let sigma = out
        .slice(ndarray::s![.., z_dim..2 * z_dim])
        .mapv(|raw| sigma_min + (sigma_max - sigma_min) * crate::sigmoid_scalar(raw));
    (mu, sigma)
}

/// The skill-level learner: factorized policy, twin d-headed critics with
/// targets, and the replay buffer. The frozen `SkillModel` (decoder +
/// priors) is passed into every method that needs it and is never mutated.
pub struct SkillRlLearner {
    pub cfg: RlConfig,
    pub store: ParamStore,
    pub pd: Mlp,
    pub pz: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub t1: Mlp,
    pub t2: Mlp,
    policy_ids: Vec<ParamId>,
    critic_ids: Vec<ParamId>,
    adam_policy: Adam,
    adam_critic: Adam,
    pub buffer: ReplayBuffer,
    pub k: usize,
    pub z_dim: usize,
    pub state_dim: usize,
    sigma_min: f64,
    sigma_max: f64,
}

impl SkillRlLearner {
    /// Builds policy heads with the same architecture as the priors and
    /// initializes them by copying the prior parameters.
    pub fn new(model: &SkillModel, cfg: RlConfig) -> Self {
        let mcfg = &model.cfg;
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "rl-learner"));
        let h = mcfg.mlp_hidden;
        let pd = Mlp::new(&mut store, "policy.pd", &[mcfg.state_dim, h, h, mcfg.k], &mut rng);
        let pz = Mlp::new(
            &mut store,
            "policy.pz",
            &[mcfg.state_dim + mcfg.k, h, h, 2 * mcfg.z_dim],
            &mut rng,
        );
        let critic_dims = [mcfg.state_dim + mcfg.z_dim, h, h, mcfg.k];
        let q1 = Mlp::new(&mut store, "critic.q1", &critic_dims, &mut rng);
        let q2 = Mlp::new(&mut store, "critic.q2", &critic_dims, &mut rng);
        let t1 = Mlp::new(&mut store, "critic.t1", &critic_dims, &mut rng);
        let t2 = Mlp::new(&mut store, "critic.t2", &critic_dims, &mut rng);

        // Policy heads start as the priors (Alg. init), targets as critics.
        let pairs: Vec<(ParamId, ParamId)> = model
            .priors
            .pd
            .param_ids()
            .into_iter()
            .zip(pd.param_ids())
            .chain(model.priors.pz.param_ids().into_iter().zip(pz.param_ids()))
            .collect();
        ParamStore::copy_values(&model.store, &pairs, &mut store);
        let target_pairs: Vec<(ParamId, ParamId)> = q1
            .param_ids()
            .into_iter()
            .zip(t1.param_ids())
            .chain(q2.param_ids().into_iter().zip(t2.param_ids()))
            .collect();
        let snapshot = store.clone();
        ParamStore::copy_values(&snapshot, &target_pairs, &mut store);

        let mut policy_ids = pd.param_ids();
        policy_ids.extend(pz.param_ids());
        let mut critic_ids = q1.param_ids();
        critic_ids.extend(q2.param_ids());
        let adam_cfg = AdamConfig {
            lr: cfg.lr,
            clip_norm: Some(1.0),
            ..Default::default()
        };
        let adam_policy = Adam::new(adam_cfg.clone(), policy_ids.clone(), &store);
        let adam_critic = Adam::new(adam_cfg, critic_ids.clone(), &store);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        Self {
            cfg,
            store,
            pd,
            pz,
            q1,
            q2,
            t1,
            t2,
            policy_ids,
            critic_ids,
            adam_policy,
            adam_critic,
            buffer,
            k: mcfg.k,
            z_dim: mcfg.z_dim,
            state_dim: mcfg.state_dim,
            sigma_min: mcfg.sigma_min,
            sigma_max: mcfg.sigma_max,
        }
    }

    pub fn policy_param_ids(&self) -> &[ParamId] {
        &self.policy_ids
    }

    pub fn critic_param_ids(&self) -> &[ParamId] {
        &self.critic_ids
    }

    /// Policy logits at a batch of states.
    pub fn policy_logits(&self, states: &Array2<f64>) -> Array2<f64> {
        eval_mlp(&self.pd, &self.store, states)
    }

    /// Argument-head Gaussian at `(states, d)`.
    pub fn policy_gaussian(&self, states: &Array2<f64>, d: usize) -> (Array2<f64>, Array2<f64>) {
        let b = states.nrows();
        let onehot = one_hot_rows(&vec![d; b], self.k);
        let mut input = Array2::zeros((b, states.ncols() + self.k));
        input
            .slice_mut(ndarray::s![.., ..states.ncols()])
            .assign(states);
        input
            .slice_mut(ndarray::s![.., states.ncols()..])
            .assign(&onehot);
        let out = eval_mlp(&self.pz, &self.store, &input);
        split_gaussian(&out, self.z_dim, self.sigma_min, self.sigma_max)
    }

    /// Samples or greedily picks a `(d, z)` command. Greedy mode takes the
    /// argmax skill (smallest index on ties) and the mean argument.
    pub fn select_skill(
        &self,
        state: &[f64],
        rng: &mut ChaCha8Rng,
        mode: SelectMode,
    ) -> (usize, Vec<f64>) {
        let s = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("state row");
        let logits = self.policy_logits(&s);
        let logp = log_softmax_rows(&logits);
        let d = match mode {
            SelectMode::Greedy => {
                let mut best = 0usize;
                for i in 1..self.k {
                    if logp[[0, i]] > logp[[0, best]] {
                        best = i;
                    }
                }
                best
            }
            SelectMode::Sample => {
                let draw: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = self.k - 1;
                for i in 0..self.k {
                    acc += logp[[0, i]].exp();
                    if draw < acc {
                        chosen = i;
                        break;
                    }
                }
                chosen
            }
        };
        let (mu, sigma) = self.policy_gaussian(&s, d);
        let z = match mode {
            SelectMode::Greedy => (0..self.z_dim).map(|j| mu[[0, j]]).collect(),
            SelectMode::Sample => (0..self.z_dim)
                .map(|j| mu[[0, j]] + sigma[[0, j]] * next_standard_normal(rng))
                .collect(),
        };
        (d, z)
    }

    /// Draws `(d', z')` from the current policy at each successor state.
    pub fn sample_next(&self, states: &Array2<f64>, rng: &mut ChaCha8Rng) -> Vec<NextSample> {
        let logits = self.policy_logits(states);
        let logp = log_softmax_rows(&logits);
        let mut out = Vec::with_capacity(states.nrows());
        for i in 0..states.nrows() {
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let mut d = self.k - 1;
            for j in 0..self.k {
                acc += logp[[i, j]].exp();
                if draw < acc {
                    d = j;
                    break;
                }
            }
            let row = states.row(i).insert_axis(ndarray::Axis(0)).to_owned();
            let (mu, sigma) = self.policy_gaussian(&row, d);
            let z = (0..self.z_dim)
                .map(|j| mu[[0, j]] + sigma[[0, j]] * next_standard_normal(rng))
                .collect();
            out.push(NextSample { d, z });
        }
        out
    }

    /// Bellman targets with dual-KL correction:
    /// `y = r̃ + γ·(1−done)·[min Q̄(s', z', d') − α_z·KL(π_z ∥ p_z)(s', d')
    ///  − α_d·KL(π_d ∥ p_d)(s')]`.
    pub fn critic_targets(
        &self,
        model: &SkillModel,
        batch: &[&SkillTransition],
        next: &[NextSample],
    ) -> Vec<f64> {
        let b = batch.len();
        let mut next_states = Array2::zeros((b, self.state_dim));
        for (i, tr) in batch.iter().enumerate() {
            for (j, &v) in tr.next_state.iter().enumerate() {
                next_states[[i, j]] = v;
            }
        }
        let priors = eval_priors(model, &next_states);
        let policy_logits = self.policy_logits(&next_states);
        let policy_logp = log_softmax_rows(&policy_logits);

        let mut q_in = Array2::zeros((b, self.state_dim + self.z_dim));
        for (i, ns) in next.iter().enumerate() {
            for j in 0..self.state_dim {
                q_in[[i, j]] = next_states[[i, j]];
            }
            for (j, &v) in ns.z.iter().enumerate() {
                q_in[[i, self.state_dim + j]] = v;
            }
        }
        let tq1 = eval_mlp(&self.t1, &self.store, &q_in);
        let tq2 = eval_mlp(&self.t2, &self.store, &q_in);

        let mut targets = Vec::with_capacity(b);
        for (i, (tr, ns)) in batch.iter().zip(next.iter()).enumerate() {
            let qmin = tq1[[i, ns.d]].min(tq2[[i, ns.d]]);
            let (pmu, psigma) = {
                let row = next_states.row(i).insert_axis(ndarray::Axis(0)).to_owned();
                self.policy_gaussian(&row, ns.d)
            };
            let prior = &priors.pz[ns.d];
            let klz = kl_gaussian_diag(
                pmu.row(0).as_slice().unwrap(),
                psigma.row(0).as_slice().unwrap(),
                &prior.0.row(i).to_vec(),
                &prior.1.row(i).to_vec(),
            )
            .expect("positive sigmas by construction");
            let kld: f64 = (0..self.k)
                .map(|j| policy_logp[[i, j]].exp() * (policy_logp[[i, j]] - priors.log_pd[[i, j]]))
                .sum();
            let gamma = if self.cfg.discount_per_step {
                self.cfg.gamma.powi(tr.executed_len as i32)
            } else {
                self.cfg.gamma
            };
            let not_done = if tr.done { 0.0 } else { 1.0 };
            targets.push(
                tr.reward
                    + gamma
                        * not_done
                        * (qmin - self.cfg.alpha_z * klz - self.cfg.alpha_d * kld),
            );
        }
        targets
    }

    /// Builds the critic regression loss on a fresh tape:
    /// `mean_b[(Q1(s,z,d) − y)² + (Q2(s,z,d) − y)²]`. Gradients flow into
    /// the critics only (states, z, and targets are constants).
    pub fn build_critic_loss(
        &self,
        batch: &[&SkillTransition],
        targets: &[f64],
    ) -> (Tape, Var) {
        self.build_critic_loss_from(&self.store, batch, targets)
    }

    /// As `build_critic_loss`, evaluating parameters from `store` (used by
    /// finite-difference checks).
    pub fn build_critic_loss_from(
        &self,
        store: &ParamStore,
        batch: &[&SkillTransition],
        targets: &[f64],
    ) -> (Tape, Var) {
        let b = batch.len();
        let mut q_in = Array2::zeros((b, self.state_dim + self.z_dim));
        let mut onehot = Array2::zeros((b, self.k));
        let mut y = Array2::zeros((b, 1));
        for (i, tr) in batch.iter().enumerate() {
            for (j, &v) in tr.state.iter().enumerate() {
                q_in[[i, j]] = v;
            }
            for (j, &v) in tr.z.iter().enumerate() {
                q_in[[i, self.state_dim + j]] = v;
            }
            onehot[[i, tr.d]] = 1.0;
            y[[i, 0]] = targets[i];
        }
        let mut tape = Tape::new();
        let input = tape.constant(q_in);
        let mask = tape.constant(onehot);
        let yv = tape.constant(y);
        let mut per_critic = Vec::with_capacity(2);
        for critic in [&self.q1, &self.q2] {
            let q = critic.forward(&mut tape, store, input);
            let sel = tape.mul(q, mask);
            let q_d = tape.sum_cols(sel);
            let err = tape.sub(q_d, yv);
            per_critic.push(tape.square(err));
        }
        let sum = tape.add(per_critic[0], per_critic[1]);
        let loss = tape.mean_all(sum);
        (tape, loss)
    }

    /// Builds the probability-weighted policy loss on a fresh tape:
    /// `−mean_b Σ_d π_d(d|s)·[min Q(s, z_d, d) − α_z·KL(π_z ∥ p_z)(s,d) −
    /// α_d·KL(π_d ∥ p_d)(s)]` with `z_d = μ_d + σ_d ⊙ ε_d` reparameterized.
    /// `eps[d]` is the `[B, z_dim]` noise for skill `d`.
    pub fn build_policy_loss(
        &self,
        model: &SkillModel,
        states: &Array2<f64>,
        eps: &[Array2<f64>],
    ) -> (Tape, Var) {
        self.build_policy_loss_from(&self.store, model, states, eps)
    }

    /// As `build_policy_loss`, evaluating parameters from `store`.
    pub fn build_policy_loss_from(
        &self,
        store: &ParamStore,
        model: &SkillModel,
        states: &Array2<f64>,
        eps: &[Array2<f64>],
    ) -> (Tape, Var) {
        assert_eq!(eps.len(), self.k, "one noise matrix per skill");
        let b = states.nrows();
        let priors = eval_priors(model, states);
        let mut tape = Tape::new();
        let s_const = tape.constant(states.clone());
        let logits = self.pd.forward(&mut tape, store, s_const);
        let logp = tape.log_softmax(logits);
        let log_prior = tape.constant(priors.log_pd.clone());
        let kl_d = kl_categorical_rows(&mut tape, logp, log_prior); // [B,1]
        let probs = tape.exp(logp);

        let mut weighted: Option<Var> = None;
        for d in 0..self.k {
            let onehot = tape.constant(one_hot_rows(&vec![d; b], self.k));
            let pz_in = tape.concat_cols(&[s_const, onehot]);
            let out = self.pz.forward(&mut tape, store, pz_in);
            let mu = tape.slice_cols(out, 0, self.z_dim);
            let raw = tape.slice_cols(out, self.z_dim, 2 * self.z_dim);
            let sigma = sigma_from_raw(&mut tape, raw, self.sigma_min, self.sigma_max);
            let eps_v = tape.constant(eps[d].clone());
            let noise = tape.mul(sigma, eps_v);
            let z_d = tape.add(mu, noise);

            let q_in = tape.concat_cols(&[s_const, z_d]);
            let q1 = self.q1.forward(&mut tape, store, q_in);
            let q2 = self.q2.forward(&mut tape, store, q_in);
            let q1_d = tape.slice_cols(q1, d, d + 1);
            let q2_d = tape.slice_cols(q2, d, d + 1);
            let q_min = tape.min_elem(q1_d, q2_d);

            let prior_mu = tape.constant(priors.pz[d].0.clone());
            let prior_sigma = tape.constant(priors.pz[d].1.clone());
            let kl_z = kl_gaussian_rows(&mut tape, mu, sigma, prior_mu, prior_sigma);

            let kl_z_term = tape.mul_scalar(kl_z, self.cfg.alpha_z);
            let kl_d_term = tape.mul_scalar(kl_d, self.cfg.alpha_d);
            let t1 = tape.sub(q_min, kl_z_term);
            let bracket = tape.sub(t1, kl_d_term);
            let p_d = tape.slice_cols(probs, d, d + 1);
            let contrib = tape.mul(p_d, bracket);
            weighted = Some(match weighted {
                Some(acc) => tape.add(acc, contrib),
                None => contrib,
            });
        }
        let mean = tape.mean_all(weighted.expect("k >= 1"));
        let loss = tape.neg(mean);
        (tape, loss)
    }

    /// One critic + one policy gradient step from a uniformly sampled batch,
    /// followed by a soft target update. Returns `(critic_loss,
    /// policy_loss)`.
    pub fn update(&mut self, model: &SkillModel, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let idx = self.buffer.sample_indices(self.cfg.batch_size, rng);
        let batch: Vec<&SkillTransition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        let b = batch.len();
        let mut next_states = Array2::zeros((b, self.state_dim));
        for (i, tr) in batch.iter().enumerate() {
            for (j, &v) in tr.next_state.iter().enumerate() {
                next_states[[i, j]] = v;
            }
        }
        let next = self.sample_next(&next_states, rng);
        let targets = self.critic_targets(model, &batch, &next);

        let (critic_tape, critic_loss) = self.build_critic_loss(&batch, &targets);
        let critic_loss_v = critic_tape.scalar(critic_loss);
        if !critic_loss_v.is_finite() {
            return Err(Error::Numerical(format!(
                "critic loss diverged: {critic_loss_v}"
            )));
        }
        self.store.zero_grads();
        critic_tape.backward(critic_loss, &mut self.store);
        self.adam_critic.step(&mut self.store);

        let mut states = Array2::zeros((b, self.state_dim));
        for (i, tr) in batch.iter().enumerate() {
            for (j, &v) in tr.state.iter().enumerate() {
                states[[i, j]] = v;
            }
        }
        let eps: Vec<Array2<f64>> = (0..self.k)
            .map(|_| Array2::from_shape_fn((b, self.z_dim), |_| next_standard_normal(rng)))
            .collect();
        let (policy_tape, policy_loss) = self.build_policy_loss(model, &states, &eps);
        let policy_loss_v = policy_tape.scalar(policy_loss);
        if !policy_loss_v.is_finite() {
            return Err(Error::Numerical(format!(
                "policy loss diverged: {policy_loss_v}"
            )));
        }
        self.store.zero_grads();
        policy_tape.backward(policy_loss, &mut self.store);
        self.adam_policy.step(&mut self.store);
        self.store.zero_grads();

        self.soft_update_targets();
        Ok((critic_loss_v, policy_loss_v))
    }

    fn soft_update_targets(&mut self) {
        let tau = self.cfg.tau;
        let pairs: Vec<(ParamId, ParamId)> = self
            .q1
            .param_ids()
            .into_iter()
            .zip(self.t1.param_ids())
            .chain(self.q2.param_ids().into_iter().zip(self.t2.param_ids()))
            .collect();
        for (src, dst) in pairs {
            let source = self.store.value(src).clone();
            let target = self.store.value_mut(dst);
            ndarray::Zip::from(target).and(&source).for_each(|t, &s| {
                *t = (1.0 - tau) * *t + tau * s;
            });
        }
    }
}

/// Decodes up to `max_len` actions from `(d, z)` and executes them, stopping
/// early when the progress head crosses 1 or the episode ends. Returns the
/// skill-level transition and the number of low-level steps consumed.
pub fn execute_skill(
    env: &mut StationWorld,
    model: &SkillModel,
    state: &[f64],
    d: usize,
    z: &[f64],
    fixed_len: Option<usize>,
) -> Result<(SkillTransition, usize)> {
    let n = fixed_len.unwrap_or(model.cfg.max_len).min(model.cfg.max_len);
    let (actions, progress) = model.decode(z, d, n)?;
    let use_progress = model.cfg.progress_head && fixed_len.is_none();
    let mut reward_sum = 0.0;
    let mut executed = 0usize;
    let mut next_state: Vec<f64> = state.to_vec();
    let mut done = false;
    for t in 0..n {
        let (obs, reward, env_done) = env.step([actions[[t, 0]], actions[[t, 1]]])?;
        reward_sum += reward;
        executed += 1;
        next_state = obs.iter().map(|&v| v as f64).collect();
        if env_done {
            done = true;
            break;
        }
        if use_progress && progress[t] >= 1.0 {
            break;
        }
    }
    Ok((
        SkillTransition {
            state: state.to_vec(),
            d,
            z: z.to_vec(),
            reward: reward_sum,
            next_state,
            done,
            executed_len: executed,
        },
        executed,
    ))
}

/// Mean greedy return over `episodes` fresh evaluation episodes.
pub fn evaluate_greedy(
    learner: &SkillRlLearner,
    model: &SkillModel,
    env_config: &StationWorldConfig,
    task: &TaskSpec,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut rng = rng_from_seed(derive_seed(seed, "greedy-eval"));
    for ep in 0..episodes {
        let mut env = StationWorld::new(env_config.clone());
        let obs = env.reset(task, derive_seed_indexed(seed, "eval-ep", ep as u64));
        let mut state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        let mut ep_return = 0.0;
        while !env.is_done() {
            let (d, z) = learner.select_skill(&state, &mut rng, SelectMode::Greedy);
            let (tr, _) = execute_skill(&mut env, model, &state, d, &z, learner.cfg.fixed_skill_len)?;
            ep_return += tr.reward;
            state = tr.next_state;
        }
        total += ep_return;
    }
    Ok(total / episodes as f64)
}

/// Full online training loop: alternate skill rollouts with gradient
/// updates, log returns against cumulative low-level env steps, and run
/// periodic greedy evaluations.
pub fn rl_train(
    env_config: &StationWorldConfig,
    task: &TaskSpec,
    model: &SkillModel,
    cfg: RlConfig,
    method: &str,
) -> Result<(SkillRlLearner, Vec<RlLogRecord>)> {
    let mut learner = SkillRlLearner::new(model, cfg);
    let cfg = learner.cfg.clone();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "rl-train"));
    let mut env = StationWorld::new(env_config.clone());
    let mut episode = 0usize;
    let obs = env.reset(task, derive_seed_indexed(cfg.seed, "train-ep", 0));
    let mut state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
    let mut episode_return = 0.0;
    let mut env_steps = 0usize;
    let mut next_eval = cfg.eval_every_env_steps;
    let mut records = Vec::new();
    let base = RlLogRecord {
        method: method.to_string(),
        env_steps: 0,
        episode: None,
        episode_return: None,
        eval_return: None,
        critic_loss: None,
        executed_len: None,
        policy_loss: None,
        alpha_d: cfg.alpha_d,
        alpha_z: cfg.alpha_z,
    };

    while env_steps < cfg.env_step_budget {
        let (d, z) = learner.select_skill(&state, &mut rng, SelectMode::Sample);
        let (tr, steps) = execute_skill(&mut env, model, &state, d, &z, cfg.fixed_skill_len)?;
        env_steps += steps;
        episode_return += tr.reward;
        let done = tr.done;
        records.push(RlLogRecord {
            env_steps,
            executed_len: Some(tr.executed_len),
            ..base.clone()
        });
        learner.buffer.push(tr.clone());
        if done {
            records.push(RlLogRecord {
                env_steps,
                episode: Some(episode),
                episode_return: Some(episode_return),
                ..base.clone()
            });
            episode += 1;
            let obs = env.reset(task, derive_seed_indexed(cfg.seed, "train-ep", episode as u64));
            state = obs.iter().map(|&v| v as f64).collect();
            episode_return = 0.0;
        } else {
            state = tr.next_state;
        }
        if learner.buffer.len() >= cfg.warmup_transitions {
            for _ in 0..cfg.updates_per_transition {
                let (cl, pl) = learner.update(model, &mut rng)?;
                records.push(RlLogRecord {
                    env_steps,
                    critic_loss: Some(cl),
                    policy_loss: Some(pl),
                    ..base.clone()
                });
            }
        }
        if env_steps >= next_eval {
            let eval = evaluate_greedy(
                &learner,
                model,
                env_config,
                task,
                cfg.eval_episodes,
                derive_seed_indexed(cfg.seed, "eval-round", next_eval as u64),
            )?;
            records.push(RlLogRecord {
                env_steps,
                eval_return: Some(eval),
                ..base.clone()
            });
            next_eval += cfg.eval_every_env_steps;
        }
    }
    let final_eval = evaluate_greedy(
        &learner,
        model,
        env_config,
        task,
        cfg.eval_episodes,
        derive_seed_indexed(cfg.seed, "eval-final", env_steps as u64),
    )?;
    records.push(RlLogRecord {
        env_steps,
        eval_return: Some(final_eval),
        ..base
    });
    Ok((learner, records))
}
