//! Flat soft actor-critic over low-level environment actions: diagonal
//! Gaussian policy, twin critics with targets, fixed entropy coefficient.
//! Used by the from-scratch SAC baseline, for fine-tuning behavior-cloned
//! policies, and as the reference learner in the shared-machinery reduction
//! check (where its entropy coefficient is zero).

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use extract_core::env::{StationWorld, StationWorldConfig, TaskSpec};
use extract_core::error::{Error, Result};
use extract_core::rng::{derive_seed, derive_seed_indexed, next_standard_normal, rng_from_seed};
use extract_nn::{Adam, AdamConfig, Mlp, ParamId, ParamStore, Tape, Var};

use crate::rl::RlLogRecord;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatSacConfig {
    /// Fixed entropy coefficient (no automatic tuning).
    pub alpha_ent: f64,
    pub gamma: f64,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub env_step_budget: usize,
    pub warmup_steps: usize,
    pub update_every: usize,
    pub eval_every_env_steps: usize,
    pub eval_episodes: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for FlatSacConfig {
    fn default() -> Self {
        Self {
            alpha_ent: 0.1,
            gamma: 0.99,
            tau: 5e-3,
            buffer_capacity: 100_000,
            batch_size: 64,
            env_step_budget: 100_000,
            warmup_steps: 1_000,
            update_every: 1,
            eval_every_env_steps: 10_000,
            eval_episodes: 5,
            lr: 3e-4,
            seed: 0,
            hidden: 64,
            sigma_min: 1e-4,
            sigma_max: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlatTransition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

pub struct FlatSacLearner {
    pub cfg: FlatSacConfig,
    pub store: ParamStore,
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub t1: Mlp,
    pub t2: Mlp,
    policy_ids: Vec<ParamId>,
    critic_ids: Vec<ParamId>,
    adam_policy: Adam,
    adam_critic: Adam,
    buffer: std::collections::VecDeque<FlatTransition>,
    pub state_dim: usize,
    pub act_dim: usize,
}

fn eval_mlp(mlp: &Mlp, store: &ParamStore, input: &Array2<f64>) -> Array2<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let out = mlp.forward(&mut tape, store, x);
    tape.value(out).clone()
}

impl FlatSacLearner {
    pub fn new(state_dim: usize, act_dim: usize, cfg: FlatSacConfig) -> Self {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, "flat-sac"));
        let h = cfg.hidden;
        let policy = Mlp::new(&mut store, "policy", &[state_dim, h, h, 2 * act_dim], &mut rng);
        let policy_bias = policy.layers.last().expect("non-empty mlp").b;
        for j in act_dim..2 * act_dim {
            store.value_mut(policy_bias)[[0, j]] = crate::skills::RAW_SIGMA_INIT;
        }
        let critic_dims = [state_dim + act_dim, h, h, 1];
        let q1 = Mlp::new(&mut store, "critic.q1", &critic_dims, &mut rng);
        let q2 = Mlp::new(&mut store, "critic.q2", &critic_dims, &mut rng);
        let t1 = Mlp::new(&mut store, "critic.t1", &critic_dims, &mut rng);
        let t2 = Mlp::new(&mut store, "critic.t2", &critic_dims, &mut rng);
        let target_pairs: Vec<(ParamId, ParamId)> = q1
            .param_ids()
            .into_iter()
            .zip(t1.param_ids())
            .chain(q2.param_ids().into_iter().zip(t2.param_ids()))
            .collect();
        let snapshot = store.clone();
        ParamStore::copy_values(&snapshot, &target_pairs, &mut store);
        let policy_ids = policy.param_ids();
        let mut critic_ids = q1.param_ids();
        critic_ids.extend(q2.param_ids());
        let adam_cfg = AdamConfig {
            lr: cfg.lr,
            clip_norm: Some(1.0),
            ..Default::default()
        };
        let adam_policy = Adam::new(adam_cfg.clone(), policy_ids.clone(), &store);
        let adam_critic = Adam::new(adam_cfg, critic_ids.clone(), &store);
        Self {
            cfg,
            store,
            policy,
            q1,
            q2,
            t1,
            t2,
            policy_ids,
            critic_ids,
            adam_policy,
            adam_critic,
            buffer: std::collections::VecDeque::new(),
            state_dim,
            act_dim,
        }
    }

    pub fn policy_param_ids(&self) -> &[ParamId] {
        &self.policy_ids
    }

    pub fn critic_param_ids(&self) -> &[ParamId] {
        &self.critic_ids
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn push_transition(&mut self, t: FlatTransition) {
        if self.buffer.len() == self.cfg.buffer_capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(t);
    }

    /// Gaussian policy parameters at a batch of states.
    pub fn policy_gaussian(&self, states: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let out = eval_mlp(&self.policy, &self.store, states);
        let mu = out.slice(ndarray::s![.., ..self.act_dim]).to_owned();
        let sigma = out
            .slice(ndarray::s![.., self.act_dim..2 * self.act_dim])
            .mapv(|raw| {
                self.cfg.sigma_min
                    + (self.cfg.sigma_max - self.cfg.sigma_min) * crate::sigmoid_scalar(raw)
            });
        (mu, sigma)
    }

    pub fn select_action(&self, state: &[f64], rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
        let s = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("state row");
        let (mu, sigma) = self.policy_gaussian(&s);
        match rng {
            Some(rng) => (0..self.act_dim)
                .map(|j| mu[[0, j]] + sigma[[0, j]] * next_standard_normal(rng))
                .collect(),
            None => (0..self.act_dim).map(|j| mu[[0, j]]).collect(),
        }
    }

    /// Next-action draws for targets; returns `(a', ε')` pairs.
    pub fn sample_next(
        &self,
        states: &Array2<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Vec<(Vec<f64>, Vec<f64>)> {
        let (mu, sigma) = self.policy_gaussian(states);
        (0..states.nrows())
            .map(|i| {
                let eps: Vec<f64> = (0..self.act_dim).map(|_| next_standard_normal(rng)).collect();
                let a = (0..self.act_dim)
                    .map(|j| mu[[i, j]] + sigma[[i, j]] * eps[j])
                    .collect();
                (a, eps)
            })
            .collect()
    }

    /// `y = r + γ(1−done)(min Q̄(s', a') − α·log π(a'|s'))` with `log π`
    /// computed from the reparameterization noise.
    pub fn critic_targets(
        &self,
        batch: &[&FlatTransition],
        next: &[(Vec<f64>, Vec<f64>)],
    ) -> Vec<f64> {
        let b = batch.len();
        let mut next_states = Array2::zeros((b, self.state_dim));
        for (i, tr) in batch.iter().enumerate() {
            for (j, &v) in tr.next_state.iter().enumerate() {
                next_states[[i, j]] = v;
            }
        }
        let (_, sigma) = self.policy_gaussian(&next_states);
        let mut q_in = Array2::zeros((b, self.state_dim + self.act_dim));
        for (i, (a, _)) in next.iter().enumerate() {
            for j in 0..self.state_dim {
                q_in[[i, j]] = next_states[[i, j]];
            }
            for (j, &v) in a.iter().enumerate() {
                q_in[[i, self.state_dim + j]] = v;
            }
        }
        let tq1 = eval_mlp(&self.t1, &self.store, &q_in);
        let tq2 = eval_mlp(&self.t2, &self.store, &q_in);
        batch
            .iter()
            .zip(next.iter())
            .enumerate()
            .map(|(i, (tr, (_, eps)))| {
                let qmin = tq1[[i, 0]].min(tq2[[i, 0]]);
                let log_pi: f64 = (0..self.act_dim)
                    .map(|j| {
                        -(0.5 * eps[j] * eps[j]
                            + sigma[[i, j]].ln()
                            + 0.5 * std::f64::consts::TAU.ln())
                    })
                    .sum();
                let not_done = if tr.done { 0.0 } else { 1.0 };
                tr.reward
                    + self.cfg.gamma * not_done * (qmin - self.cfg.alpha_ent * log_pi)
            })
            .collect()
    }

    pub fn build_critic_loss(
        &self,
        batch: &[&FlatTransition],
        targets: &[f64],
    ) -> (Tape, Var) {
        let b = batch.len();
        let mut q_in = Array2::zeros((b, self.state_dim + self.act_dim));
        let mut y = Array2::zeros((b, 1));
        for (i, tr) in batch.iter().enumerate() {
            for (j, &v) in tr.state.iter().enumerate() {
                q_in[[i, j]] = v;
            }
            for (j, &v) in tr.action.iter().enumerate() {
                q_in[[i, self.state_dim + j]] = v;
            }
            y[[i, 0]] = targets[i];
        }
        let mut tape = Tape::new();
        let input = tape.constant(q_in);
        let yv = tape.constant(y);
        let q1 = self.q1.forward(&mut tape, &self.store, input);
        let q2 = self.q2.forward(&mut tape, &self.store, input);
        let e1 = tape.sub(q1, yv);
        let e2 = tape.sub(q2, yv);
        let s1 = tape.square(e1);
        let s2 = tape.square(e2);
        let sum = tape.add(s1, s2);
        let loss = tape.mean_all(sum);
        (tape, loss)
    }

    /// `mean_b[α·log π(a_π|s) − min Q(s, a_π)]` with reparameterized `a_π`.
    pub fn build_policy_loss(&self, states: &Array2<f64>, eps: &Array2<f64>) -> (Tape, Var) {
        let b = states.nrows();
        assert_eq!(eps.nrows(), b);
        let mut tape = Tape::new();
        let s_const = tape.constant(states.clone());
        let out = self.policy.forward(&mut tape, &self.store, s_const);
        let mu = tape.slice_cols(out, 0, self.act_dim);
        let raw = tape.slice_cols(out, self.act_dim, 2 * self.act_dim);
        let sigma = crate::skills::sigma_from_raw(
            &mut tape,
            raw,
            self.cfg.sigma_min,
            self.cfg.sigma_max,
        );
        let eps_v = tape.constant(eps.clone());
        let noise = tape.mul(sigma, eps_v);
        let a = tape.add(mu, noise);
        // log π(a|s) at the reparameterized sample, as a function of σ.
        let half_eps_sq = tape.constant(eps.mapv(|e| 0.5 * e * e));
        let ln_sigma = tape.ln(sigma);
        let per_dim = tape.add(half_eps_sq, ln_sigma);
        let rows = tape.sum_cols(per_dim);
        let rows = tape.add_scalar(rows, 0.5 * std::f64::consts::TAU.ln() * self.act_dim as f64);
        let log_pi = tape.neg(rows);

        let q_in = tape.concat_cols(&[s_const, a]);
        let q1 = self.q1.forward(&mut tape, &self.store, q_in);
        let q2 = self.q2.forward(&mut tape, &self.store, q_in);
        let q_min = tape.min_elem(q1, q2);
        let ent_term = tape.mul_scalar(log_pi, self.cfg.alpha_ent);
        let per_row = tape.sub(ent_term, q_min);
        let loss = tape.mean_all(per_row);
        (tape, loss)
    }

    pub fn update(&mut self, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let idx: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| rng.gen_range(0..self.buffer.len()))
            .collect();
        let batch: Vec<&FlatTransition> = idx.iter().map(|&i| &self.buffer[i]).collect();
        let b = batch.len();
        let mut next_states = Array2::zeros((b, self.state_dim));
        for (i, tr) in batch.iter().enumerate() {
            for (j, &v) in tr.next_state.iter().enumerate() {
                next_states[[i, j]] = v;
            }
        }
        let next = self.sample_next(&next_states, rng);
        let targets = self.critic_targets(&batch, &next);
        let (ct, cl) = self.build_critic_loss(&batch, &targets);
        let cl_v = ct.scalar(cl);
        if !cl_v.is_finite() {
            return Err(Error::Numerical(format!("flat SAC critic diverged: {cl_v}")));
        }
        self.store.zero_grads();
        ct.backward(cl, &mut self.store);
        self.adam_critic.step(&mut self.store);

        let mut states = Array2::zeros((b, self.state_dim));
        for (i, tr) in batch.iter().enumerate() {
            for (j, &v) in tr.state.iter().enumerate() {
                states[[i, j]] = v;
            }
        }
        let eps = Array2::from_shape_fn((b, self.act_dim), |_| next_standard_normal(rng));
        let (pt, pl) = self.build_policy_loss(&states, &eps);
        let pl_v = pt.scalar(pl);
        if !pl_v.is_finite() {
            return Err(Error::Numerical(format!("flat SAC policy diverged: {pl_v}")));
        }
        self.store.zero_grads();
        pt.backward(pl, &mut self.store);
        self.adam_policy.step(&mut self.store);
        self.store.zero_grads();
        self.soft_update_targets();
        Ok((cl_v, pl_v))
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

/// Mean greedy (μ-action) return over evaluation episodes.
pub fn evaluate_flat_greedy(
    learner: &FlatSacLearner,
    env_config: &StationWorldConfig,
    task: &TaskSpec,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut env = StationWorld::new(env_config.clone());
        let obs = env.reset(task, derive_seed_indexed(seed, "eval-ep", ep as u64));
        let mut state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        let mut ep_return = 0.0;
        while !env.is_done() {
            let a = learner.select_action(&state, None);
            let (obs, r, _) = env.step([a[0], a[1]])?;
            ep_return += r;
            state = obs.iter().map(|&v| v as f64).collect();
        }
        total += ep_return;
    }
    Ok(total / episodes as f64)
}

/// Online SAC over low-level actions. `init_policy_from` warm-starts the
/// policy head (the behavior-cloning fine-tune path).
pub fn flat_sac_train(
    env_config: &StationWorldConfig,
    task: &TaskSpec,
    cfg: FlatSacConfig,
    init_policy_from: Option<(&ParamStore, &[ParamId])>,
    method: &str,
) -> Result<(FlatSacLearner, Vec<RlLogRecord>)> {
    let mut learner = FlatSacLearner::new(
        extract_core::env::OBS_DIM,
        extract_core::env::ACT_DIM,
        cfg,
    );
    if let Some((src_store, src_ids)) = init_policy_from {
        let pairs: Vec<(ParamId, ParamId)> = src_ids
            .iter()
            .copied()
            .zip(learner.policy.param_ids())
            .collect();
        ParamStore::copy_values(src_store, &pairs, &mut learner.store);
    }
    let cfg = learner.cfg.clone();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "flat-sac-train"));
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
        alpha_d: 0.0,
        alpha_z: cfg.alpha_ent,
    };
    let mut last_losses: Option<(f64, f64)> = None;
    while env_steps < cfg.env_step_budget {
        let action = learner.select_action(&state, Some(&mut rng));
        let (obs, reward, done) = env.step([action[0], action[1]])?;
        let next_state: Vec<f64> = obs.iter().map(|&v| v as f64).collect();
        env_steps += 1;
        episode_return += reward;
        learner.push_transition(FlatTransition {
            state: state.clone(),
            action,
            reward,
            next_state: next_state.clone(),
            done,
        });
        if done {
            records.push(RlLogRecord {
                env_steps,
                episode: Some(episode),
                episode_return: Some(episode_return),
                critic_loss: last_losses.map(|l| l.0),
                policy_loss: last_losses.map(|l| l.1),
                ..base.clone()
            });
            episode += 1;
            let obs = env.reset(task, derive_seed_indexed(cfg.seed, "train-ep", episode as u64));
            state = obs.iter().map(|&v| v as f64).collect();
            episode_return = 0.0;
        } else {
            state = next_state;
        }
        if learner.buffer_len() >= cfg.warmup_steps && env_steps % cfg.update_every == 0 {
            last_losses = Some(learner.update(&mut rng)?);
        }
        if env_steps >= next_eval {
            let eval = evaluate_flat_greedy(
                &learner,
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
    let final_eval = evaluate_flat_greedy(
        &learner,
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
