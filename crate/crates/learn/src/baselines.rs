//! Reference methods for head-to-head comparison: fixed-length
//! single-latent skills (the SPiRL configuration of the shared machinery),
//! behavior cloning, and flat SAC.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use extract_core::data::{DatasetArchive, SkillSegment};
use extract_core::env::{StationWorldConfig, TaskSpec};
use extract_core::error::{Error, Result};
use extract_core::rng::{derive_seed, rng_from_seed};
use extract_core::segment::SkillLabeledDataset;
use extract_nn::{Adam, AdamConfig, Mlp, ParamStore, Tape};

use crate::rl::{rl_train, RlConfig, RlLogRecord, SkillRlLearner};
use crate::sac::{flat_sac_train, FlatSacConfig, FlatSacLearner};
use crate::skills::{train_offline, SkillModel, SkillModelConfig, StepMetrics, TrainConfig};

/// Fixed-length window size for the SPiRL-style baseline.
pub const SPIRL_WINDOW: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpirlConfig {
    pub window: usize,
    pub train: TrainConfig,
    pub model_seed: u64,
}

impl Default for SpirlConfig {
    fn default() -> Self {
        Self {
            window: SPIRL_WINDOW,
            train: TrainConfig::default(),
            model_seed: 0,
        }
    }
}

/// Wraps each trajectory as a single label-0 segment so fixed-length window
/// sampling draws random contiguous action sequences from anywhere in it.
pub fn spirl_dataset(archive: &DatasetArchive, window: usize) -> Result<SkillLabeledDataset> {
    let mut segments = Vec::with_capacity(archive.trajectories.len());
    for traj in &archive.trajectories {
        let t_len = traj.len();
        if t_len < window {
            return Err(Error::Validation(format!(
                "trajectory '{}': length {} shorter than the fixed window {}",
                traj.id, t_len, window
            )));
        }
        let obs_dim = traj.observations.flat_dim();
        let mut observations = Array2::zeros((t_len, obs_dim));
        for t in 0..t_len {
            observations
                .row_mut(t)
                .assign(&traj.observations.flat_row(t));
        }
        segments.push(SkillSegment {
            trajectory_id: traj.id.clone(),
            label: 0,
            start: 0,
            actions: traj.actions.mapv(|v| v as f64).mapv(|v| v as f32),
            observations,
            context: traj.context.clone(),
        });
    }
    Ok(SkillLabeledDataset { segments, k: 1 })
}

/// The SPiRL configuration of the shared skill machinery: one discrete
/// skill, fixed window length, no progress head.
pub fn spirl_model_config(state_dim: usize, act_dim: usize, cfg: &SpirlConfig) -> SkillModelConfig {
    let mut model = SkillModelConfig::new(state_dim, act_dim, 1);
    model.max_len = cfg.window;
    model.progress_head = false;
    model.seed = cfg.model_seed;
    model
}

/// Trains the fixed-length single-latent skill model on random windows.
pub fn train_spirl(
    archive: &DatasetArchive,
    state_dim: usize,
    cfg: &SpirlConfig,
) -> Result<(SkillModel, Vec<StepMetrics>)> {
    let dataset = spirl_dataset(archive, cfg.window)?;
    let act_dim = archive
        .trajectories
        .first()
        .map(|t| t.act_dim())
        .ok_or_else(|| Error::Validation("empty archive".into()))?;
    let mut model = SkillModel::new(spirl_model_config(state_dim, act_dim, cfg));
    let log = train_offline(&mut model, &dataset, &cfg.train, None)?;
    Ok((model, log))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BcConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of trajectories held out for evaluation.
    pub holdout_fraction: f64,
    pub hidden: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            holdout_fraction: 0.1,
            hidden: 64,
        }
    }
}

/// A behavior-cloned Gaussian policy head (mean trained by regression; the
/// σ head is left at initialization for later SAC fine-tuning).
pub struct BcPolicy {
    pub store: ParamStore,
    pub net: Mlp,
    pub state_dim: usize,
    pub act_dim: usize,
}

impl BcPolicy {
    pub fn mean_action(&self, state: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let s = tape.constant(Array2::from_shape_vec((1, state.len()), state.to_vec()).unwrap());
        let out = self.net.forward(&mut tape, &self.store, s);
        (0..self.act_dim).map(|j| tape.value(out)[[0, j]]).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BcMetrics {
    pub step: usize,
    pub train_mse: f64,
}

/// Supervised regression of single-step actions on observations. Returns
/// the trained policy, the per-step loss log, and held-out MSE.
pub fn train_bc(
    archive: &DatasetArchive,
    cfg: &BcConfig,
) -> Result<(BcPolicy, Vec<BcMetrics>, f64)> {
    archive.validate()?;
    if archive.is_empty() {
        return Err(Error::Validation("empty archive".into()));
    }
    let state_dim = archive.trajectories[0].observations.flat_dim();
    let act_dim = archive.trajectories[0].act_dim();
    let n_holdout = ((archive.len() as f64 * cfg.holdout_fraction).ceil() as usize)
        .min(archive.len().saturating_sub(1));
    let split = archive.len() - n_holdout;

    let collect_pairs = |trajs: &[extract_core::Trajectory]| -> (Array2<f64>, Array2<f64>) {
        let total: usize = trajs.iter().map(|t| t.len()).sum();
        let mut states = Array2::zeros((total, state_dim));
        let mut actions = Array2::zeros((total, act_dim));
        let mut row = 0;
        for traj in trajs {
            for t in 0..traj.len() {
                states
                    .row_mut(row)
                    .assign(&traj.observations.flat_row(t).mapv(|v| v as f64));
                for j in 0..act_dim {
                    actions[[row, j]] = traj.actions[[t, j]] as f64;
                }
                row += 1;
            }
        }
        (states, actions)
    };
    let (train_s, train_a) = collect_pairs(&archive.trajectories[..split]);
    let (hold_s, hold_a) = collect_pairs(&archive.trajectories[split..]);

    let mut store = ParamStore::new();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "bc"));
    let net = Mlp::new(
        &mut store,
        "policy",
        &[state_dim, cfg.hidden, cfg.hidden, 2 * act_dim],
        &mut rng,
    );
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            clip_norm: Some(1.0),
            ..Default::default()
        },
        net.param_ids(),
        &store,
    );
    let n = train_s.nrows();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..n)).collect();
        let mut sb = Array2::zeros((idx.len(), state_dim));
        let mut ab = Array2::zeros((idx.len(), act_dim));
        for (r, &i) in idx.iter().enumerate() {
            sb.row_mut(r).assign(&train_s.row(i));
            ab.row_mut(r).assign(&train_a.row(i));
        }
        store.zero_grads();
        let mut tape = Tape::new();
        let s = tape.constant(sb);
        let out = net.forward(&mut tape, &store, s);
        let mu = tape.slice_cols(out, 0, act_dim);
        let target = tape.constant(ab);
        let diff = tape.sub(mu, target);
        let sq = tape.square(diff);
        let loss = tape.mean_all(sq);
        let loss_v = tape.scalar(loss);
        if !loss_v.is_finite() {
            return Err(Error::Numerical(format!("BC diverged at step {step}")));
        }
        tape.backward(loss, &mut store);
        adam.step(&mut store);
        log.push(BcMetrics {
            step,
            train_mse: loss_v,
        });
    }
    let policy = BcPolicy {
        store,
        net,
        state_dim,
        act_dim,
    };
    let holdout_mse = if hold_s.nrows() > 0 {
        let mut tape = Tape::new();
        let s = tape.constant(hold_s);
        let out = policy.net.forward(&mut tape, &policy.store, s);
        let mu = tape.slice_cols(out, 0, act_dim);
        let target = tape.constant(hold_a);
        let diff = tape.sub(mu, target);
        let sq = tape.square(diff);
        let loss = tape.mean_all(sq);
        tape.scalar(loss)
    } else {
        f64::NAN
    };
    Ok((policy, log, holdout_mse))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Spirl,
    Bc,
    Sac,
}

impl std::fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaselineMethod::Spirl => write!(f, "spirl"),
            BaselineMethod::Bc => write!(f, "bc"),
            BaselineMethod::Sac => write!(f, "sac"),
        }
    }
}

/// Pre-trained inputs for the baseline RL stage.
pub enum BaselineInputs<'a> {
    Spirl(&'a SkillModel),
    Bc(&'a BcPolicy),
    None,
}

/// Runs online RL for one baseline with the shared logging schema.
/// SPiRL runs the skill learner with fixed-length execution; BC fine-tunes
/// with flat SAC from the cloned policy; SAC trains flat from scratch.
pub fn run_baseline_rl(
    method: BaselineMethod,
    env_config: &StationWorldConfig,
    task: &TaskSpec,
    inputs: BaselineInputs<'_>,
    rl: RlConfig,
    sac: FlatSacConfig,
) -> Result<(Option<SkillRlLearner>, Option<FlatSacLearner>, Vec<RlLogRecord>)> {
    match (method, inputs) {
        (BaselineMethod::Spirl, BaselineInputs::Spirl(model)) => {
            let mut cfg = rl;
            cfg.fixed_skill_len = Some(model.cfg.max_len);
            let (learner, log) = rl_train(env_config, task, model, cfg, "spirl")?;
            Ok((Some(learner), None, log))
        }
        (BaselineMethod::Bc, BaselineInputs::Bc(policy)) => {
            let ids = policy.net.param_ids();
            let (learner, log) = flat_sac_train(
                env_config,
                task,
                sac,
                Some((&policy.store, &ids)),
                "bc",
            )?;
            Ok((None, Some(learner), log))
        }
        (BaselineMethod::Sac, BaselineInputs::None) => {
            let (learner, log) = flat_sac_train(env_config, task, sac, None, "sac")?;
            Ok((None, Some(learner), log))
        }
        _ => Err(Error::InvalidArgument(
            "baseline method does not match supplied pre-trained inputs".into(),
        )),
    }
}
