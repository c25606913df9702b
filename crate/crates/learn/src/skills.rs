//! Offline skill learning: a recurrent argument encoder `q(z|ā,d)`, an
//! autoregressive action decoder with a per-step progress head, and the two
//! state-conditioned priors (`p_d(d|s)` discrete, `p_z(z|s,d)` continuous),
//! trained jointly on windowed skill segments. The continuous prior is
//! trained on a stop-gradient of the latent so prior updates never shape the
//! encoder.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use extract_core::data::{sample_window, SkillSegment};
use extract_core::error::{Error, Result};
use extract_core::rng::{next_standard_normal, rng_from_seed};
use extract_core::segment::SkillLabeledDataset;
use extract_nn::{Adam, AdamConfig, GruCell, Linear, Mlp, ParamId, ParamStore, Tape, Var};

use crate::kl::{gaussian_nll_rows, kl_gaussian_rows};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SkillModelConfig {
    /// Width of the flattened observation (plus context when present).
    pub state_dim: usize,
    pub act_dim: usize,
    pub k: usize,
    pub z_dim: usize,
    pub beta: f64,
    pub max_len: usize,
    pub rnn_hidden: usize,
    pub mlp_hidden: usize,
    /// When false the decoder's progress output is ignored by the loss and
    /// execution runs for a fixed length (the SPiRL-style configuration).
    pub progress_head: bool,
    /// Feed ground-truth previous actions into the decoder during training
    /// (teacher forcing) instead of its own outputs. Off by default so the
    /// training-time conditioning matches open-loop execution.
    pub teacher_forcing: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub seed: u64,
}

impl SkillModelConfig {
    pub fn new(state_dim: usize, act_dim: usize, k: usize) -> Self {
        Self {
            state_dim,
            act_dim,
            k,
            z_dim: 5,
            beta: 1e-3,
            max_len: 30,
            rnn_hidden: 64,
            mlp_hidden: 64,
            progress_head: true,
            teacher_forcing: false,
            sigma_min: 1e-4,
            sigma_max: 10.0,
            seed: 0,
        }
    }
}

/// Raw-σ bias at initialization; maps to σ ≈ 0.3 under the 1e-4..10 bounds.
pub const RAW_SIGMA_INIT: f64 = -3.5;

/// Bounded standard deviation: `σ_min + (σ_max − σ_min)·sigmoid(raw)`.
/// Shared by the encoder, priors, and policies so prior-initialized policy
/// heads are bit-compatible.
pub fn sigma_from_raw(tape: &mut Tape, raw: Var, sigma_min: f64, sigma_max: f64) -> Var {
    let s = tape.sigmoid(raw);
    let scaled = tape.mul_scalar(s, sigma_max - sigma_min);
    tape.add_scalar(scaled, sigma_min)
}

#[derive(Debug, Clone)]
pub struct SkillVae {
    pub enc_gru: GruCell,
    pub enc_head: Linear,
    pub dec_gru: GruCell,
    pub dec_head: Mlp,
}

impl SkillVae {
    // Encoder and decoder both receive a normalized step-position scalar
    // ((t+1)/max_len) alongside their inputs, so window length is easy to
    // carry through z and the progress head reduces to a smooth function of
    // position. The decoder head is a small MLP: the progress output is a
    // ratio of position to inferred length, which one linear layer cannot
    // express.
    fn new(store: &mut ParamStore, cfg: &SkillModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let enc_in = cfg.act_dim + cfg.k + 1;
        let dec_in = cfg.act_dim + cfg.z_dim + cfg.k + 1;
        Self {
            enc_gru: GruCell::new(store, "vae.enc.gru", enc_in, cfg.rnn_hidden, rng),
            enc_head: Linear::new(store, "vae.enc.head", cfg.rnn_hidden, 2 * cfg.z_dim, rng),
            dec_gru: GruCell::new(store, "vae.dec.gru", dec_in, cfg.rnn_hidden, rng),
            dec_head: Mlp::new(
                store,
                "vae.dec.head",
                &[cfg.rnn_hidden, cfg.mlp_hidden, cfg.act_dim + 1],
                rng,
            ),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.enc_gru.param_ids();
        ids.extend(self.enc_head.param_ids());
        ids.extend(self.dec_gru.param_ids());
        ids.extend(self.dec_head.param_ids());
        ids
    }

    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.enc_gru.param_ids();
        ids.extend(self.enc_head.param_ids());
        ids
    }
}

#[derive(Debug, Clone)]
pub struct SkillPriors {
    pub pd: Mlp,
    pub pz: Mlp,
}

impl SkillPriors {
    fn new(store: &mut ParamStore, cfg: &SkillModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.mlp_hidden;
        Self {
            pd: Mlp::new(store, "priors.pd", &[cfg.state_dim, h, h, cfg.k], rng),
            pz: Mlp::new(
                store,
                "priors.pz",
                &[cfg.state_dim + cfg.k, h, h, 2 * cfg.z_dim],
                rng,
            ),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.pd.param_ids();
        ids.extend(self.pz.param_ids());
        ids
    }
}

/// The full offline model: VAE + priors sharing one parameter store.
#[derive(Debug, Clone)]
pub struct SkillModel {
    pub cfg: SkillModelConfig,
    pub store: ParamStore,
    pub vae: SkillVae,
    pub priors: SkillPriors,
}

impl SkillModel {
    pub fn new(cfg: SkillModelConfig) -> Self {
        let mut store = ParamStore::new();
        let mut rng = rng_from_seed(extract_core::rng::derive_seed(cfg.seed, "skill-model"));
        let vae = SkillVae::new(&mut store, &cfg, &mut rng);
        let priors = SkillPriors::new(&mut store, &cfg, &mut rng);
        // Start the σ heads small (≈0.3 instead of the mid-range ≈5) so the
        // latent is informative from the first updates.
        let enc_bias = vae.enc_head.b;
        for j in cfg.z_dim..2 * cfg.z_dim {
            store.value_mut(enc_bias)[[0, j]] = RAW_SIGMA_INIT;
        }
        let pz_bias = priors.pz.layers.last().expect("non-empty mlp").b;
        for j in cfg.z_dim..2 * cfg.z_dim {
            store.value_mut(pz_bias)[[0, j]] = RAW_SIGMA_INIT;
        }
        Self {
            cfg,
            store,
            vae,
            priors,
        }
    }

    pub fn one_hot(&self, d: usize) -> Array2<f64> {
        let mut row = Array2::zeros((1, self.cfg.k));
        row[[0, d]] = 1.0;
        row
    }

    /// Encoder forward over one action window; returns `(z, μ, σ)` with the
    /// reparameterized sample drawn from `rng` (or `z = μ` when `rng` is
    /// `None`, the evaluation mode).
    pub fn encode(
        &self,
        actions: &Array2<f64>,
        d: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = actions.nrows();
        if n == 0 || n > self.cfg.max_len {
            return Err(Error::InvalidArgument(format!(
                "encode: window length {n} outside [1, {}]; window-sample first",
                self.cfg.max_len
            )));
        }
        if d >= self.cfg.k {
            return Err(Error::InvalidArgument(format!(
                "encode: skill id {d} out of range [0, {})",
                self.cfg.k
            )));
        }
        let mut tape = Tape::new();
        let onehot = self.one_hot(d);
        let mut h = self.vae.enc_gru.initial_state(&mut tape, 1);
        for t in 0..n {
            let mut input = Array2::zeros((1, self.cfg.act_dim + self.cfg.k + 1));
            for j in 0..self.cfg.act_dim {
                input[[0, j]] = actions[[t, j]];
            }
            for j in 0..self.cfg.k {
                input[[0, self.cfg.act_dim + j]] = onehot[[0, j]];
            }
            input[[0, self.cfg.act_dim + self.cfg.k]] = (t + 1) as f64 / self.cfg.max_len as f64;
            let x = tape.constant(input);
            h = self.vae.enc_gru.step(&mut tape, &self.store, x, h);
        }
        let params = self.vae.enc_head.forward(&mut tape, &self.store, h);
        let mu = tape.slice_cols(params, 0, self.cfg.z_dim);
        let raw = tape.slice_cols(params, self.cfg.z_dim, 2 * self.cfg.z_dim);
        let sigma = sigma_from_raw(&mut tape, raw, self.cfg.sigma_min, self.cfg.sigma_max);
        let mu_v: Vec<f64> = tape.value(mu).iter().copied().collect();
        let sigma_v: Vec<f64> = tape.value(sigma).iter().copied().collect();
        let z = match rng {
            Some(rng) => mu_v
                .iter()
                .zip(sigma_v.iter())
                .map(|(m, s)| m + s * next_standard_normal(rng))
                .collect(),
            None => mu_v.clone(),
        };
        Ok((z, mu_v, sigma_v))
    }

    /// Free-running decoder rollout: action means and progress values for
    /// `n` steps given `(z, d)`. Deterministic; open-loop in observations,
    /// with the zero action as the initial autoregressive input.
    pub fn decode(&self, z: &[f64], d: usize, n: usize) -> Result<(Array2<f64>, Vec<f64>)> {
        if n == 0 || n > self.cfg.max_len {
            return Err(Error::InvalidArgument(format!(
                "decode: length {n} outside [1, {}]",
                self.cfg.max_len
            )));
        }
        if z.len() != self.cfg.z_dim {
            return Err(Error::Dimension(format!(
                "decode: z width {} != {}",
                z.len(),
                self.cfg.z_dim
            )));
        }
        let mut tape = Tape::new();
        let onehot = self.one_hot(d);
        let mut h = self.vae.dec_gru.initial_state(&mut tape, 1);
        let mut prev: Option<Var> = None;
        let mut actions = Array2::zeros((n, self.cfg.act_dim));
        let mut progress = Vec::with_capacity(n);
        for t in 0..n {
            let prev_part = match prev {
                Some(v) => v,
                None => tape.constant(Array2::zeros((1, self.cfg.act_dim))),
            };
            let z_part = tape.constant(Array2::from_shape_vec((1, z.len()), z.to_vec()).unwrap());
            let d_part = tape.constant(onehot.clone());
            let pos = tape.constant(Array2::from_elem(
                (1, 1),
                (t + 1) as f64 / self.cfg.max_len as f64,
            ));
            let input = tape.concat_cols(&[prev_part, z_part, d_part, pos]);
            h = self.vae.dec_gru.step(&mut tape, &self.store, input, h);
            let out = self.vae.dec_head.forward(&mut tape, &self.store, h);
            let act = tape.slice_cols(out, 0, self.cfg.act_dim);
            let prog = tape.slice_cols(out, self.cfg.act_dim, self.cfg.act_dim + 1);
            for j in 0..self.cfg.act_dim {
                actions[[t, j]] = tape.value(act)[[0, j]];
            }
            progress.push(tape.value(prog)[[0, 0]]);
            prev = Some(act);
        }
        Ok((actions, progress))
    }

    /// Frozen evaluation of both priors at a single state: K categorical
    /// logits and per-skill Gaussian `(μ, σ)` parameters.
    pub fn prior_log_probs(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<(Vec<f64>, Vec<f64>)>)> {
        if state.len() != self.cfg.state_dim {
            return Err(Error::Dimension(format!(
                "prior_log_probs: state width {} != {}",
                state.len(),
                self.cfg.state_dim
            )));
        }
        let mut tape = Tape::new();
        let s = tape.constant(Array2::from_shape_vec((1, state.len()), state.to_vec()).unwrap());
        let logits = self.priors.pd.forward(&mut tape, &self.store, s);
        let logits_v: Vec<f64> = tape.value(logits).iter().copied().collect();
        let mut gaussians = Vec::with_capacity(self.cfg.k);
        for d in 0..self.cfg.k {
            let onehot = tape.constant(self.one_hot(d));
            let input = tape.concat_cols(&[s, onehot]);
            let out = self.priors.pz.forward(&mut tape, &self.store, input);
            let mu = tape.slice_cols(out, 0, self.cfg.z_dim);
            let raw = tape.slice_cols(out, self.cfg.z_dim, 2 * self.cfg.z_dim);
            let sigma = sigma_from_raw(&mut tape, raw, self.cfg.sigma_min, self.cfg.sigma_max);
            gaussians.push((
                tape.value(mu).iter().copied().collect(),
                tape.value(sigma).iter().copied().collect(),
            ));
        }
        Ok((logits_v, gaussians))
    }
}

/// One training window, already flattened to f64.
#[derive(Debug, Clone)]
pub struct TrainItem {
    /// `[n, act_dim]`, `1 ≤ n ≤ max_len`.
    pub actions: Array2<f64>,
    pub d: usize,
    /// Observation at the window's first timestep (plus context).
    pub state: Vec<f64>,
}

impl TrainItem {
    pub fn from_segment<R: Rng>(
        segment: &SkillSegment,
        max_len: usize,
        rng: &mut R,
    ) -> Self {
        let window = sample_window(segment, max_len, rng);
        let actions = window.actions.mapv(|v| v as f64);
        let mut state: Vec<f64> = window.first_obs.iter().map(|&v| v as f64).collect();
        if let Some(ctx) = &segment.context {
            state.extend(ctx.iter().map(|&v| v as f64));
        }
        Self {
            actions,
            d: segment.label as usize,
            state,
        }
    }
}

/// Per-component values of one objective evaluation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElboParts {
    pub total: f64,
    pub action_rec: f64,
    pub progress: f64,
    pub encoder_kl: f64,
    pub discrete_prior_nll: f64,
    pub continuous_prior_nll: f64,
}

/// Tape nodes of the objective components, for component-wise backward
/// passes in tests (e.g. the stop-gradient assertion).
#[derive(Debug, Clone, Copy)]
pub struct ElboVars {
    pub total: Var,
    pub action_rec: Var,
    pub progress: Var,
    pub encoder_kl: Var,
    pub discrete_prior_nll: Var,
    pub continuous_prior_nll: Var,
    /// The reparameterized latent `[B, z_dim]`.
    pub z: Var,
}

/// Differentiable objective over a batch; returns the scalar loss var and
/// the component scalars. `eps` is the `[B, z_dim]` reparameterization
/// noise, passed in so gradient checks can hold it fixed.
pub fn elbo_loss(
    tape: &mut Tape,
    model: &SkillModel,
    items: &[TrainItem],
    eps: &Array2<f64>,
) -> Result<(Var, ElboParts)> {
    let (vars, parts) = elbo_loss_vars(tape, model, items, eps)?;
    Ok((vars.total, parts))
}

/// As `elbo_loss` but exposing every component node.
pub fn elbo_loss_vars(
    tape: &mut Tape,
    model: &SkillModel,
    items: &[TrainItem],
    eps: &Array2<f64>,
) -> Result<(ElboVars, ElboParts)> {
    elbo_loss_vars_with(tape, model, items, eps, None)
}

/// As `elbo_loss_vars`, optionally substituting a fixed constant for the
/// stop-gradient latent in the continuous-prior term. The stop-gradient
/// makes that term's gradient field equal to the gradient of the objective
/// with `sg(z)` held constant, so finite-difference oracles must evaluate
/// with `frozen_z` pinned to the base-point latent.
pub fn elbo_loss_vars_with(
    tape: &mut Tape,
    model: &SkillModel,
    items: &[TrainItem],
    eps: &Array2<f64>,
    frozen_z: Option<&Array2<f64>>,
) -> Result<(ElboVars, ElboParts)> {
    let cfg = &model.cfg;
    let b = items.len();
    if b == 0 {
        return Err(Error::InvalidArgument("elbo_loss: empty batch".into()));
    }
    for item in items {
        let n = item.actions.nrows();
        if n == 0 || n > cfg.max_len {
            return Err(Error::InvalidArgument(format!(
                "elbo_loss: window length {n} outside [1, {}]",
                cfg.max_len
            )));
        }
        if item.state.len() != cfg.state_dim {
            return Err(Error::Dimension(format!(
                "elbo_loss: state width {} != {}",
                item.state.len(),
                cfg.state_dim
            )));
        }
        if item.d >= cfg.k {
            return Err(Error::InvalidArgument(format!(
                "elbo_loss: skill id {} out of range",
                item.d
            )));
        }
    }
    let t_max = items.iter().map(|i| i.actions.nrows()).max().unwrap();

    // Constant inputs.
    let mut onehot = Array2::zeros((b, cfg.k));
    let mut state = Array2::zeros((b, cfg.state_dim));
    for (i, item) in items.iter().enumerate() {
        onehot[[i, item.d]] = 1.0;
        for (j, &v) in item.state.iter().enumerate() {
            state[[i, j]] = v;
        }
    }

    // ----- encoder -----
    let mut h = model.vae.enc_gru.initial_state(tape, b);
    let mut h_final: Option<Var> = None;
    for t in 0..t_max {
        let mut input = Array2::zeros((b, cfg.act_dim + cfg.k + 1));
        let mut selector = Array2::zeros((b, cfg.rnn_hidden));
        for (i, item) in items.iter().enumerate() {
            let n = item.actions.nrows();
            if t < n {
                for j in 0..cfg.act_dim {
                    input[[i, j]] = item.actions[[t, j]];
                }
            }
            input[[i, cfg.act_dim + item.d]] = 1.0;
            input[[i, cfg.act_dim + cfg.k]] = (t + 1) as f64 / cfg.max_len as f64;
            if t + 1 == n {
                for j in 0..cfg.rnn_hidden {
                    selector[[i, j]] = 1.0;
                }
            }
        }
        let x = tape.constant(input);
        h = model.vae.enc_gru.step(tape, &model.store, x, h);
        let sel = tape.constant(selector);
        let picked = tape.mul(h, sel);
        h_final = Some(match h_final {
            Some(acc) => tape.add(acc, picked),
            None => picked,
        });
    }
    let h_final = h_final.expect("t_max >= 1");
    let enc_out = model.vae.enc_head.forward(tape, &model.store, h_final);
    let mu_q = tape.slice_cols(enc_out, 0, cfg.z_dim);
    let raw_q = tape.slice_cols(enc_out, cfg.z_dim, 2 * cfg.z_dim);
    let sigma_q = sigma_from_raw(tape, raw_q, cfg.sigma_min, cfg.sigma_max);

    let eps_v = tape.constant(eps.clone());
    let noise = tape.mul(sigma_q, eps_v);
    let z = tape.add(mu_q, noise);

    // ----- decoder (free-running unless teacher forcing is on) -----
    let d_const = tape.constant(onehot.clone());
    let mut hd = model.vae.dec_gru.initial_state(tape, b);
    let mut rec_acc: Option<Var> = None;
    let mut prog_acc: Option<Var> = None;
    let mut prev_decoded: Option<Var> = None;
    for t in 0..t_max {
        let mut prev = Array2::zeros((b, cfg.act_dim));
        let mut target = Array2::zeros((b, cfg.act_dim));
        let mut mask = Array2::zeros((b, 1));
        let mut prog_target = Array2::zeros((b, 1));
        for (i, item) in items.iter().enumerate() {
            let n = item.actions.nrows();
            if t < n {
                mask[[i, 0]] = 1.0;
                prog_target[[i, 0]] = (t + 1) as f64 / n as f64;
                for j in 0..cfg.act_dim {
                    target[[i, j]] = item.actions[[t, j]];
                }
                if t > 0 {
                    for j in 0..cfg.act_dim {
                        prev[[i, j]] = item.actions[[t - 1, j]];
                    }
                }
            }
        }
        let prev_v = match (cfg.teacher_forcing, prev_decoded, t) {
            (_, _, 0) => tape.constant(Array2::zeros((b, cfg.act_dim))),
            (true, _, _) => tape.constant(prev),
            (false, Some(v), _) => v,
            (false, None, _) => unreachable!("prev_decoded set after step 0"),
        };
        let pos = tape.constant(Array2::from_elem(
            (b, 1),
            (t + 1) as f64 / cfg.max_len as f64,
        ));
        let input = tape.concat_cols(&[prev_v, z, d_const, pos]);
        hd = model.vae.dec_gru.step(tape, &model.store, input, hd);
        let out = model.vae.dec_head.forward(tape, &model.store, hd);
        let act_mean = tape.slice_cols(out, 0, cfg.act_dim);
        prev_decoded = Some(act_mean);
        let target_v = tape.constant(target);
        let diff = tape.sub(act_mean, target_v);
        let sq = tape.square(diff);
        let row_sq = tape.sum_cols(sq);
        let half = tape.mul_scalar(row_sq, 0.5);
        let mask_v = tape.constant(mask);
        let masked = tape.mul(half, mask_v);
        rec_acc = Some(match rec_acc {
            Some(acc) => tape.add(acc, masked),
            None => masked,
        });
        if cfg.progress_head {
            let prog = tape.slice_cols(out, cfg.act_dim, cfg.act_dim + 1);
            let pt = tape.constant(prog_target);
            let pdiff = tape.sub(prog, pt);
            let psq = tape.square(pdiff);
            let pmasked = tape.mul(psq, mask_v);
            prog_acc = Some(match prog_acc {
                Some(acc) => tape.add(acc, pmasked),
                None => pmasked,
            });
        }
    }
    let rec = tape.mean_all(rec_acc.expect("t_max >= 1"));
    let prog = match prog_acc {
        Some(acc) => tape.mean_all(acc),
        None => tape.scalar_const(0.0),
    };

    // ----- encoder KL against N(0, I) -----
    let zeros = tape.constant(Array2::zeros((b, cfg.z_dim)));
    let ones = tape.constant(Array2::from_elem((b, cfg.z_dim), 1.0));
    let kl_rows = kl_gaussian_rows(tape, mu_q, sigma_q, zeros, ones);
    let encoder_kl = tape.mean_all(kl_rows);

    // ----- discrete prior NLL -----
    let s_const = tape.constant(state);
    let logits = model.priors.pd.forward(tape, &model.store, s_const);
    let logp = tape.log_softmax(logits);
    let d_mask = tape.constant(onehot);
    let picked = tape.mul(logp, d_mask);
    let picked_rows = tape.sum_cols(picked);
    let picked_mean = tape.mean_all(picked_rows);
    let pd_nll = tape.neg(picked_mean);

    // ----- continuous prior NLL on the stopped latent -----
    let z_stopped = match frozen_z {
        Some(zf) => tape.constant(zf.clone()),
        None => tape.detach(z),
    };
    let pz_in = tape.concat_cols(&[s_const, d_mask]);
    let pz_out = model.priors.pz.forward(tape, &model.store, pz_in);
    let mu_p = tape.slice_cols(pz_out, 0, cfg.z_dim);
    let raw_p = tape.slice_cols(pz_out, cfg.z_dim, 2 * cfg.z_dim);
    let sigma_p = sigma_from_raw(tape, raw_p, cfg.sigma_min, cfg.sigma_max);
    let pz_rows = gaussian_nll_rows(tape, z_stopped, mu_p, sigma_p);
    let pz_nll = tape.mean_all(pz_rows);

    // ----- total -----
    let beta_kl = tape.mul_scalar(encoder_kl, cfg.beta);
    let t1 = tape.add(rec, prog);
    let t2 = tape.add(t1, beta_kl);
    let t3 = tape.add(t2, pd_nll);
    let total = tape.add(t3, pz_nll);

    let parts = ElboParts {
        total: tape.scalar(total),
        action_rec: tape.scalar(rec),
        progress: tape.scalar(prog),
        encoder_kl: tape.scalar(encoder_kl),
        discrete_prior_nll: tape.scalar(pd_nll),
        continuous_prior_nll: tape.scalar(pz_nll),
    };
    for (name, v) in [
        ("action_rec", parts.action_rec),
        ("progress", parts.progress),
        ("encoder_kl", parts.encoder_kl),
        ("discrete_prior_nll", parts.discrete_prior_nll),
        ("continuous_prior_nll", parts.continuous_prior_nll),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!(
                "elbo component '{name}' is non-finite ({v})"
            )));
        }
    }
    Ok((
        ElboVars {
            total,
            action_rec: rec,
            progress: prog,
            encoder_kl,
            discrete_prior_nll: pd_nll,
            continuous_prior_nll: pz_nll,
            z,
        },
        parts,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            grad_clip: 1.0,
        }
    }
}

/// One metric-log record per optimization step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub total: f64,
    pub action_rec: f64,
    pub progress: f64,
    pub encoder_kl: f64,
    pub discrete_prior_nll: f64,
    pub continuous_prior_nll: f64,
}

/// Trains all components jointly on windowed segments for `steps`
/// iterations. Batches sample segments uniformly with replacement. Aborts
/// on a non-finite loss without applying the offending update.
pub fn train_offline(
    model: &mut SkillModel,
    dataset: &SkillLabeledDataset,
    train: &TrainConfig,
    mut on_step: Option<&mut dyn FnMut(&SkillModel, &StepMetrics)>,
) -> Result<Vec<StepMetrics>> {
    if dataset.segments.is_empty() {
        return Err(Error::Validation("training dataset has no segments".into()));
    }
    let group: Vec<ParamId> = model.store.ids().collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: train.lr,
            clip_norm: Some(train.grad_clip),
            ..Default::default()
        },
        group,
        &model.store,
    );
    let mut rng = rng_from_seed(extract_core::rng::derive_seed(train.seed, "train-offline"));
    let mut log = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let items: Vec<TrainItem> = (0..train.batch_size)
            .map(|_| {
                let idx = rng.gen_range(0..dataset.segments.len());
                TrainItem::from_segment(&dataset.segments[idx], model.cfg.max_len, &mut rng)
            })
            .collect();
        let eps = Array2::from_shape_fn((items.len(), model.cfg.z_dim), |_| {
            next_standard_normal(&mut rng)
        });
        model.store.zero_grads();
        let mut tape = Tape::new();
        let (loss, parts) = elbo_loss(&mut tape, model, &items, &eps)?;
        if !parts.total.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged at step {step}: loss {}",
                parts.total
            )));
        }
        tape.backward(loss, &mut model.store);
        adam.step(&mut model.store);
        let metrics = StepMetrics {
            step,
            total: parts.total,
            action_rec: parts.action_rec,
            progress: parts.progress,
            encoder_kl: parts.encoder_kl,
            discrete_prior_nll: parts.discrete_prior_nll,
            continuous_prior_nll: parts.continuous_prior_nll,
        };
        if let Some(cb) = on_step.as_deref_mut() {
            cb(model, &metrics);
        }
        log.push(metrics);
    }
    Ok(log)
}

/// Fine-tuning is the same objective on a (relabeled) target dataset; all
/// components update.
pub fn finetune(
    model: &mut SkillModel,
    target_dataset: &SkillLabeledDataset,
    train: &TrainConfig,
) -> Result<Vec<StepMetrics>> {
    if train.steps == 0 {
        return Ok(Vec::new());
    }
    train_offline(model, target_dataset, train, None)
}

// ----- evaluation helpers -----

fn eval_items(
    dataset: &SkillLabeledDataset,
    max_len: usize,
    seed: u64,
    cap: usize,
) -> Vec<(TrainItem, usize)> {
    let mut rng = rng_from_seed(extract_core::rng::derive_seed(seed, "eval-windows"));
    dataset
        .segments
        .iter()
        .take(cap)
        .map(|seg| {
            (
                TrainItem::from_segment(seg, max_len, &mut rng),
                seg.label as usize,
            )
        })
        .collect()
}

/// Action reconstruction MSE with `z = μ` under the model's training-time
/// conditioning (free-running by default), averaged over samples, steps,
/// and action dimensions.
pub fn eval_reconstruction_mse(
    model: &SkillModel,
    dataset: &SkillLabeledDataset,
    seed: u64,
    cap: usize,
) -> Result<f64> {
    let items = eval_items(dataset, model.cfg.max_len, seed, cap);
    if items.is_empty() {
        return Err(Error::Validation("no segments to evaluate".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (item, _) in &items {
        let (_, mu, _) = model.encode(&item.actions, item.d, None)?;
        let n = item.actions.nrows();
        let recon = if model.cfg.teacher_forcing {
            decode_teacher_forced(model, &mu, item.d, &item.actions)?
        } else {
            model.decode(&mu, item.d, n)?.0
        };
        for t in 0..n {
            for j in 0..model.cfg.act_dim {
                let e = recon[[t, j]] - item.actions[[t, j]];
                total += e * e;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Decoder rollout with teacher-forced inputs.
fn decode_teacher_forced(
    model: &SkillModel,
    z: &[f64],
    d: usize,
    actions: &Array2<f64>,
) -> Result<Array2<f64>> {
    let n = actions.nrows();
    let cfg = &model.cfg;
    let mut tape = Tape::new();
    let onehot = model.one_hot(d);
    let mut h = model.vae.dec_gru.initial_state(&mut tape, 1);
    let mut out_actions = Array2::zeros((n, cfg.act_dim));
    for t in 0..n {
        let mut input = Array2::zeros((1, cfg.act_dim + cfg.z_dim + cfg.k + 1));
        if t > 0 {
            for j in 0..cfg.act_dim {
                input[[0, j]] = actions[[t - 1, j]];
            }
        }
        for j in 0..cfg.z_dim {
            input[[0, cfg.act_dim + j]] = z[j];
        }
        for j in 0..cfg.k {
            input[[0, cfg.act_dim + cfg.z_dim + j]] = onehot[[0, j]];
        }
        input[[0, cfg.act_dim + cfg.z_dim + cfg.k]] = (t + 1) as f64 / cfg.max_len as f64;
        let x = tape.constant(input);
        h = model.vae.dec_gru.step(&mut tape, &model.store, x, h);
        let out = model.vae.dec_head.forward(&mut tape, &model.store, h);
        for j in 0..cfg.act_dim {
            out_actions[[t, j]] = tape.value(out)[[0, j]];
        }
    }
    Ok(out_actions)
}

/// Fraction of segments whose discrete-prior argmax matches the segment
/// label, predicting from each sampled window's first observation.
pub fn eval_prior_top1(
    model: &SkillModel,
    dataset: &SkillLabeledDataset,
    seed: u64,
    cap: usize,
) -> Result<f64> {
    let items = eval_items(dataset, model.cfg.max_len, seed, cap);
    if items.is_empty() {
        return Err(Error::Validation("no segments to evaluate".into()));
    }
    let mut hits = 0usize;
    for (item, label) in &items {
        let (logits, _) = model.prior_log_probs(&item.state)?;
        let mut best = 0usize;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        if best == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}

/// Fraction of segments whose free-running decode reaches a final progress
/// value within `tol` of 1.0.
pub fn eval_progress_final(
    model: &SkillModel,
    dataset: &SkillLabeledDataset,
    seed: u64,
    cap: usize,
    tol: f64,
) -> Result<f64> {
    let items = eval_items(dataset, model.cfg.max_len, seed, cap);
    if items.is_empty() {
        return Err(Error::Validation("no segments to evaluate".into()));
    }
    let mut hits = 0usize;
    for (item, _) in &items {
        let (_, mu, _) = model.encode(&item.actions, item.d, None)?;
        let n = item.actions.nrows();
        let (_, progress) = model.decode(&mu, item.d, n)?;
        if (progress[n - 1] - 1.0).abs() <= tol {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}
