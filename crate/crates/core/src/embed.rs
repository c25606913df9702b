//! Per-timestep embedding-difference features from a pluggable observation
//! embedder. The first difference is copied from the second so every
//! timestep carries a feature vector.

use ndarray::Array2;

use crate::data::{DatasetArchive, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{fnv1a64, next_standard_normal, rng_from_seed};

/// Everything an embedder may look at for one timestep. `descriptor` is the
/// hidden behavior channel written by scripted demo generators; ordinary
/// embedders ignore it.
#[derive(Debug, Clone, Copy)]
pub struct ObsInput<'a> {
    pub observation: &'a [f32],
    pub descriptor: Option<&'a [f32]>,
}

/// A frozen observation embedder. Implementations must be deterministic:
/// repeated calls on the same input are bit-identical.
pub trait Embedder {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, input: ObsInput<'_>) -> Result<Vec<f32>>;
}

/// Desk-scale stand-in for a frozen vision encoder. Reads the environment's
/// ground-truth behavior descriptor `[one_hot(primitive); progress; station
/// position]` and emits `M·one_hot ⊕ c·progress ⊕ position` plus small
/// seeded noise, with a fixed random mixing matrix `M`. Differences of these
/// embeddings then cluster by primitive type regardless of layout.
pub struct SyntheticOracleEmbedder {
    dim: usize,
    n_primitives: usize,
    noise_scale: f64,
    seed: u64,
    /// `[dim - n_extra, n_primitives]` fixed mixing matrix.
    mixing: Array2<f64>,
    progress_scale: f64,
}

impl SyntheticOracleEmbedder {
    pub const DEFAULT_DIM: usize = 32;

    /// `descriptor_dim` must equal `n_primitives + 3` (one-hot, progress,
    /// 2-d station position).
    pub fn new(dim: usize, n_primitives: usize, noise_scale: f64, seed: u64) -> Self {
        assert!(dim > n_primitives + 3, "embedding dim too small");
        let mix_rows = dim - 3;
        let mut rng = rng_from_seed(crate::rng::derive_seed(seed, "oracle-mixing"));
        let amp = 2.0;
        let mixing = Array2::from_shape_fn((mix_rows, n_primitives), |_| {
            amp * next_standard_normal(&mut rng)
        });
        Self {
            dim,
            n_primitives,
            noise_scale,
            seed,
            mixing,
            progress_scale: 1.0,
        }
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(Self::DEFAULT_DIM, 4, 0.02, seed)
    }

    fn noise_for(&self, input: &ObsInput<'_>) -> Vec<f64> {
        // Noise is a pure function of (seed, observation, descriptor) so the
        // embedder stays deterministic per input.
        let mut bytes = Vec::with_capacity(8 + input.observation.len() * 4);
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        for v in input.observation {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(desc) = input.descriptor {
            for v in desc {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut rng = rng_from_seed(fnv1a64(&bytes));
        (0..self.dim)
            .map(|_| self.noise_scale * next_standard_normal(&mut rng))
            .collect()
    }
}

impl Embedder for SyntheticOracleEmbedder {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, input: ObsInput<'_>) -> Result<Vec<f32>> {
        let desc = input.descriptor.ok_or_else(|| Error::Embedder {
            trajectory: String::new(),
            message: "synthetic oracle embedder requires a behavior descriptor channel".into(),
        })?;
        let expected = self.n_primitives + 3;
        if desc.len() != expected {
            return Err(Error::Embedder {
                trajectory: String::new(),
                message: format!(
                    "descriptor width {} != expected {}",
                    desc.len(),
                    expected
                ),
            });
        }
        let noise = self.noise_for(&input);
        let mut out = vec![0f64; self.dim];
        let mix_rows = self.dim - 3;
        for (r, row) in self.mixing.rows().into_iter().enumerate() {
            let mut acc = 0.0;
            for (c, &w) in row.iter().enumerate() {
                acc += w * desc[c] as f64;
            }
            out[r] = acc;
        }
        out[mix_rows] = self.progress_scale * desc[self.n_primitives] as f64;
        out[mix_rows + 1] = desc[self.n_primitives + 1] as f64;
        out[mix_rows + 2] = desc[self.n_primitives + 2] as f64;
        for (o, n) in out.iter_mut().zip(noise.iter()) {
            *o += n;
        }
        Ok(out.into_iter().map(|v| v as f32).collect())
    }
}

/// Embeds observations unchanged; testing aid for flat trajectories.
pub struct IdentityEmbedder {
    pub dim: usize,
}

impl Embedder for IdentityEmbedder {
    fn name(&self) -> &str {
        "identity"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, input: ObsInput<'_>) -> Result<Vec<f32>> {
        if input.observation.len() != self.dim {
            return Err(Error::Dimension(format!(
                "identity embedder: observation width {} != {}",
                input.observation.len(),
                self.dim
            )));
        }
        Ok(input.observation.to_vec())
    }
}

/// A fixed random linear map of the observation; testing aid for linearity
/// properties.
pub struct LinearEmbedder {
    weights: Array2<f32>,
}

impl LinearEmbedder {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| {
            next_standard_normal(&mut rng) as f32
        });
        Self { weights }
    }
}

impl Embedder for LinearEmbedder {
    fn name(&self) -> &str {
        "linear"
    }

    fn dim(&self) -> usize {
        self.weights.nrows()
    }

    fn embed(&self, input: ObsInput<'_>) -> Result<Vec<f32>> {
        if input.observation.len() != self.weights.ncols() {
            return Err(Error::Dimension(format!(
                "linear embedder: observation width {} != {}",
                input.observation.len(),
                self.weights.ncols()
            )));
        }
        Ok(self
            .weights
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(input.observation)
                    .map(|(w, x)| w * x)
                    .sum::<f32>()
            })
            .collect())
    }
}

/// Per-timestep embedding differences for one trajectory.
#[derive(Debug, Clone)]
pub struct EmbeddingSequence {
    pub trajectory_id: String,
    /// `[T, E]`; row 0 equals row 1.
    pub diffs: Array2<f32>,
}

/// Computes `diffs[t] = embed(obs[t]) − embed(obs[0])` for `t ≥ 1` and
/// copies row 1 into row 0 so every timestep has a feature vector.
pub fn embed_differences(traj: &Trajectory, embedder: &dyn Embedder) -> Result<EmbeddingSequence> {
    let t_len = traj.len();
    if t_len < 2 {
        return Err(Error::Validation(format!(
            "trajectory '{}': need at least 2 timesteps for differences",
            traj.id
        )));
    }
    let dim = embedder.dim();
    let attach_id = |mut e: Error| {
        if let Error::Embedder { trajectory, .. } = &mut e {
            *trajectory = traj.id.clone();
        }
        e
    };
    let embed_at = |t: usize| -> Result<Vec<f32>> {
        let obs = traj.observations.flat_row(t);
        let desc_row = traj.descriptors.as_ref().map(|d| d.row(t));
        let input = ObsInput {
            observation: obs.as_slice().expect("contiguous row"),
            descriptor: desc_row.as_ref().and_then(|r| r.as_slice()),
        };
        embedder.embed(input).map_err(attach_id)
    };
    let base = embed_at(0)?;
    if base.len() != dim {
        return Err(Error::Dimension(format!(
            "embedder '{}' returned {} values, declared dim {}",
            embedder.name(),
            base.len(),
            dim
        )));
    }
    let mut diffs = Array2::zeros((t_len, dim));
    for t in 1..t_len {
        let emb = embed_at(t)?;
        for (j, (&e, &b)) in emb.iter().zip(base.iter()).enumerate() {
            diffs[[t, j]] = e - b;
        }
    }
    let row1 = diffs.row(1).to_owned();
    diffs.row_mut(0).assign(&row1);
    if !diffs.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation(format!(
            "trajectory '{}': non-finite embedding differences",
            traj.id
        )));
    }
    Ok(EmbeddingSequence {
        trajectory_id: traj.id.clone(),
        diffs,
    })
}

/// What to difference when building extraction features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSource {
    /// A pluggable observation embedder (the default oracle path).
    Embedder,
    /// Embeddings already present in the archive.
    Precomputed,
    /// Raw action differences in place of embeddings (ablation).
    ActionDiff,
    /// Raw flat-observation differences (ablation).
    StateDiff,
}

fn diff_rows(rows: &Array2<f32>, id: &str) -> EmbeddingSequence {
    let t_len = rows.nrows();
    let mut diffs = Array2::zeros(rows.raw_dim());
    for t in 1..t_len {
        for j in 0..rows.ncols() {
            diffs[[t, j]] = rows[[t, j]] - rows[[0, j]];
        }
    }
    let row1 = diffs.row(1).to_owned();
    diffs.row_mut(0).assign(&row1);
    EmbeddingSequence {
        trajectory_id: id.to_string(),
        diffs,
    }
}

/// Computes features for one trajectory according to `source`.
pub fn features_for(
    traj: &Trajectory,
    source: EmbeddingSource,
    embedder: Option<&dyn Embedder>,
) -> Result<EmbeddingSequence> {
    match source {
        EmbeddingSource::Embedder => {
            let embedder = embedder.ok_or_else(|| {
                Error::InvalidArgument("embedding source 'embedder' requires an embedder".into())
            })?;
            embed_differences(traj, embedder)
        }
        EmbeddingSource::Precomputed => {
            let emb = traj.embeddings.as_ref().ok_or_else(|| {
                Error::MissingArtifact(format!(
                    "trajectory '{}': no precomputed embeddings in archive",
                    traj.id
                ))
            })?;
            Ok(EmbeddingSequence {
                trajectory_id: traj.id.clone(),
                diffs: emb.clone(),
            })
        }
        EmbeddingSource::ActionDiff => Ok(diff_rows(&traj.actions, &traj.id)),
        EmbeddingSource::StateDiff => {
            let t_len = traj.len();
            let dim = traj.observations.flat_dim();
            let mut rows = Array2::zeros((t_len, dim));
            for t in 0..t_len {
                rows.row_mut(t).assign(&traj.observations.flat_row(t));
            }
            Ok(diff_rows(&rows, &traj.id))
        }
    }
}

/// Attaches embedding differences to every trajectory in the archive.
///
/// With `cache` set, trajectories that already carry embeddings are reused
/// without recomputation and fresh results are written back into the
/// archive. Passing no embedder requires every trajectory to carry
/// precomputed embeddings.
pub fn embed_dataset(
    archive: &mut DatasetArchive,
    embedder: Option<&dyn Embedder>,
    cache: bool,
) -> Result<()> {
    archive.validate()?;
    let mut width: Option<usize> = None;
    for idx in 0..archive.trajectories.len() {
        let have = archive.trajectories[idx].embeddings.is_some();
        let reuse = have && (cache || embedder.is_none());
        if !reuse {
            let seq = match embedder {
                Some(e) => embed_differences(&archive.trajectories[idx], e)?,
                None => {
                    return Err(Error::MissingArtifact(format!(
                        "trajectory '{}': no embeddings and no embedder supplied",
                        archive.trajectories[idx].id
                    )))
                }
            };
            if cache || !have {
                archive.trajectories[idx].embeddings = Some(seq.diffs);
            }
        }
        let w = archive.trajectories[idx]
            .embeddings
            .as_ref()
            .expect("embeddings set above")
            .ncols();
        match width {
            None => width = Some(w),
            Some(prev) if prev != w => {
                return Err(Error::Dimension(format!(
                    "trajectory '{}': embedding width {} != {}",
                    archive.trajectories[idx].id, w, prev
                )))
            }
            _ => {}
        }
    }
    if let Some(e) = embedder {
        archive.metadata.embedder = Some(e.name().to_string());
    }
    Ok(())
}

/// Per-dimension z-score parameters fitted on a pooled feature matrix.
/// Off by default in the pipeline; provided for the standardized-features
/// variant of clustering.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    pub fn fit(pooled: &Array2<f32>) -> Self {
        let n = pooled.nrows().max(1) as f64;
        let e = pooled.ncols();
        let mut mean = vec![0f64; e];
        for row in pooled.rows() {
            for (m, &v) in mean.iter_mut().zip(row.iter()) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0f64; e];
        for row in pooled.rows() {
            for ((s, &v), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        let std: Vec<f32> = var
            .iter()
            .map(|&s| ((s / n).sqrt() as f32).max(1e-8))
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn apply(&self, rows: &Array2<f32>) -> Array2<f32> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// Convenience: all embedding-difference rows pooled over the archive, in
/// trajectory order. Returns the pooled matrix and per-trajectory offsets.
pub fn pooled_diffs(archive: &DatasetArchive) -> Result<(Array2<f32>, Vec<usize>)> {
    let width = archive.embed_dim().ok_or_else(|| {
        Error::MissingArtifact("archive has no embeddings; run embedding first".into())
    })?;
    let total: usize = archive.trajectories.iter().map(|t| t.len()).sum();
    let mut pooled = Array2::zeros((total, width));
    let mut offsets = Vec::with_capacity(archive.trajectories.len() + 1);
    let mut row = 0;
    offsets.push(0);
    for traj in &archive.trajectories {
        let emb = traj.embeddings.as_ref().ok_or_else(|| {
            Error::MissingArtifact(format!("trajectory '{}': missing embeddings", traj.id))
        })?;
        pooled
            .slice_mut(ndarray::s![row..row + emb.nrows(), ..])
            .assign(emb);
        row += emb.nrows();
        offsets.push(row);
    }
    Ok((pooled, offsets))
}
