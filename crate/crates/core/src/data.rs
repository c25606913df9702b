//! Canonical data model: trajectories, skill segments, dataset archives,
//! and window sampling. All types are immutable after construction and safe
//! to share across concurrent readers.

use ndarray::{Array1, Array2, Array4};
use rand::Rng;

use crate::error::{Error, Result};

/// Per-timestep observations of one trajectory. Flat vectors are stored as
/// f32; images are stored as raw u8 and normalized to [0, 1] on access.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    /// `[T, obs_dim]`
    Flat(Array2<f32>),
    /// `[T, H, W, C]`, values 0..=255
    Image(Array4<u8>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Flat(a) => a.nrows(),
            Observations::Image(a) => a.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of a single observation once flattened to a real vector.
    pub fn flat_dim(&self) -> usize {
        match self {
            Observations::Flat(a) => a.ncols(),
            Observations::Image(a) => a.shape()[1] * a.shape()[2] * a.shape()[3],
        }
    }

    /// Shape of one observation (`[D]` or `[H, W, C]`).
    pub fn obs_shape(&self) -> Vec<usize> {
        match self {
            Observations::Flat(a) => vec![a.ncols()],
            Observations::Image(a) => a.shape()[1..].to_vec(),
        }
    }

    /// Observation at timestep `t` as a flat f32 vector; image pixels are
    /// normalized to [0, 1].
    pub fn flat_row(&self, t: usize) -> Array1<f32> {
        match self {
            Observations::Flat(a) => a.row(t).to_owned(),
            Observations::Image(a) => {
                let view = a.index_axis(ndarray::Axis(0), t);
                Array1::from_iter(view.iter().map(|&v| v as f32 / 255.0))
            }
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            Observations::Flat(a) => a.iter().all(|v| v.is_finite()),
            Observations::Image(_) => true,
        }
    }
}

/// Ordered observation/action pairs with optional task context; the unit of
/// all dataset processing. Optional per-timestep annotations (skill labels,
/// embedding differences, behavior descriptors, ground-truth primitive ids)
/// live alongside the base arrays so archives can carry pipeline outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub observations: Observations,
    /// `[T, act_dim]`
    pub actions: Array2<f32>,
    /// Optional task conditioning vector `[ctx_dim]`.
    pub context: Option<Array1<f32>>,
    /// Per-timestep skill labels produced by extraction.
    pub labels: Option<Vec<i32>>,
    /// Per-timestep embedding differences `[T, E]`.
    pub embeddings: Option<Array2<f32>>,
    /// Hidden behavior-descriptor channel `[T, B]`, read only by the
    /// synthetic oracle embedder. Not part of the policy observation.
    pub descriptors: Option<Array2<f32>>,
    /// Ground-truth primitive id per timestep, recorded by scripted
    /// demonstration generators for purity evaluation.
    pub gt_labels: Option<Vec<i32>>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, observations: Observations, actions: Array2<f32>) -> Self {
        Self {
            id: id.into(),
            observations,
            actions,
            context: None,
            labels: None,
            embeddings: None,
            descriptors: None,
            gt_labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn act_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.observations.len();
        if t < 2 {
            return Err(Error::Validation(format!(
                "trajectory '{}': length {} < 2",
                self.id, t
            )));
        }
        if self.actions.nrows() != t {
            return Err(Error::Validation(format!(
                "trajectory '{}': {} observations but {} actions",
                self.id,
                t,
                self.actions.nrows()
            )));
        }
        if !self.observations.all_finite() {
            return Err(Error::Validation(format!(
                "trajectory '{}': non-finite observation values",
                self.id
            )));
        }
        if !self.actions.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!(
                "trajectory '{}': non-finite action values",
                self.id
            )));
        }
        if let Some(ctx) = &self.context {
            if !ctx.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!(
                    "trajectory '{}': non-finite context values",
                    self.id
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != t {
                return Err(Error::Validation(format!(
                    "trajectory '{}': {} labels for {} timesteps",
                    self.id,
                    labels.len(),
                    t
                )));
            }
        }
        if let Some(emb) = &self.embeddings {
            if emb.nrows() != t {
                return Err(Error::Validation(format!(
                    "trajectory '{}': {} embedding rows for {} timesteps",
                    self.id,
                    emb.nrows(),
                    t
                )));
            }
            if !emb.iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!(
                    "trajectory '{}': non-finite embedding values",
                    self.id
                )));
            }
        }
        if let Some(desc) = &self.descriptors {
            if desc.nrows() != t {
                return Err(Error::Validation(format!(
                    "trajectory '{}': {} descriptor rows for {} timesteps",
                    self.id,
                    desc.nrows(),
                    t
                )));
            }
        }
        if let Some(gt) = &self.gt_labels {
            if gt.len() != t {
                return Err(Error::Validation(format!(
                    "trajectory '{}': {} ground-truth labels for {} timesteps",
                    self.id,
                    gt.len(),
                    t
                )));
            }
        }
        Ok(())
    }
}

/// A maximal run of equal skill labels within one trajectory. Carries the
/// per-step observations of its span so windows sampled mid-segment can use
/// the observation at the window's own first timestep.
#[derive(Debug, Clone)]
pub struct SkillSegment {
    pub trajectory_id: String,
    /// Skill label in `[0, K)`.
    pub label: i32,
    /// Start index within the source trajectory.
    pub start: usize,
    /// `[n, act_dim]`
    pub actions: Array2<f32>,
    /// `[n, obs_dim]` flattened observations for the segment span.
    pub observations: Array2<f32>,
    pub context: Option<Array1<f32>>,
}

impl SkillSegment {
    pub fn len(&self) -> usize {
        self.actions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn first_observation(&self) -> Array1<f32> {
        self.observations.row(0).to_owned()
    }
}

/// A window sampled from a segment for model training.
#[derive(Debug, Clone)]
pub struct SampledWindow {
    /// `[n', act_dim]`
    pub actions: Array2<f32>,
    /// Observation at the window's first timestep.
    pub first_obs: Array1<f32>,
    pub len: usize,
}

/// If the segment fits within `max_len`, returns it whole; otherwise returns
/// a uniformly random contiguous window of exactly `max_len` actions, with
/// `first_obs` taken at the window's first timestep.
pub fn sample_window<R: Rng>(
    segment: &SkillSegment,
    max_len: usize,
    rng: &mut R,
) -> SampledWindow {
    assert!(max_len >= 1, "max_len must be >= 1");
    let n = segment.len();
    if n <= max_len {
        return SampledWindow {
            actions: segment.actions.clone(),
            first_obs: segment.first_observation(),
            len: n,
        };
    }
    let start = rng.gen_range(0..=n - max_len);
    SampledWindow {
        actions: segment
            .actions
            .slice(ndarray::s![start..start + max_len, ..])
            .to_owned(),
        first_obs: segment.observations.row(start).to_owned(),
        len: max_len,
    }
}

/// Archive-level metadata persisted in the manifest.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchiveMetadata {
    /// Number of clusters used when labels are present.
    pub k: Option<usize>,
    /// Name of the embedder that produced the embeddings, if any.
    pub embedder: Option<String>,
    pub seed: Option<u64>,
}

/// A set of trajectories plus metadata; the interchange unit between
/// pipeline stages.
#[derive(Debug, Clone, Default)]
pub struct DatasetArchive {
    pub trajectories: Vec<Trajectory>,
    pub metadata: ArchiveMetadata,
}

impl DatasetArchive {
    pub fn new(trajectories: Vec<Trajectory>, metadata: ArchiveMetadata) -> Self {
        Self {
            trajectories,
            metadata,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Validates every trajectory plus cross-trajectory consistency
    /// (unique ids, equal action/embedding widths).
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for traj in &self.trajectories {
            traj.validate()?;
            if !seen.insert(traj.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate trajectory id '{}'",
                    traj.id
                )));
            }
        }
        if let Some(first) = self.trajectories.first() {
            let act_dim = first.act_dim();
            for traj in &self.trajectories[1..] {
                if traj.act_dim() != act_dim {
                    return Err(Error::Dimension(format!(
                        "trajectory '{}': act_dim {} != {}",
                        traj.id,
                        traj.act_dim(),
                        act_dim
                    )));
                }
            }
            let embed_dim = self
                .trajectories
                .iter()
                .find_map(|t| t.embeddings.as_ref().map(|e| e.ncols()));
            if let Some(e) = embed_dim {
                for traj in &self.trajectories {
                    if let Some(emb) = &traj.embeddings {
                        if emb.ncols() != e {
                            return Err(Error::Dimension(format!(
                                "trajectory '{}': embedding width {} != {}",
                                traj.id,
                                emb.ncols(),
                                e
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> Option<usize> {
        self.trajectories
            .iter()
            .find_map(|t| t.embeddings.as_ref().map(|e| e.ncols()))
    }

    pub fn all_labeled(&self) -> bool {
        !self.trajectories.is_empty() && self.trajectories.iter().all(|t| t.labels.is_some())
    }

    pub fn all_embedded(&self) -> bool {
        !self.trajectories.is_empty() && self.trajectories.iter().all(|t| t.embeddings.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    fn traj(t: usize, obs_dim: usize, act_dim: usize) -> Trajectory {
        Trajectory::new(
            "t0",
            Observations::Flat(Array2::zeros((t, obs_dim))),
            Array2::zeros((t, act_dim)),
        )
    }

    #[test]
    fn validate_rejects_short() {
        assert!(matches!(
            traj(1, 3, 2).validate(),
            Err(Error::Validation(_))
        ));
        assert!(traj(2, 3, 2).validate().is_ok());
    }

    #[test]
    fn validate_rejects_length_mismatch() {
        let mut t = traj(4, 3, 2);
        t.actions = Array2::zeros((3, 2));
        assert!(matches!(t.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn validate_rejects_non_finite() {
        let mut t = traj(3, 2, 2);
        t.actions[[1, 0]] = f32::NAN;
        assert!(matches!(t.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn image_rows_normalize() {
        let mut img = Array4::<u8>::zeros((2, 2, 2, 1));
        img[[1, 0, 0, 0]] = 255;
        img[[1, 1, 1, 0]] = 51;
        let obs = Observations::Image(img);
        let row = obs.flat_row(1);
        assert_eq!(row[0], 1.0);
        assert_eq!(row[3], 0.2);
        assert_eq!(obs.flat_dim(), 4);
    }

    fn segment(n: usize) -> SkillSegment {
        let actions = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f32);
        let observations = Array2::from_shape_fn((n, 3), |(i, j)| (i * 10 + j) as f32);
        SkillSegment {
            trajectory_id: "t0".into(),
            label: 1,
            start: 0,
            actions,
            observations,
            context: None,
        }
    }

    #[test]
    fn window_returns_whole_segment_when_short() {
        let seg = segment(10);
        let mut rng = rng_from_seed(0);
        let w = sample_window(&seg, 30, &mut rng);
        assert_eq!(w.len, 10);
        assert_eq!(w.actions, seg.actions);
        assert_eq!(w.first_obs, array![0.0, 1.0, 2.0]);
    }

    #[test]
    fn window_truncates_to_max_len() {
        let seg = segment(50);
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let w = sample_window(&seg, 30, &mut rng);
            assert_eq!(w.len, 30);
            // First obs must match the window's starting row.
            let start = (w.first_obs[0] / 10.0) as usize;
            assert!(start <= 20);
            assert_eq!(w.actions[[0, 0]], (start * 2) as f32);
        }
    }

    #[test]
    fn window_is_deterministic_under_seed() {
        let seg = segment(50);
        let a = sample_window(&seg, 30, &mut rng_from_seed(7));
        let b = sample_window(&seg, 30, &mut rng_from_seed(7));
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.first_obs, b.first_obs);
    }

    #[test]
    fn archive_rejects_duplicate_ids() {
        let archive = DatasetArchive::new(
            vec![traj(3, 2, 2), traj(3, 2, 2)],
            ArchiveMetadata::default(),
        );
        assert!(matches!(archive.validate(), Err(Error::Validation(_))));
    }
}
