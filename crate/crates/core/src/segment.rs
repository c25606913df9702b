//! Turning filtered label sequences into skill segments, relabeling new
//! datasets with a frozen clustering model, and cluster statistics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cluster::{assign_labels, ClusterModel, LabelSequence};
use crate::data::{DatasetArchive, SkillSegment, Trajectory};
use crate::embed::{features_for, Embedder, EmbeddingSource};
use crate::error::{Error, Result};
use crate::filter::{median_filter_labels, BoundaryMode};

/// Splits a labeled trajectory into maximal runs of equal labels. The
/// segments cover `[0, T)` contiguously without overlap.
pub fn segment(labels: &LabelSequence, traj: &Trajectory) -> Result<Vec<SkillSegment>> {
    let t_len = traj.len();
    if labels.labels.len() != t_len {
        return Err(Error::Validation(format!(
            "trajectory '{}': {} labels for {} timesteps",
            traj.id,
            labels.labels.len(),
            t_len
        )));
    }
    let obs_dim = traj.observations.flat_dim();
    let mut segments = Vec::new();
    let mut start = 0usize;
    for t in 1..=t_len {
        if t == t_len || labels.labels[t] != labels.labels[start] {
            let n = t - start;
            let mut actions = Array2::zeros((n, traj.act_dim()));
            actions.assign(&traj.actions.slice(ndarray::s![start..t, ..]));
            let mut observations = Array2::zeros((n, obs_dim));
            for (row, ts) in (start..t).enumerate() {
                observations
                    .row_mut(row)
                    .assign(&traj.observations.flat_row(ts));
            }
            segments.push(SkillSegment {
                trajectory_id: traj.id.clone(),
                label: labels.labels[start],
                start,
                actions,
                observations,
                context: traj.context.clone(),
            });
            start = t;
        }
    }
    Ok(segments)
}

/// Trajectories annotated with per-timestep skill labels, flattened into
/// single-label segments ready for skill learning.
#[derive(Debug, Clone, Default)]
pub struct SkillLabeledDataset {
    pub segments: Vec<SkillSegment>,
    pub k: usize,
}

impl SkillLabeledDataset {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    /// Builds the labeled dataset from an archive whose trajectories already
    /// carry labels.
    pub fn from_labeled_archive(archive: &DatasetArchive, k: usize) -> Result<Self> {
        let mut segments = Vec::new();
        for traj in &archive.trajectories {
            let labels = traj.labels.as_ref().ok_or_else(|| {
                Error::MissingArtifact(format!("trajectory '{}' has no labels", traj.id))
            })?;
            let seq = LabelSequence {
                trajectory_id: traj.id.clone(),
                labels: labels.clone(),
            };
            segments.extend(segment(&seq, traj)?);
        }
        Ok(Self { segments, k })
    }
}

/// Extraction settings shared by the initial labeling pass and later
/// relabeling with a frozen model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelingConfig {
    pub filter_window: usize,
    pub boundary: BoundaryMode,
    pub source: EmbeddingSource,
    /// Per-dimension z-score applied to features before assignment; must be
    /// the standardizer the cluster model was fitted with.
    #[serde(default)]
    pub standardizer: Option<crate::embed::Standardizer>,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            filter_window: 7,
            boundary: BoundaryMode::EdgeReplicate,
            source: EmbeddingSource::Embedder,
            standardizer: None,
        }
    }
}

/// Labels every trajectory of `archive` with the frozen `model` (assign then
/// median-filter), writes labels into the archive, and returns the segmented
/// dataset. Centroids are never modified.
pub fn relabel_with_model(
    model: &ClusterModel,
    archive: &mut DatasetArchive,
    embedder: Option<&dyn Embedder>,
    config: &LabelingConfig,
) -> Result<SkillLabeledDataset> {
    let mut segments = Vec::new();
    for traj in &mut archive.trajectories {
        let feats = match (config.source, &traj.embeddings) {
            (EmbeddingSource::Embedder, Some(emb)) if embedder.is_none() => {
                crate::embed::EmbeddingSequence {
                    trajectory_id: traj.id.clone(),
                    diffs: emb.clone(),
                }
            }
            _ => features_for(traj, config.source, embedder)?,
        };
        let raw = match &config.standardizer {
            Some(st) => assign_labels(model, st.apply(&feats.diffs).view(), &traj.id)?,
            None => assign_labels(model, feats.diffs.view(), &traj.id)?,
        };
        let filtered = median_filter_labels(&raw, config.filter_window, config.boundary)?;
        traj.labels = Some(filtered.labels.clone());
        if config.source == EmbeddingSource::Embedder || config.source == EmbeddingSource::Precomputed {
            traj.embeddings = Some(feats.diffs);
        }
        segments.extend(segment(&filtered, traj)?);
    }
    archive.metadata.k = Some(model.k);
    Ok(SkillLabeledDataset {
        segments,
        k: model.k,
    })
}

/// Summary statistics for one skill label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: i32,
    pub count: usize,
    pub total_timesteps: usize,
    pub mean_len: f64,
    pub median_len: f64,
    pub q1_len: f64,
    pub q3_len: f64,
    pub min_len: usize,
    pub max_len: usize,
}

/// Per-skill length statistics plus an overall segment-length histogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterStatistics {
    pub per_label: Vec<LabelStats>,
    /// Histogram over segment lengths; index = length, value = count.
    pub length_histogram: Vec<usize>,
    pub overall_mean_len: f64,
}

fn quantile(sorted: &[usize], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo] as f64
    } else {
        let frac = pos - lo as f64;
        sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
    }
}

/// Computes per-label segment-length statistics over a labeled dataset.
pub fn cluster_statistics(dataset: &SkillLabeledDataset) -> Result<ClusterStatistics> {
    if dataset.segments.is_empty() {
        return Err(Error::Validation("labeled dataset is empty".into()));
    }
    let max_label = dataset
        .segments
        .iter()
        .map(|s| s.label)
        .max()
        .unwrap_or(0)
        .max(dataset.k.saturating_sub(1) as i32);
    let mut lengths_by_label: Vec<Vec<usize>> = vec![Vec::new(); (max_label + 1) as usize];
    let mut max_len = 0usize;
    for seg in &dataset.segments {
        lengths_by_label[seg.label as usize].push(seg.len());
        max_len = max_len.max(seg.len());
    }
    let mut histogram = vec![0usize; max_len + 1];
    let mut total = 0usize;
    let mut total_count = 0usize;
    for seg in &dataset.segments {
        histogram[seg.len()] += 1;
        total += seg.len();
        total_count += 1;
    }
    let per_label = lengths_by_label
        .into_iter()
        .enumerate()
        .map(|(label, mut lens)| {
            lens.sort_unstable();
            let count = lens.len();
            let timesteps: usize = lens.iter().sum();
            LabelStats {
                label: label as i32,
                count,
                total_timesteps: timesteps,
                mean_len: if count == 0 {
                    0.0
                } else {
                    timesteps as f64 / count as f64
                },
                median_len: quantile(&lens, 0.5),
                q1_len: quantile(&lens, 0.25),
                q3_len: quantile(&lens, 0.75),
                min_len: lens.first().copied().unwrap_or(0),
                max_len: lens.last().copied().unwrap_or(0),
            }
        })
        .collect();
    Ok(ClusterStatistics {
        per_label,
        length_histogram: histogram,
        overall_mean_len: total as f64 / total_count as f64,
    })
}
