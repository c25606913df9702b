//! Experiment configuration: one JSON document drives every stage. Every
//! run directory receives a frozen copy of the resolved config plus its
//! hash; comparison tooling checks that runs differ only in `method`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use extract_core::embed::EmbeddingSource;
use extract_core::env::StationWorldConfig;
use extract_core::error::{Error, Result};
use extract_core::filter::BoundaryMode;
use extract_learn::rl::RlConfig;
use extract_learn::sac::FlatSacConfig;
use extract_learn::skills::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Extract,
    Spirl,
    Bc,
    Sac,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Extract => write!(f, "extract"),
            Method::Spirl => write!(f, "spirl"),
            Method::Bc => write!(f, "bc"),
            Method::Sac => write!(f, "sac"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoDistribution {
    /// All task permutations except the target, uniformly.
    Uniform,
    /// Rotation tasks with a dominant first rotation (prefix-determined).
    Focused,
}

fn default_k() -> usize {
    8
}
fn default_window() -> usize {
    7
}
fn default_z_dim() -> usize {
    5
}
fn default_beta() -> f64 {
    1e-3
}
fn default_max_len() -> usize {
    30
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_target_task() -> Vec<usize> {
    vec![1, 0, 3, 2]
}
fn default_boundary() -> BoundaryMode {
    BoundaryMode::EdgeReplicate
}
fn default_source() -> EmbeddingSource {
    EmbeddingSource::Embedder
}
fn default_embedder_noise() -> f64 {
    0.02
}
fn default_n_demos() -> usize {
    601
}
fn default_demo_dist() -> DemoDistribution {
    DemoDistribution::Uniform
}
fn default_spirl_window() -> usize {
    extract_learn::baselines::SPIRL_WINDOW
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotSpec {
    pub kind: String,
    #[serde(default)]
    pub runs: Vec<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateSpec {
    /// `k` or `embedding-source`.
    pub axis: String,
    #[serde(default)]
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub sources: Vec<EmbeddingSource>,
}

impl Default for AblateSpec {
    fn default() -> Self {
        Self {
            axis: "k".into(),
            k_values: vec![3, 5, 8, 15],
            sources: vec![
                EmbeddingSource::Embedder,
                EmbeddingSource::ActionDiff,
                EmbeddingSource::StateDiff,
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Run directory for this stage's artifacts.
    pub out_dir: PathBuf,
    /// Source dataset archive (consumed by extract/train stages; produced
    /// by gen-demos).
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Target-task demonstration archive for fine-tuning.
    #[serde(default)]
    pub target_dataset: Option<PathBuf>,
    /// Skill-model checkpoint (consumed by finetune/rl stages).
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Frozen clustering model (consumed by finetune for relabeling).
    #[serde(default)]
    pub clusters: Option<PathBuf>,

    #[serde(default)]
    pub env: StationWorldConfig,
    #[serde(default = "default_n_demos")]
    pub n_demos: usize,
    #[serde(default = "default_demo_dist")]
    pub demo_distribution: DemoDistribution,
    #[serde(default)]
    pub attach_context: bool,
    #[serde(default = "default_target_task")]
    pub target_task: Vec<usize>,

    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_window")]
    pub filter_window: usize,
    #[serde(default = "default_boundary")]
    pub boundary: BoundaryMode,
    #[serde(default = "default_source")]
    pub embedding_source: EmbeddingSource,
    #[serde(default = "default_embedder_noise")]
    pub embedder_noise: f64,
    /// Z-score features per dimension before clustering (off by default;
    /// raw differences are clustered).
    #[serde(default)]
    pub standardize: bool,

    #[serde(default = "default_z_dim")]
    pub z_dim: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub train: TrainConfig,
    /// Write an intermediate checkpoint every N training steps.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default = "default_spirl_window")]
    pub spirl_window: usize,

    #[serde(default)]
    pub rl: RlConfig,
    #[serde(default)]
    pub sac: FlatSacConfig,

    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Master seed for data generation and extraction.
    #[serde(default)]
    pub seed: u64,

    #[serde(default)]
    pub plot: Option<PlotSpec>,
    #[serde(default)]
    pub ablate: AblateSpec,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::MissingArtifact(format!("config {}: {e}", path.display()))
        })?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument("k must be >= 2".into()));
        }
        if self.filter_window % 2 == 0 {
            return Err(Error::InvalidArgument(
                "filter_window must be odd".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("seeds must be non-empty".into()));
        }
        if self.rl.alpha_d < 0.0 || self.rl.alpha_z < 0.0 {
            return Err(Error::InvalidArgument(
                "KL coefficients must be non-negative".into(),
            ));
        }
        if !(self.rl.gamma > 0.0 && self.rl.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in (0, 1), got {}",
                self.rl.gamma
            )));
        }
        Ok(())
    }

    /// Hash of the full resolved config.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }

    /// Hash that ignores the fields that legitimately differ between
    /// methods being compared (`method`, `out_dir`): the fairness contract
    /// requires everything else to match.
    pub fn fairness_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("method");
            map.remove("out_dir");
        }
        hex_digest(value.to_string().as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
