//! Skill-extraction core: dataset model and archive format, embedding
//! differences, K-means skill labeling with median-filter smoothing,
//! segmentation and statistics, PCA projection, and the StationWorld
//! synthetic environment with scripted demonstration generators.

pub mod archive;
pub mod cluster;
pub mod data;
pub mod embed;
pub mod env;
pub mod error;
pub mod filter;
pub mod pca;
pub mod rng;
pub mod segment;

pub use data::{DatasetArchive, Observations, SampledWindow, SkillSegment, Trajectory};
pub use error::{Error, Result};
