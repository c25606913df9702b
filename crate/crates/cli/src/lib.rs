//! Experiment harness: configuration, pipeline stages, sweeps, and figure
//! generation for the skill-extraction workspace.

pub mod config;
pub mod plot;
pub mod rundir;
pub mod stages;
