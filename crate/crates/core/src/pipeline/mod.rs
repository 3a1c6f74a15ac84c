//! Training and prediction pipeline over run-level data: FPCA per band,
//! active subspace, NNGP emulators and validation.

pub mod config;
pub mod data;
mod manifest;
mod predict;
mod train;

pub use config::{EmulatorSettings, Estimation, PipelineConfig, SubspaceSettings, SynthSettings};
pub use data::{read_design, Dataset, FileJacobians, JacobianSource, SyntheticJacobians};
pub use manifest::{file_sha256, Manifest, ManifestEntry};
pub use predict::{locate_runs, projected_scores, validate, write_predictions_csv, Predictor, RunPrediction};
pub use train::{
    fit_active_subspace, fit_bases, initial_ranges, plan_groups, split_runs, train, write_basis_reports, write_training_outputs, Checkpoint, GroupCheckpoint,
    TrainOutput, SCHEMA_VERSION,
};
