//! Synthetic simulator, validation metrics and the cross-validation harness.

mod cv;
pub mod metrics;
pub mod synthetic;

pub use cv::{cross_validate, dense_comparison, CrossValidation, DenseComparison};
pub use metrics::{coverage_95, crps_empirical, crps_gaussian, crps_sorted, rmspe, MetricsReport};
pub use synthetic::{SyntheticConfig, SyntheticForward, SyntheticRun};
