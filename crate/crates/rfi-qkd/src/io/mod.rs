//! Run configuration and the CSV/JSON interchange formats: the counts CSV
//! (one row per integration interval), the efficiency-map JSON, the
//! ground-truth and per-interval results CSVs, density-matrix CSVs, and the
//! key-rate report CSV.

mod config;
mod counts_csv;
mod results;

pub use config::{
    load_efficiency_json, save_efficiency_json, EfficiencyConfig, PipelineToggles, RunConfig,
    Scenario,
};
pub use counts_csv::{parse_counts_csv, read_counts_csv, write_counts_csv, COUNTS_HEADER};
pub use results::{
    write_density_matrix_csv, write_estimates_csv, write_ground_truth_csv, write_keyrate_csv,
    write_summary_csv, GroundTruthRow, KeyRateRow,
};

use thiserror::Error;

/// Configuration-level failure: malformed or invalid run configuration.
/// Maps to exit code 2.
#[derive(Debug, Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

/// Data-level failure: malformed input data or a pipeline that cannot run
/// on it. Maps to exit code 3.
#[derive(Debug, Error)]
#[error("data error: {0}")]
pub struct DataError(pub String);
