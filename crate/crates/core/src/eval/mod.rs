//! Datasets, metrics and experiment drivers.

pub mod dataset;
mod grid;
mod manifest;
mod metrics;
pub mod pipeline;
mod sweep;
mod vary;

pub use dataset::{
    generate_synthetic_dataset, ingest_raw_dataset, Dataset, IngestConfig, IngestIssue, Sample,
    Split, SyntheticConfig,
};
pub use grid::{
    run_cell, run_grid, select_images, summarize_grid, CellOutcome, ExperimentGrid, GridCell,
    GridRow, GridSummary,
};
pub use manifest::{hash_file, sha256_hex, RunManifest, MANIFEST_FORMAT};
pub use metrics::{mean_std, median, top_n_accuracy, MetricsReport};
pub use pipeline::{Pipeline, PipelineConfig, VaryConfig};
pub use sweep::{default_size_limits, sweep_accuracy_vs_size, SweepPoint};
pub use vary::{run_varying_scenario, TimelineRow, VaryingRun};

use crate::codec::CodecError;
use crate::nn::NnError;
use crate::sim::SimError;
use crate::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("bad data format: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
