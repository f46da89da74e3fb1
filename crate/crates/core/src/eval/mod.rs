//! Metrics, the experiment runner, ablation sweeps and report rendering.

mod metrics;
mod render;
mod runner;
mod sweep;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::types::Condition;

pub use metrics::{confusion, metrics, ConfusionMatrix, Metrics, UnparseablePolicy};
pub use render::{format_table, plot_svg, read_sweep_series, render_report, render_sweep, sweep_csv, Series, CSV_HEADER, METRIC_COLUMNS};
pub use runner::{
    draw_shots, run_experiment, run_experiment_traced, ExperimentConfig, LabelReport, QueryError, QueryTrace, Report,
    RunContext, ShotTrace,
};
pub use sweep::{sweep, sweep_configs, SweepAxis, SweepEntry, SweepResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("lengths differ: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("{condition}: pool has {pool} candidates but {shots} shots were requested")]
    PoolTooSmall { condition: Condition, pool: usize, shots: usize },
    #[error("rendering: {0}")]
    Render(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
