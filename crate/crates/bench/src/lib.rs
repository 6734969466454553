//! Harness around the `itergp` library: dataset ingestion, train/test
//! splitting with standardization, grid sweeps over solver settings,
//! append-only results and tidy report tables.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod split;
pub mod sweep;
pub mod synthetic;

pub use checkpoint::Checkpoint;
pub use config::{BackendKind, OptimizerSettings, Preset, SweepConfig};
pub use dataset::{load_dataset, write_dataset, Dataset, Schema, TargetColumn};
pub use error::{BenchError, Result};
pub use report::{emit_report, ReportKind};
pub use split::{split_and_standardize, Split, Standardization};
pub use sweep::{run_sweep, CellKey, CellStatus, SkipRecord, SweepRecord, SweepSummary};
