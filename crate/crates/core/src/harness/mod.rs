//! Experiment driver: config parsing, dataset ingestion, transfer sweeps,
//! and result emission.

pub mod build;
pub mod config;
pub mod data;
pub mod report;
pub mod sweep;

pub use config::Config;
pub use data::{gen_teacher_data, load_csv, CsvSchema, Dataset, Task};
pub use report::{emit_sweep, fmt_f64, Format};
pub use sweep::{run_transfer_sweep, ExperimentConfig, SweepResult};
