//! Experiment harness around `cltr-core`: config files, dataset and log IO,
//! and the sweep pipeline behind the `cltr` binary.

pub mod config;
pub mod harness;
pub mod io;

pub use config::{BiasMode, ConfigError, DatasetSource, ExperimentConfig};
pub use harness::{run_sweep, CsvSink, SweepRow};
