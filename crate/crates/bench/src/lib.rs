//! Configuration-driven benchmark runs: network training, filter
//! repetitions and observation simulation, all written as CSV.

pub mod commands;
pub mod config;
pub mod obsfile;
pub mod table;

pub use commands::{cmd_filter, cmd_simulate, cmd_train, FilterOutcome, RunOptions, TrainOutcome};
pub use config::{ExperimentConfig, FilterName, LoadedConfig};
