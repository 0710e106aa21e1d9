//! Command-line front end: run configuration, sweeps and the subcommands.

pub mod commands;
pub mod experiment;
pub mod settings;

pub use commands::{run, Cli, Command};
pub use experiment::{run_experiment, ExperimentSpec, SweepVar};
pub use settings::{resolve_data_dir, Settings};
