//! Command-line driver for the subset-selection experiments.

pub mod args;
pub mod commands;
pub mod manifest;

pub use args::Cli;
pub use commands::{run, EXIT_FAILURE, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE};
