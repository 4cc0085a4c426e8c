//! Command-line layer: manifest loading, configuration merging and report
//! serialization around `hetdetect_core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

pub use commands::{run, run_test_command};
pub use error::{CliError, CliResult, DataError};
pub use manifest::{load_blocks, BlockEntry, BlockManifest};
