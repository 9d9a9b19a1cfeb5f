//! Command-line front end: track files, CSV tables and SVG drawings.

pub mod commands;
pub mod svg;
pub mod trackfile;

pub use commands::{run, Cli, CliError, Outcome};
