//! Experiment driver for `flipdiff-core`: JSON configuration, subcommands,
//! CSV and JSON artifacts with a hashed manifest.

pub mod commands;
pub mod config;
pub mod output;

pub use flipdiff_core;
