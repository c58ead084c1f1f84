//! Command-line driver for `ghostqc-core`: file formats, experiment
//! configuration, run manifests and the command implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
