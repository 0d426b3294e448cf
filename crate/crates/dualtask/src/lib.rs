//! Command-line pipeline around `dualtask-core`: file formats, configuration
//! and the `dualtask` subcommands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod events;
pub mod formats;

pub use dualtask_core as core;
