//! Command-line front end: data ingestion, run configuration, the on-disk
//! fit layout and the subcommands built on them.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod store;
