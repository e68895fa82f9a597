//! Pipeline driver for the `biasmeta` command: run directories, stage
//! bookkeeping and the command-line interface.

pub mod cli;
pub mod config;
pub mod manifest;
pub mod stages;
