//! Files and commands around `half-core`: JSON-Lines datasets, `key =
//! value` run configs, binary checkpoints, and the `half` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod records;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::CliError;
