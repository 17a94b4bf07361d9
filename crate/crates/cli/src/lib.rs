//! Pipeline orchestration for the event-camera microgesture stack.
//!
//! Everything the `evgest` binary does lives here so integration tests can
//! drive subcommands in-process: configuration ([`config`]), artifact layout
//! and manifests ([`artifacts`]), dataset synthesis and window encoding
//! ([`dataset`]), and the subcommand implementations ([`run`]).

pub mod artifacts;
pub mod config;
pub mod dataset;
pub mod run;

pub use artifacts::{CliError, ExitCode};
pub use config::PipelineConfig;
