//! Experiment driver behind the `levypot` binary.

pub mod commands;
pub mod criteria;
pub mod output;

pub use commands::{cmd_green, cmd_kato, cmd_kernels, cmd_mc, cmd_perturb, cmd_report, Outcome};
pub use output::{config_hash, Sink, VERSION};
