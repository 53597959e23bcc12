//! Experiment runner behind the `memdisc` binary: configuration, runs,
//! sweeps, analysis exports and gradient checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::CliError;

/// Environment variable that sets the worker-pool size.
pub const WORKERS_ENV: &str = "MEMDISC_WORKERS";
