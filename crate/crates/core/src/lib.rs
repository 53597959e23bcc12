//! Accumulative data-poisoning simulation on streaming training, with the
//! memorization-discrepancy measure and the defenses built on it.
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: MLP evaluation, gradients, SGD, divergences, HVPs.
//! - [`checkpoints`]: historical parameter snapshots.
//! - [`discrepancy`]: memorization discrepancy, threshold schedules, sweeps.
//! - [`attack`]: PGD crafting, trigger and accumulative batches, monitor.
//! - [`defense`]: ST, GC, AT, DSC and DGC.
//! - [`stream`]: synthetic data, burn-in and victim-phase orchestration.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod checkpoints;
pub mod defense;
pub mod discrepancy;
pub mod error;
pub mod exec;
pub mod numcore;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
pub use exec::Exec;
