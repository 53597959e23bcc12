//! Poison-sample generation and the accumulative attack loop.

mod craft;
mod monitor;
mod pgd;
mod phase;

pub use craft::{
    accumulative_direction, accumulative_perturb, craft_trigger, craft_trigger_with_direction,
    meta_gradient, trigger_objective,
};
pub use monitor::{monitor_update, MonitorState};
pub use pgd::{pgd_perturb, within_budget, PgdMode};
pub use phase::{run_attack_phase, AttackPhaseResult, Attacker, TriggerOutcome, VictimStream};

pub(crate) use pgd::projected_sign_step;

use crate::error::{Error, Result};

/// Which loss the monitor watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MonitorSource {
    /// Training loss of the incoming batch after the defense.
    #[default]
    IncomingBatch,
    /// Loss on a held-out clean set.
    HeldOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// l-inf radius in feature units.
    pub eps: f64,
    pub step_size: f64,
    pub n_steps: usize,
    /// Weight of the trigger-accumulation term.
    pub lambda: f64,
    /// Weight of the discrepancy penalty (0 disables the adaptive variant).
    pub beta: f64,
    /// Checkpoint id used as the generating model in the black-box setting.
    pub surrogate_step: Option<u64>,
    pub eps_fd: Option<f64>,
    /// Loss amplification ratio that trips the monitor.
    pub monitor_gamma: f64,
    pub monitor_source: MonitorSource,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            eps: 0.06,
            step_size: 0.015,
            n_steps: 10,
            lambda: 1.0,
            beta: 0.0,
            surrogate_step: None,
            eps_fd: None,
            monitor_gamma: 2.0,
            monitor_source: MonitorSource::IncomingBatch,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eps >= 0.0) {
            return bad(format!("attack.eps must be >= 0, got {}", self.eps));
        }
        if self.eps > 0.0 && !(self.step_size > 0.0 && self.step_size <= self.eps) {
            return bad(format!(
                "attack.step_size must lie in (0, eps], got {}",
                self.step_size
            ));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("attack.lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.beta >= 0.0) {
            return bad(format!("attack.beta must be >= 0, got {}", self.beta));
        }
        if !(self.monitor_gamma > 1.0) {
            return bad(format!(
                "attack.monitor_gamma must be > 1, got {}",
                self.monitor_gamma
            ));
        }
        if let Some(e) = self.eps_fd {
            if !(e > 0.0) {
                return bad(format!("attack.eps_fd must be > 0, got {e}"));
            }
        }
        Ok(())
    }
}
