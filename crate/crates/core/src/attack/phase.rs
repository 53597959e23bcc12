use super::craft::{accumulative_perturb, craft_trigger};
use super::monitor::MonitorState;
use super::{AttackConfig, MonitorSource};
use crate::checkpoints::{CheckpointStore, Selector};
use crate::error::Result;
use crate::numcore::{Batch, Measure, ParamState};

/// The victim as seen by the attacker: a model that consumes one batch at a
/// time through whatever defense is active.
pub trait VictimStream {
    fn params(&self) -> &ParamState;
    fn checkpoints(&self) -> &CheckpointStore;
    /// The clean batch the stream would deliver next.
    fn next_stream_batch(&mut self) -> Result<Batch>;
    /// Runs the defense and one update on `batch`; returns the training loss
    /// of the (possibly corrected) batch.
    fn submit(&mut self, batch: Batch) -> Result<f64>;
    /// Loss on a held-out clean reference set.
    fn held_out_loss(&self) -> Result<f64>;
    /// Called once, after the last accumulative batch and before the trigger.
    fn before_trigger(&mut self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerOutcome {
    /// The monitor tripped.
    Triggered,
    /// `max_batches` ran out first; the trigger fired anyway.
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct AttackPhaseResult {
    pub n_poison_batches: usize,
    pub outcome: TriggerOutcome,
    pub monitor: MonitorState,
}

/// Attacker-side state: its clean validation and trigger batches plus the
/// auxiliary model used by the adaptive variant.
#[derive(Debug, Clone)]
pub struct Attacker {
    pub cfg: AttackConfig,
    pub val: Batch,
    pub trigger: Batch,
    pub aux: Option<ParamState>,
    pub measure: Measure,
}

impl Attacker {
    /// Model the poison is generated on.
    fn generator<T: VictimStream>(&self, victim: &T) -> Result<ParamState> {
        match self.cfg.surrogate_step {
            Some(id) => victim.checkpoints().fetch_params(Selector::ById(id)),
            None => Ok(victim.params().clone()),
        }
    }
}

/// Streams accumulative batches until the monitor trips or `max_batches` is
/// reached, then submits the trigger batch once.
pub fn run_attack_phase<T: VictimStream>(
    victim: &mut T,
    attacker: &Attacker,
    reference_loss: f64,
    max_batches: usize,
) -> Result<AttackPhaseResult> {
    let cfg = &attacker.cfg;
    let mut monitor = MonitorState::new(reference_loss);
    let mut n = 0;
    while n < max_batches && !monitor.triggered {
        let stream = victim.next_stream_batch()?;
        let gen = attacker.generator(victim)?;
        let trigger = if cfg.lambda > 0.0 {
            craft_trigger(&attacker.trigger, &gen, &attacker.val, cfg)?
        } else {
            attacker.trigger.clone()
        };
        let crafted = accumulative_perturb(
            &stream,
            &gen,
            &attacker.val,
            &trigger,
            cfg,
            attacker.aux.as_ref(),
            attacker.measure,
        )?;
        let batch_loss = victim.submit(crafted)?;
        n += 1;
        let observed = match cfg.monitor_source {
            MonitorSource::IncomingBatch => batch_loss,
            MonitorSource::HeldOut => victim.held_out_loss()?,
        };
        monitor = monitor.update(observed, cfg.monitor_gamma);
    }
    let outcome = if monitor.triggered {
        TriggerOutcome::Triggered
    } else {
        TriggerOutcome::Exhausted
    };
    victim.before_trigger()?;
    let gen = attacker.generator(victim)?;
    let trigger = craft_trigger(&attacker.trigger, &gen, &attacker.val, cfg)?;
    victim.submit(trigger)?;
    Ok(AttackPhaseResult {
        n_poison_batches: n,
        outcome,
        monitor,
    })
}
