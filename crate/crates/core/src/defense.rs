//! Defenses applied to each incoming batch or to its parameter gradient.
//!
//! - ST: standard training, no intervention.
//! - GC: global l2 gradient clipping.
//! - AT: reverse PGD (loss minimization) on every sample.
//! - DSC: reverse PGD only while a sample's memorization discrepancy against
//!   the auxiliary model exceeds the scheduled threshold.
//! - DGC: gradient clipping only when the batch-mean discrepancy exceeds it.

use crate::attack::{pgd_perturb, PgdMode};
use crate::discrepancy::{memorization_discrepancy, MdReport, ThresholdSchedule};
use crate::error::{Error, Result};
use crate::exec::{collect_ordered, Exec};
use crate::numcore::{forward_probs, grad_input, Batch, Matrix, Measure, ParamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DefenseKind {
    St,
    Gc,
    At,
    Dsc,
    Dgc,
}

impl DefenseKind {
    pub const ALL: [DefenseKind; 5] = [
        DefenseKind::St,
        DefenseKind::Gc,
        DefenseKind::At,
        DefenseKind::Dsc,
        DefenseKind::Dgc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DefenseKind::St => "ST",
            DefenseKind::Gc => "GC",
            DefenseKind::At => "AT",
            DefenseKind::Dsc => "DSC",
            DefenseKind::Dgc => "DGC",
        }
    }

    pub fn needs_aux(self) -> bool {
        matches!(self, DefenseKind::Dsc | DefenseKind::Dgc)
    }
}

impl std::fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DefenseKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown defense kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    pub gc_clip_norm: f64,
    pub at_eps: f64,
    pub at_step: f64,
    pub at_steps: usize,
    pub dsc_schedule: Option<ThresholdSchedule>,
    pub dsc_eps: f64,
    pub dsc_step: f64,
    pub dsc_max_steps: usize,
    pub aux_checkpoint_id: Option<u64>,
    pub measure: Measure,
}

impl DefenseConfig {
    pub fn standard() -> Self {
        Self {
            kind: DefenseKind::St,
            gc_clip_norm: 1.0,
            at_eps: 0.06,
            at_step: 0.015,
            at_steps: 10,
            dsc_schedule: None,
            dsc_eps: 0.06,
            dsc_step: 0.015,
            dsc_max_steps: 10,
            aux_checkpoint_id: None,
            measure: Measure::Kl,
        }
    }

    pub fn with_kind(mut self, kind: DefenseKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("defense.{name} must be positive, got {v}")))
            }
        };
        match self.kind {
            DefenseKind::St => Ok(()),
            DefenseKind::Gc => positive("gc_clip_norm", self.gc_clip_norm),
            DefenseKind::At => {
                positive("at_eps", self.at_eps)?;
                positive("at_step", self.at_step)
            }
            DefenseKind::Dsc | DefenseKind::Dgc => {
                if self.dsc_schedule.is_none() {
                    return Err(Error::Config(format!(
                        "{} needs a threshold schedule",
                        self.kind
                    )));
                }
                if self.aux_checkpoint_id.is_none() {
                    return Err(Error::Config(format!(
                        "{} needs an auxiliary checkpoint",
                        self.kind
                    )));
                }
                if self.kind == DefenseKind::Dgc {
                    positive("gc_clip_norm", self.gc_clip_norm)
                } else {
                    positive("dsc_eps", self.dsc_eps)?;
                    positive("dsc_step", self.dsc_step)
                }
            }
        }
    }
}

/// Rescales `grad` to l2 norm `clip_norm` when it is longer.
pub fn defend_gc(grad: &[f64], clip_norm: f64) -> Vec<f64> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip_norm {
        grad.iter().map(|g| g / norm * clip_norm).collect()
    } else {
        grad.to_vec()
    }
}

/// Reverse PGD on every sample.
pub fn correct_at(
    batch: &Batch,
    params: &ParamState,
    eps: f64,
    step: f64,
    steps: usize,
) -> Result<Batch> {
    pgd_perturb(batch, params, eps, step, steps, PgdMode::MinimizeLoss)
}

fn sample_md(params: &ParamState, aux: &ParamState, x: &Matrix, measure: Measure) -> Result<f64> {
    let now = forward_probs(params, x)?;
    let old = forward_probs(aux, x)?;
    Ok(measure.eval(old.row(0), now.row(0)))
}

/// Discrepancy-aware sample correction.
///
/// Each sample takes reverse sign steps while its discrepancy against `aux`
/// exceeds `threshold`, for at most `max_steps` steps. The discrepancy is
/// re-evaluated on the current iterate before every step. Returns the
/// corrected batch and the number of steps each sample used.
#[allow(clippy::too_many_arguments)]
pub fn correct_dsc(
    batch: &Batch,
    params: &ParamState,
    aux: &ParamState,
    threshold: f64,
    eps: f64,
    step: f64,
    max_steps: usize,
    measure: Measure,
    exec: Exec,
) -> Result<(Batch, Vec<usize>)> {
    let d = batch.features.cols();
    let per_sample = exec.map_range(batch.len(), |i| -> Result<(Vec<f64>, usize)> {
        let x0 = batch.features.row(i);
        let y = [batch.labels[i]];
        let mut x = Matrix::new(1, d, x0.to_vec())?;
        let mut used = 0;
        while used < max_steps && sample_md(params, aux, &x, measure)? > threshold {
            let g = grad_input(params, &x, &y)?;
            crate::attack::projected_sign_step(x.row_mut(0), x0, g.row(0), step, eps, false);
            used += 1;
        }
        Ok((x.into_vec(), used))
    });
    let per_sample = collect_ordered(per_sample)?;
    let mut features = Matrix::zeros(batch.len(), d);
    let mut steps = Vec::with_capacity(batch.len());
    for (i, (row, used)) in per_sample.into_iter().enumerate() {
        features.row_mut(i).copy_from_slice(&row);
        steps.push(used);
    }
    Ok((
        Batch {
            features,
            labels: batch.labels.clone(),
        },
        steps,
    ))
}

/// Clips only when the batch-mean discrepancy exceeds `threshold`.
pub fn defend_dgc(grad: &[f64], md: &MdReport, threshold: f64, clip_norm: f64) -> Vec<f64> {
    if md.mean > threshold {
        defend_gc(grad, clip_norm)
    } else {
        grad.to_vec()
    }
}

pub struct DefenseContext<'a> {
    pub params: &'a ParamState,
    pub aux: Option<&'a ParamState>,
    /// Victim-phase batch index `m`.
    pub batch_index: u64,
    pub exec: Exec,
}

#[derive(Debug, Clone)]
pub struct Defended {
    pub batch: Batch,
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Threshold in force for DSC/DGC.
    pub threshold: Option<f64>,
    pub dsc_steps: Option<Vec<usize>>,
}

fn require_aux<'a>(cfg: &DefenseConfig, ctx: &DefenseContext<'a>) -> Result<(&'a ParamState, f64)> {
    let aux = ctx
        .aux
        .ok_or_else(|| Error::Config(format!("{} needs auxiliary parameters", cfg.kind)))?;
    let schedule = cfg
        .dsc_schedule
        .ok_or_else(|| Error::Config(format!("{} needs a threshold schedule", cfg.kind)))?;
    Ok((aux, schedule.threshold_at(ctx.batch_index)))
}

/// Dispatches one batch through the configured defense. `grad_hook` maps the
/// (possibly corrected) batch to its training loss and parameter gradient.
pub fn apply_defense<F>(
    cfg: &DefenseConfig,
    batch: Batch,
    grad_hook: F,
    ctx: &DefenseContext<'_>,
) -> Result<Defended>
where
    F: FnOnce(&Batch) -> Result<(f64, Vec<f64>)>,
{
    match cfg.kind {
        DefenseKind::St => {
            let (loss, grad) = grad_hook(&batch)?;
            Ok(Defended { batch, loss, grad, threshold: None, dsc_steps: None })
        }
        DefenseKind::Gc => {
            let (loss, grad) = grad_hook(&batch)?;
            let grad = defend_gc(&grad, cfg.gc_clip_norm);
            Ok(Defended { batch, loss, grad, threshold: None, dsc_steps: None })
        }
        DefenseKind::At => {
            let batch = correct_at(&batch, ctx.params, cfg.at_eps, cfg.at_step, cfg.at_steps)?;
            let (loss, grad) = grad_hook(&batch)?;
            Ok(Defended { batch, loss, grad, threshold: None, dsc_steps: None })
        }
        DefenseKind::Dsc => {
            let (aux, p) = require_aux(cfg, ctx)?;
            let (batch, steps) = correct_dsc(
                &batch,
                ctx.params,
                aux,
                p,
                cfg.dsc_eps,
                cfg.dsc_step,
                cfg.dsc_max_steps,
                cfg.measure,
                ctx.exec,
            )?;
            let (loss, grad) = grad_hook(&batch)?;
            Ok(Defended { batch, loss, grad, threshold: Some(p), dsc_steps: Some(steps) })
        }
        DefenseKind::Dgc => {
            let (aux, p) = require_aux(cfg, ctx)?;
            let md = memorization_discrepancy(ctx.params, aux, &batch.features, cfg.measure)?;
            let (loss, grad) = grad_hook(&batch)?;
            let grad = defend_dgc(&grad, &md, p, cfg.gc_clip_norm);
            Ok(Defended { batch, loss, grad, threshold: Some(p), dsc_steps: None })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gc_rescales_long_gradients_only() {
        assert_eq!(defend_gc(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        let g = defend_gc(&[3.0, 4.0], 1.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn dgc_gates_on_mean_discrepancy() {
        let low = MdReport {
            per_sample: vec![0.1],
            mean: 0.1,
            std: 0.0,
            measure: Measure::Kl,
            interval_k: None,
            current_step: None,
            aux_step: None,
        };
        assert_eq!(defend_dgc(&[3.0, 4.0], &low, 0.5, 1.0), vec![3.0, 4.0]);
        let high = MdReport { mean: 0.9, ..low };
        let g = defend_dgc(&[3.0, 4.0], &high, 0.5, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("dsc".parse::<DefenseKind>().unwrap(), DefenseKind::Dsc);
        assert!("nope".parse::<DefenseKind>().is_err());
    }

    #[test]
    fn validate_requires_schedule_for_dsc() {
        let cfg = DefenseConfig::standard().with_kind(DefenseKind::Dsc);
        assert!(cfg.validate().is_err());
        let cfg = DefenseConfig {
            dsc_schedule: Some(ThresholdSchedule::new(0.5, 0.02).unwrap()),
            aux_checkpoint_id: Some(20),
            ..cfg
        };
        cfg.validate().unwrap();
    }
}
