//! Sign-gradient steps projected onto the l-inf ball and the unit box.

use crate::error::{Error, Result};
use crate::numcore::{grad_input, Batch, Matrix, ParamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgdMode {
    MaximizeLoss,
    MinimizeLoss,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One projected sign step on a single sample, in place.
///
/// `ascend` moves along `+sign(dir)`. The result lies in
/// `[x0 - eps, x0 + eps] ∩ [0, 1]` coordinate-wise.
#[inline]
pub(crate) fn projected_sign_step(x: &mut [f64], x0: &[f64], dir: &[f64], step: f64, eps: f64, ascend: bool) {
    let s = if ascend { step } else { -step };
    for ((xi, &oi), &di) in x.iter_mut().zip(x0).zip(dir) {
        let lo = (oi - eps).max(0.0);
        let hi = (oi + eps).min(1.0);
        *xi = (*xi + s * sign(di)).clamp(lo.min(hi), hi);
    }
}

/// Runs `steps` projected sign iterations from `batch`, asking `direction`
/// for the per-sample ascent direction at the current iterate.
pub(crate) fn pgd_with<F>(
    batch: &Batch,
    eps: f64,
    step: f64,
    steps: usize,
    ascend: bool,
    mut direction: F,
) -> Result<Batch>
where
    F: FnMut(&Matrix, usize) -> Result<Matrix>,
{
    if eps == 0.0 || steps == 0 {
        return Ok(batch.clone());
    }
    let x0 = &batch.features;
    let mut x = x0.clone();
    for it in 0..steps {
        let dir = direction(&x, it)?;
        if let Some(v) = dir.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("crafting direction {v} at PGD step {it}")));
        }
        for i in 0..x.rows() {
            projected_sign_step(x.row_mut(i), x0.row(i), dir.row(i), step, eps, ascend);
        }
    }
    Ok(Batch {
        features: x,
        labels: batch.labels.clone(),
    })
}

/// Projected gradient-sign steps on each sample's own loss.
pub fn pgd_perturb(
    batch: &Batch,
    params: &ParamState,
    eps: f64,
    step: f64,
    steps: usize,
    mode: PgdMode,
) -> Result<Batch> {
    let ascend = mode == PgdMode::MaximizeLoss;
    pgd_with(batch, eps, step, steps, ascend, |x, _| {
        grad_input(params, x, &batch.labels)
    })
}

/// Checks the projection contract of `crafted` against `original`.
pub fn within_budget(original: &Batch, crafted: &Batch, eps: f64) -> bool {
    original.labels == crafted.labels
        && original
            .features
            .as_slice()
            .iter()
            .zip(crafted.features.as_slice())
            .all(|(&a, &b)| (a - b).abs() <= eps + 1e-12 && (-1e-12..=1.0 + 1e-12).contains(&b))
}
