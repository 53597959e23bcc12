//! Trigger-batch and accumulative-batch crafting.
//!
//! With `g(S)` the mean-loss parameter gradient of a batch at the generating
//! model, the trigger batch descends `g(P(S_T))^T g(S_val)` so one update on
//! it raises validation loss. Accumulative batches ascend
//! `g(A(S_t))^T [g(S_t) + lambda * v]` with
//! `v = grad_theta(g(S_val)^T g(S_T)) = H_val g_T + H_T g_val`, which pushes
//! the model toward states where the trigger inner product is more negative.

use super::pgd::pgd_with;
use super::AttackConfig;
use crate::error::{Error, Result};
use crate::numcore::{
    divergence_grad_input, fd_hvp, fd_mixed_grad_input, grad_params, Batch, Measure, ParamState,
};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `g(batch)^T u`, the scalar the trigger crafting descends.
pub fn trigger_objective(params: &ParamState, batch: &Batch, u: &[f64]) -> Result<f64> {
    Ok(dot(&grad_params(params, batch)?, u))
}

/// Descends `g(x)^T g(S_val)` over the trigger features.
pub fn craft_trigger(
    trigger: &Batch,
    params: &ParamState,
    val: &Batch,
    cfg: &AttackConfig,
) -> Result<Batch> {
    if cfg.eps == 0.0 || cfg.n_steps == 0 {
        return Ok(trigger.clone());
    }
    let u = grad_params(params, val)?;
    craft_trigger_with_direction(trigger, params, &u, cfg)
}

/// Trigger crafting against an explicit parameter-space direction `u`.
pub fn craft_trigger_with_direction(
    trigger: &Batch,
    params: &ParamState,
    u: &[f64],
    cfg: &AttackConfig,
) -> Result<Batch> {
    pgd_with(trigger, cfg.eps, cfg.step_size, cfg.n_steps, false, |x, it| {
        fd_mixed_grad_input(params, x, &trigger.labels, u, cfg.eps_fd).map_err(|e| {
            Error::NonFinite(format!("trigger crafting at PGD step {it}: {e}"))
        })
    })
}

/// `grad_theta (g_val^T g_trig)` by the product rule and two HVPs.
pub fn meta_gradient(
    params: &ParamState,
    val: &Batch,
    trigger: &Batch,
    eps_fd: Option<f64>,
) -> Result<Vec<f64>> {
    let g_val = grad_params(params, val)?;
    let g_trig = grad_params(params, trigger)?;
    let mut v = vec![0.0; params.len()];
    if norm(&g_trig) >= 1e-15 {
        for (a, b) in v.iter_mut().zip(fd_hvp(params, val, &g_trig, eps_fd)?) {
            *a += b;
        }
    }
    if norm(&g_val) >= 1e-15 {
        for (a, b) in v.iter_mut().zip(fd_hvp(params, trigger, &g_val, eps_fd)?) {
            *a += b;
        }
    }
    Ok(v)
}

/// Parameter-space direction the accumulative batch is aligned with:
/// `g(stream) + lambda * v`.
pub fn accumulative_direction(
    stream: &Batch,
    params: &ParamState,
    val: &Batch,
    trigger: &Batch,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    let v = if cfg.lambda > 0.0 {
        Some(meta_gradient(params, val, trigger, cfg.eps_fd)?)
    } else {
        None
    };
    with_meta_term(grad_params(params, stream)?, v.as_deref(), cfg.lambda)
}

fn with_meta_term(mut g: Vec<f64>, v: Option<&[f64]>, lambda: f64) -> Result<Vec<f64>> {
    if let Some(v) = v {
        for (a, b) in g.iter_mut().zip(v) {
            *a += lambda * b;
        }
    }
    Ok(g)
}

/// Crafts one accumulative batch from a clean stream batch.
///
/// `params` is the generating model (the victim, or a surrogate in the
/// black-box setting). The clean term of the direction is re-evaluated on the
/// current iterate at every step; the meta term depends only on the
/// validation and trigger batches and is computed once. With `beta > 0` each
/// ascent direction is reduced by `beta * grad_x D(f(x; aux), f(x; params))`.
pub fn accumulative_perturb(
    stream: &Batch,
    params: &ParamState,
    val: &Batch,
    trigger: &Batch,
    cfg: &AttackConfig,
    aux: Option<&ParamState>,
    measure: Measure,
) -> Result<Batch> {
    if cfg.eps == 0.0 || cfg.n_steps == 0 {
        return Ok(stream.clone());
    }
    let aux = if cfg.beta > 0.0 {
        Some(aux.ok_or_else(|| {
            Error::InvalidArgument("adaptive attack (beta > 0) needs auxiliary parameters".into())
        })?)
    } else {
        None
    };
    let v = if cfg.lambda > 0.0 {
        Some(meta_gradient(params, val, trigger, cfg.eps_fd)?)
    } else {
        None
    };
    pgd_with(stream, cfg.eps, cfg.step_size, cfg.n_steps, true, |x, it| {
        let live = Batch {
            features: x.clone(),
            labels: stream.labels.clone(),
        };
        let u = with_meta_term(grad_params(params, &live)?, v.as_deref(), cfg.lambda)?;
        let mut dir = fd_mixed_grad_input(params, x, &stream.labels, &u, cfg.eps_fd).map_err(
            |e| Error::NonFinite(format!("accumulative crafting at PGD step {it}: {e}")),
        )?;
        if let Some(aux) = aux {
            let md = divergence_grad_input(aux, params, x, measure)?;
            for (d, m) in dir.as_mut_slice().iter_mut().zip(md.as_slice()) {
                *d -= cfg.beta * m;
            }
        }
        Ok(dir)
    })
}
