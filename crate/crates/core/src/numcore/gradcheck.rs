//! Finite-difference verification of the analytic and second-order operators
//! on small seeded random models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use super::mlp::{
    cross_entropy_loss, grad_input, grad_params, min_hidden_preactivation, Batch, ModelShape,
    ParamState,
};
use super::second_order::{fd_hvp, fd_mixed_grad_input};
use crate::error::Result;

/// Central-difference step of the first-order oracles.
pub const ORACLE_STEP: f64 = 1e-5;
/// Entries below this magnitude are skipped by the elementwise comparison.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;
/// Hidden pre-activations are kept at least this far from the rectifier kink.
const KINK_MARGIN: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub first_order: f64,
    pub second_order: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            first_order: 1e-5,
            second_order: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    pub tolerances: Tolerances,
    /// Adds `1e-2` to the first analytic parameter-gradient entry.
    pub inject_fault: bool,
}

/// Worst-case relative errors for one seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub n_params: usize,
    pub grad_params: f64,
    pub grad_input: f64,
    pub hvp: f64,
    pub hvp_linearity: f64,
    pub mixed: f64,
}

impl GradcheckReport {
    /// Names of operators whose error exceeds its tolerance.
    pub fn failures(&self, tol: &Tolerances) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.grad_params <= tol.first_order) {
            out.push("grad_params");
        }
        if !(self.grad_input <= tol.first_order) {
            out.push("grad_input");
        }
        if !(self.hvp <= tol.second_order) {
            out.push("fd_hvp");
        }
        if !(self.hvp_linearity <= tol.second_order) {
            out.push("fd_hvp (linearity)");
        }
        if !(self.mixed <= tol.second_order) {
            out.push("fd_mixed_grad_input");
        }
        out
    }
}

/// Elementwise relative error over entries that are not negligible.
pub fn max_rel_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .filter(|(a, b)| a.abs() > MAGNITUDE_FLOOR || b.abs() > MAGNITUDE_FLOOR)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()))
        .fold(0.0, f64::max)
}

/// `||a - b|| / ||b||`.
pub fn norm_rel_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// A random model with at most 60 parameters and a batch whose hidden
/// pre-activations keep clear of zero.
pub fn tiny_problem(seed: u64) -> (ParamState, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164_6368_6b00);
    loop {
        let d = rng.random_range(2..=3);
        let c = rng.random_range(2..=3);
        let widths = if rng.random_bool(0.5) {
            vec![d, rng.random_range(2..=4), c]
        } else {
            vec![d, rng.random_range(2..=3), rng.random_range(2..=3), c]
        };
        let shape = ModelShape::mlp(&widths).expect("valid widths");
        debug_assert!(shape.n_params() <= 60);
        let values = (0..shape.n_params())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let params = ParamState::new(shape, values).expect("finite");
        let n = rng.random_range(2..=4);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..200 {
            let x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
            if min_hidden_preactivation(&params, &x) >= KINK_MARGIN {
                rows.push(x);
                if rows.len() == n {
                    break;
                }
            }
        }
        if rows.len() < n {
            continue;
        }
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        let batch = Batch {
            features: Matrix::from_rows(&rows).expect("rectangular"),
            labels,
        };
        return (params, batch);
    }
}

fn fd_loss_grad(params: &ParamState, batch: &Batch) -> Result<Vec<f64>> {
    let n = params.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let lp = cross_entropy_loss(&params.offset(&e, ORACLE_STEP), batch)?;
        let lm = cross_entropy_loss(&params.offset(&e, -ORACLE_STEP), batch)?;
        out.push((lp - lm) / (2.0 * ORACLE_STEP));
    }
    Ok(out)
}

fn single(batch: &Batch, i: usize, x: Vec<f64>) -> Batch {
    Batch {
        features: Matrix::new(1, x.len(), x).expect("row"),
        labels: vec![batch.labels[i]],
    }
}

fn fd_input_grad(params: &ParamState, batch: &Batch) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..batch.len() {
        let x = batch.features.row(i);
        for j in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += ORACLE_STEP;
            xm[j] -= ORACLE_STEP;
            let lp = cross_entropy_loss(params, &single(batch, i, xp))?;
            let lm = cross_entropy_loss(params, &single(batch, i, xm))?;
            out.push((lp - lm) / (2.0 * ORACLE_STEP));
        }
    }
    Ok(out)
}

/// Dense Hessian of the mean loss, one central difference of the analytic
/// gradient per coordinate, contracted with `v`.
pub fn dense_hessian_times(params: &ParamState, batch: &Batch, v: &[f64]) -> Result<Vec<f64>> {
    let n = params.len();
    let mut hv = vec![0.0; n];
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let gp = grad_params(&params.offset(&e, ORACLE_STEP), batch)?;
        let gm = grad_params(&params.offset(&e, -ORACLE_STEP), batch)?;
        // column k of H times v_k
        for (h, (a, b)) in hv.iter_mut().zip(gp.iter().zip(&gm)) {
            *h += (a - b) / (2.0 * ORACLE_STEP) * v[k];
        }
    }
    Ok(hv)
}

/// Dense mixed second derivative `d^2 loss_i / dx_ij dtheta_k`, built by
/// differencing per-sample parameter gradients over each input coordinate,
/// contracted with `u`.
pub fn dense_mixed_times(params: &ParamState, batch: &Batch, u: &[f64]) -> Result<Matrix> {
    let d = batch.features.cols();
    let mut out = Matrix::zeros(batch.len(), d);
    for i in 0..batch.len() {
        let x = batch.features.row(i);
        for j in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += ORACLE_STEP;
            xm[j] -= ORACLE_STEP;
            let gp = grad_params(params, &single(batch, i, xp))?;
            let gm = grad_params(params, &single(batch, i, xm))?;
            out.row_mut(i)[j] = gp
                .iter()
                .zip(&gm)
                .zip(u)
                .map(|((a, b), w)| (a - b) / (2.0 * ORACLE_STEP) * w)
                .sum();
        }
    }
    Ok(out)
}

/// Runs every oracle comparison for one seed.
pub fn gradcheck(seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let (params, batch) = tiny_problem(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));

    let mut g = grad_params(&params, &batch)?;
    if opts.inject_fault {
        g[0] += 1e-2;
    }
    let g_fd = fd_loss_grad(&params, &batch)?;
    let gp_err = max_rel_error(&g, &g_fd);

    let gx = grad_input(&params, &batch.features, &batch.labels)?;
    let gx_fd = fd_input_grad(&params, &batch)?;
    let gx_err = max_rel_error(gx.as_slice(), &gx_fd);

    let v: Vec<f64> = (0..params.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hv = fd_hvp(&params, &batch, &v, None)?;
    let hv_dense = dense_hessian_times(&params, &batch, &v)?;
    let hvp_err = norm_rel_error(&hv, &hv_dense);
    let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
    let hv2 = fd_hvp(&params, &batch, &v2, None)?;
    let twice: Vec<f64> = hv.iter().map(|x| 2.0 * x).collect();
    let lin_err = norm_rel_error(&hv2, &twice);

    let u: Vec<f64> = (0..params.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mixed = fd_mixed_grad_input(&params, &batch.features, &batch.labels, &u, None)?;
    let mixed_dense = dense_mixed_times(&params, &batch, &u)?;
    let mixed_err = norm_rel_error(mixed.as_slice(), mixed_dense.as_slice());

    Ok(GradcheckReport {
        seed,
        n_params: params.len(),
        grad_params: gp_err,
        grad_input: gx_err,
        hvp: hvp_err,
        hvp_linearity: lin_err,
        mixed: mixed_err,
    })
}
