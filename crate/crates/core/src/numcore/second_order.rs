//! Second-order products by central differences of analytic gradients.

use super::matrix::Matrix;
use super::mlp::{grad_input, grad_params, Batch, ParamState};
use crate::error::{check_dim, Error, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Default step used when no explicit `eps_fd` is given.
pub fn default_fd_step(direction: &[f64]) -> f64 {
    1e-4 / norm(direction).max(1.0)
}

fn resolve_step(direction: &[f64], eps_fd: Option<f64>) -> Result<f64> {
    let eps = eps_fd.unwrap_or_else(|| default_fd_step(direction));
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    Ok(eps)
}

/// Hessian-vector product `H v` of the mean batch loss.
pub fn fd_hvp(params: &ParamState, batch: &Batch, v: &[f64], eps_fd: Option<f64>) -> Result<Vec<f64>> {
    check_dim("hvp direction length", params.len(), v.len())?;
    if norm(v) < 1e-15 {
        return Err(Error::InvalidArgument(
            "hvp direction has (near) zero norm".into(),
        ));
    }
    let eps = resolve_step(v, eps_fd)?;
    let gp = grad_params(&params.offset(v, eps), batch)?;
    let gm = grad_params(&params.offset(v, -eps), batch)?;
    let inv = 1.0 / (2.0 * eps);
    let out: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) * inv).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "hvp result with eps_fd = {eps:e}; try a smaller step"
        )));
    }
    Ok(out)
}

/// Input-space gradient of `grad_theta(loss_i)^T u` for each sample.
pub fn fd_mixed_grad_input(
    params: &ParamState,
    features: &Matrix,
    labels: &[usize],
    u: &[f64],
    eps_fd: Option<f64>,
) -> Result<Matrix> {
    check_dim("mixed-derivative direction length", params.len(), u.len())?;
    let eps = resolve_step(u, eps_fd)?;
    let gp = grad_input(&params.offset(u, eps), features, labels)?;
    let gm = grad_input(&params.offset(u, -eps), features, labels)?;
    let inv = 1.0 / (2.0 * eps);
    let data: Vec<f64> = gp
        .as_slice()
        .iter()
        .zip(gm.as_slice())
        .map(|(a, b)| (a - b) * inv)
        .collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!(
            "mixed derivative with eps_fd = {eps:e}; try a smaller step"
        )));
    }
    Matrix::new(features.rows(), features.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ModelShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_zero_direction() {
        let s = ModelShape::mlp(&[2, 2]).unwrap();
        let p = ParamState::zeros(s);
        let b = Batch::new(Matrix::new(1, 2, vec![0.5, 0.5]).unwrap(), vec![0], 2).unwrap();
        assert!(fd_hvp(&p, &b, &[0.0; 6], None).is_err());
        assert!(fd_hvp(&p, &b, &[1e-16, 0.0, 0.0, 0.0, 0.0, 0.0], None).is_err());
    }

    #[test]
    fn mixed_zero_direction_and_sign_flip() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let s = ModelShape::mlp(&[3, 4, 2]).unwrap();
        let p = ParamState::init(s, &mut r);
        let f = Matrix::new(2, 3, (0..6).map(|_| r.random()).collect()).unwrap();
        let labels = [0, 1];
        let zero = vec![0.0; p.len()];
        let m0 = fd_mixed_grad_input(&p, &f, &labels, &zero, None).unwrap();
        assert!(m0.as_slice().iter().all(|&v| v == 0.0));
        let u: Vec<f64> = (0..p.len()).map(|_| r.random::<f64>() - 0.5).collect();
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        let a = fd_mixed_grad_input(&p, &f, &labels, &u, None).unwrap();
        let b = fd_mixed_grad_input(&p, &f, &labels, &neg, None).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x + y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
