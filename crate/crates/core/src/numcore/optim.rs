use super::mlp::ParamState;
use crate::error::{check_dim, Error, Result};

/// Heavy-ball SGD with L2 weight decay folded into the momentum buffer.
///
/// `buffer <- momentum * buffer + grad + weight_decay * params`,
/// `params <- params - lr * buffer`.
pub fn sgd_step(
    params: &ParamState,
    grad: &[f64],
    lr: f64,
    buffer: &[f64],
    momentum: f64,
    weight_decay: f64,
) -> Result<(ParamState, Vec<f64>)> {
    check_dim("gradient length", params.len(), grad.len())?;
    check_dim("momentum buffer length", params.len(), buffer.len())?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {i}; refusing the update"
        )));
    }
    let mut new_buf = Vec::with_capacity(buffer.len());
    let mut new_params = Vec::with_capacity(buffer.len());
    for ((&p, &g), &b) in params.values().iter().zip(grad).zip(buffer) {
        let nb = momentum * b + g + weight_decay * p;
        new_buf.push(nb);
        new_params.push(p - lr * nb);
    }
    Ok((ParamState::new(params.shape().clone(), new_params)?, new_buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::ModelShape;

    fn params() -> ParamState {
        let s = ModelShape::mlp(&[1, 2]).unwrap();
        ParamState::new(s, vec![0.5, -1.0, 0.25, 2.0]).unwrap()
    }

    #[test]
    fn zero_lr_keeps_params() {
        let p = params();
        let (q, _) = sgd_step(&p, &[1.0; 4], 0.0, &[0.0; 4], 0.9, 1e-4).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn plain_descent_without_momentum() {
        let p = params();
        let g = [0.1, -0.2, 0.3, 0.4];
        let (q, _) = sgd_step(&p, &g, 0.5, &[0.0; 4], 0.0, 0.0).unwrap();
        for ((a, b), gi) in q.values().iter().zip(p.values()).zip(g) {
            assert_eq!(*a, b - 0.5 * gi);
        }
    }

    #[test]
    fn two_momentum_steps_unrolled() {
        let p = params();
        let g = [0.1, -0.2, 0.3, 0.4];
        let (q1, b1) = sgd_step(&p, &g, 0.1, &[0.0; 4], 0.9, 0.0).unwrap();
        let (q2, _) = sgd_step(&q1, &g, 0.1, &b1, 0.9, 0.0).unwrap();
        for ((a, b), gi) in q2.values().iter().zip(p.values()).zip(g) {
            let expected = b - 0.1 * (gi + (0.9 * gi + gi));
            assert!((a - expected).abs() <= 1e-15, "{a} vs {expected}");
        }
    }

    #[test]
    fn non_finite_gradient_refused() {
        let p = params();
        let err = sgd_step(&p, &[0.0, f64::NAN, 0.0, 0.0], 0.1, &[0.0; 4], 0.9, 0.0);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn bit_deterministic() {
        let p = params();
        let g = [0.123, -0.456, 0.789, 1e-3];
        let a = sgd_step(&p, &g, 0.1, &[0.2; 4], 0.9, 1e-4).unwrap();
        let b = sgd_step(&p, &g, 0.1, &[0.2; 4], 0.9, 1e-4).unwrap();
        assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.0, b.0);
    }
}
