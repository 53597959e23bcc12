//! Divergences between probability rows.

use super::matrix::Matrix;
use super::mlp::{forward_trace, input_grad_from_logit_grad, softmax, ParamState, PROB_FLOOR};
use crate::error::{check_dim, Result};

/// `sum_i p_i ln(p_i / q_i)` with `0 ln(0 / .) = 0` and `q` floored.
pub fn kl_div(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            acc += pi * (pi / qi.max(PROB_FLOOR)).ln();
        }
    }
    acc
}

/// Jensen-Shannon divergence, symmetric and bounded by `ln 2`.
pub fn js_div(p: &[f64], q: &[f64]) -> f64 {
    // Per-element terms are summed as (tp + tq), which is commutative in
    // IEEE arithmetic, so swapping the arguments is bit-exact.
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = (0.5 * (pi + qi)).max(PROB_FLOOR);
        let tp = if pi > 0.0 { pi * (pi / m).ln() } else { 0.0 };
        let tq = if qi > 0.0 { qi * (qi / m).ln() } else { 0.0 };
        acc += tp + tq;
    }
    0.5 * acc
}

/// Divergence used for the memorization discrepancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Measure {
    #[default]
    Kl,
    Js,
}

impl Measure {
    pub fn eval(self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            Measure::Kl => kl_div(p, q),
            Measure::Js => js_div(p, q),
        }
    }

    /// Partial derivatives of the divergence with respect to both
    /// probability arguments, ignoring the floor.
    pub(crate) fn prob_grads(self, p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            Measure::Kl => {
                let gp = p
                    .iter()
                    .zip(q)
                    .map(|(&pi, &qi)| {
                        if pi > 0.0 {
                            (pi / qi.max(PROB_FLOOR)).ln() + 1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let gq = p
                    .iter()
                    .zip(q)
                    .map(|(&pi, &qi)| -pi / qi.max(PROB_FLOOR))
                    .collect();
                (gp, gq)
            }
            Measure::Js => {
                let half_log = |a: f64, b: f64| {
                    if a > 0.0 {
                        0.5 * (a / (0.5 * (a + b)).max(PROB_FLOOR)).ln()
                    } else {
                        0.0
                    }
                };
                let gp = p.iter().zip(q).map(|(&a, &b)| half_log(a, b)).collect();
                let gq = p.iter().zip(q).map(|(&a, &b)| half_log(b, a)).collect();
                (gp, gq)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::Kl => "KL",
            Measure::Js => "JS",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "KL" => Ok(Measure::Kl),
            "JS" => Ok(Measure::Js),
            other => Err(format!("unknown measure `{other}` (expected KL or JS)")),
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Chains `dD/dprobs` through the softmax Jacobian: `p * (g - <p, g>)`.
pub(crate) fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(dprobs).map(|(p, g)| p * g).sum();
    probs.iter().zip(dprobs).map(|(p, g)| p * (g - dot)).collect()
}

/// Input gradient of `D(f(x; first), f(x; second))` for every row of
/// `features`, both heads differentiated through `x`.
pub fn divergence_grad_input(
    first: &ParamState,
    second: &ParamState,
    features: &Matrix,
    measure: Measure,
) -> Result<Matrix> {
    check_dim("feature dimension", first.shape().input_dim(), features.cols())?;
    check_dim("feature dimension", second.shape().input_dim(), features.cols())?;
    let mut out = Matrix::zeros(features.rows(), features.cols());
    for (i, x) in features.iter_rows().enumerate() {
        let ta = forward_trace(first, x);
        let tb = forward_trace(second, x);
        let pa = softmax(ta.logits());
        let pb = softmax(tb.logits());
        let (ga, gb) = measure.prob_grads(&pa, &pb);
        let da = input_grad_from_logit_grad(first, &ta, &softmax_backward(&pa, &ga));
        let db = input_grad_from_logit_grad(second, &tb, &softmax_backward(&pb, &gb));
        for ((o, a), b) in out.row_mut(i).iter_mut().zip(da).zip(db) {
            *o = a + b;
        }
    }
    Ok(out)
}
