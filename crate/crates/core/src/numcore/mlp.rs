//! Fully connected rectifier network with analytic first-order gradients.
//!
//! Parameters live in one flat vector. Layer `l` occupies a contiguous block
//! holding its `out x in` weight matrix (row-major) followed by its `out`
//! biases. Hidden layers apply a rectifier; the output layer is linear and
//! feeds a softmax.

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{check_dim, Error, Result};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Slack allowed on the `[0, 1]` feature domain.
pub const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

/// Layer layout of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    layer_dims: Vec<(usize, usize)>,
    activation: Activation,
}

impl ModelShape {
    pub fn new(layer_dims: Vec<(usize, usize)>) -> Result<Self> {
        if layer_dims.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for w in layer_dims.windows(2) {
            check_dim("layer chaining (in_dim of next layer)", w[0].1, w[1].0)?;
        }
        let (d, _) = layer_dims[0];
        let (_, c) = *layer_dims.last().unwrap();
        if d < 1 {
            return Err(Error::InvalidArgument("feature dimension must be >= 1".into()));
        }
        if c < 2 {
            return Err(Error::InvalidArgument(format!(
                "class count must be >= 2, got {c}"
            )));
        }
        if layer_dims.iter().any(|&(i, o)| i == 0 || o == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(Self {
            layer_dims,
            activation: Activation::Relu,
        })
    }

    /// Builds a chain from a width list such as `[8, 32, 32, 4]`.
    pub fn mlp(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(
                "width list needs input and output sizes".into(),
            ));
        }
        Self::new(widths.windows(2).map(|w| (w[0], w[1])).collect())
    }

    pub fn layer_dims(&self) -> &[(usize, usize)] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0].0
    }

    pub fn n_classes(&self) -> usize {
        self.layer_dims.last().unwrap().1
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims.iter().map(|&(i, o)| (i + 1) * o).sum()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layer_dims.iter().map(|&(_, o)| o));
        w
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layer_dims.len());
        let mut acc = 0;
        for &(i, o) in &self.layer_dims {
            off.push(acc);
            acc += (i + 1) * o;
        }
        off
    }
}

/// Flat parameter vector tied to its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    values: Vec<f64>,
    shape: ModelShape,
}

impl ParamState {
    pub fn new(shape: ModelShape, values: Vec<f64>) -> Result<Self> {
        check_dim("parameter vector length", shape.n_params(), values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter entry {i}")));
        }
        Ok(Self { values, shape })
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            values: vec![0.0; shape.n_params()],
            shape,
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        let mut values = vec![0.0; shape.n_params()];
        for (&(fan_in, out), &off) in shape.layer_dims.iter().zip(&shape.offsets()) {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut values[off..off + fan_in * out] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Self { values, shape }
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Returns `self + scale * direction`, skipping the finiteness check.
    pub(crate) fn offset(&self, direction: &[f64], scale: f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(direction)
            .map(|(p, d)| p + scale * d)
            .collect();
        Self {
            values,
            shape: self.shape.clone(),
        }
    }

    /// Views the weight matrix and bias vector of layer `l`.
    fn layer(&self, l: usize, off: usize) -> (&[f64], &[f64]) {
        let (i, o) = self.shape.layer_dims[l];
        let w = &self.values[off..off + i * o];
        let b = &self.values[off + i * o..off + (i + 1) * o];
        (w, b)
    }
}

/// Labeled mini-batch with features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    /// Validates the batch against a feature dimension and class count.
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let b = Self { features, labels };
        b.validate(b.features.cols(), n_classes)?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self, dim: usize, n_classes: usize) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::InvalidArgument("batch must hold at least one sample".into()));
        }
        check_dim("batch label count", self.features.rows(), self.labels.len())?;
        check_dim("feature dimension", dim, self.features.cols())?;
        if let Some(&y) = self.labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {y} outside [0, {n_classes})"
            )));
        }
        if let Some(v) = self
            .features
            .as_slice()
            .iter()
            .find(|v| !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(*v))
        {
            return Err(Error::InvalidArgument(format!(
                "feature value {v} outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Batch) -> Result<Self> {
        let features = self.features.vstack(&other.features)?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self { features, labels })
    }
}

/// Activations from one forward pass: `acts[0]` is the input, `acts[l]` the
/// post-activation output of layer `l - 1`, and the last entry holds logits.
pub(crate) struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn logits(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

pub(crate) fn forward_trace(params: &ParamState, x: &[f64]) -> Trace {
    let shape = &params.shape;
    let n_layers = shape.layer_dims.len();
    let mut acts = Vec::with_capacity(n_layers + 1);
    acts.push(x.to_vec());
    let mut off = 0;
    for l in 0..n_layers {
        let (n_in, n_out) = shape.layer_dims[l];
        let (w, b) = params.layer(l, off);
        let input = &acts[l];
        let mut out = b.to_vec();
        for (o, z) in out.iter_mut().enumerate() {
            let row = &w[o * n_in..(o + 1) * n_in];
            for (wi, xi) in row.iter().zip(input) {
                *z += wi * xi;
            }
        }
        if l + 1 < n_layers {
            for z in &mut out {
                if *z < 0.0 {
                    *z = 0.0;
                }
            }
        }
        acts.push(out);
        off += (n_in + 1) * n_out;
    }
    Trace { acts }
}

/// Smallest absolute hidden pre-activation for one input; used by gradient
/// checks to stay clear of rectifier kinks.
pub(crate) fn min_hidden_preactivation(params: &ParamState, x: &[f64]) -> f64 {
    let shape = &params.shape;
    let n_layers = shape.layer_dims.len();
    let mut input = x.to_vec();
    let mut off = 0;
    let mut min_abs = f64::INFINITY;
    for l in 0..n_layers.saturating_sub(1) {
        let (n_in, n_out) = shape.layer_dims[l];
        let (w, b) = params.layer(l, off);
        let mut out = b.to_vec();
        for (o, z) in out.iter_mut().enumerate() {
            for (wi, xi) in w[o * n_in..(o + 1) * n_in].iter().zip(&input) {
                *z += wi * xi;
            }
            min_abs = min_abs.min(z.abs());
            *z = z.max(0.0);
        }
        input = out;
        off += (n_in + 1) * n_out;
    }
    min_abs
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    for v in &mut e {
        *v /= s;
    }
    e
}

/// Backpropagates `dlogits` through the trace.
///
/// Adds `scale * dL/dθ` into `grad` when given, and returns `dL/dx` when
/// `want_input` is set.
pub(crate) fn backward(
    params: &ParamState,
    trace: &Trace,
    dlogits: &[f64],
    grad: Option<(&mut [f64], f64)>,
    want_input: bool,
) -> Option<Vec<f64>> {
    let shape = &params.shape;
    let offsets = shape.offsets();
    let n_layers = shape.layer_dims.len();
    let mut delta = dlogits.to_vec();
    let mut grad = grad;
    for l in (0..n_layers).rev() {
        let (n_in, n_out) = shape.layer_dims[l];
        let off = offsets[l];
        let input = &trace.acts[l];
        if let Some((g, scale)) = grad.as_mut() {
            let (gw, gb) = g[off..off + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = *scale * delta[o];
                for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *gwi += d * xi;
                }
                gb[o] += d;
            }
        }
        if l == 0 && !want_input {
            break;
        }
        let (w, _) = params.layer(l, off);
        let mut prev = vec![0.0; n_in];
        for o in 0..n_out {
            let d = delta[o];
            for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *p += wi * d;
            }
        }
        if l > 0 {
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        delta = prev;
    }
    if want_input {
        Some(delta)
    } else {
        None
    }
}

fn check_features(params: &ParamState, features: &Matrix) -> Result<()> {
    check_dim("feature dimension", params.shape.input_dim(), features.cols())
}

fn check_batch(params: &ParamState, batch: &Batch) -> Result<()> {
    check_features(params, &batch.features)?;
    check_dim("batch label count", batch.features.rows(), batch.labels.len())?;
    let c = params.shape.n_classes();
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidArgument(format!("label {y} outside [0, {c})")));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(())
}

/// Softmax probabilities, one row per input.
pub fn forward_probs(params: &ParamState, features: &Matrix) -> Result<Matrix> {
    check_features(params, features)?;
    let c = params.shape.n_classes();
    let mut out = Matrix::zeros(features.rows(), c);
    for (i, x) in features.iter_rows().enumerate() {
        let t = forward_trace(params, x);
        out.row_mut(i).copy_from_slice(&softmax(t.logits()));
    }
    Ok(out)
}

/// Raw output-layer scores.
pub fn forward_logits(params: &ParamState, features: &Matrix) -> Result<Matrix> {
    check_features(params, features)?;
    let c = params.shape.n_classes();
    let mut out = Matrix::zeros(features.rows(), c);
    for (i, x) in features.iter_rows().enumerate() {
        out.row_mut(i).copy_from_slice(forward_trace(params, x).logits());
    }
    Ok(out)
}

#[inline]
pub(crate) fn sample_loss(probs: &[f64], y: usize) -> f64 {
    -probs[y].max(PROB_FLOOR).ln()
}

/// Per-sample cross-entropy losses.
pub fn per_sample_losses(params: &ParamState, batch: &Batch) -> Result<Vec<f64>> {
    check_batch(params, batch)?;
    Ok(batch
        .features
        .iter_rows()
        .zip(&batch.labels)
        .map(|(x, &y)| sample_loss(&softmax(forward_trace(params, x).logits()), y))
        .collect())
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy_loss(params: &ParamState, batch: &Batch) -> Result<f64> {
    let losses = per_sample_losses(params, batch)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean loss and its gradient with respect to every parameter.
pub fn loss_and_grad(params: &ParamState, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    check_batch(params, batch)?;
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (x, &y) in batch.features.iter_rows().zip(&batch.labels) {
        let t = forward_trace(params, x);
        let mut d = softmax(t.logits());
        loss += sample_loss(&d, y);
        d[y] -= 1.0;
        backward(params, &t, &d, Some((&mut grad, scale)), false);
    }
    Ok((loss * scale, grad))
}

/// Gradient of the mean cross-entropy with respect to the parameters.
pub fn grad_params(params: &ParamState, batch: &Batch) -> Result<Vec<f64>> {
    loss_and_grad(params, batch).map(|(_, g)| g)
}

/// Per-sample gradient of each sample's own loss with respect to its input.
pub fn grad_input(params: &ParamState, features: &Matrix, labels: &[usize]) -> Result<Matrix> {
    check_features(params, features)?;
    check_dim("label count", features.rows(), labels.len())?;
    let mut out = Matrix::zeros(features.rows(), features.cols());
    for (i, (x, &y)) in features.iter_rows().zip(labels).enumerate() {
        let t = forward_trace(params, x);
        let mut d = softmax(t.logits());
        d[y] -= 1.0;
        let gx = backward(params, &t, &d, None, true).unwrap();
        out.row_mut(i).copy_from_slice(&gx);
    }
    Ok(out)
}

/// Input gradient of a scalar that depends on the logits only.
pub(crate) fn input_grad_from_logit_grad(
    params: &ParamState,
    trace: &Trace,
    dlogits: &[f64],
) -> Vec<f64> {
    backward(params, trace, dlogits, None, true).unwrap()
}

/// Index of the largest probability; ties go to the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_batch(r: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> Batch {
        let data = (0..n * d).map(|_| r.random::<f64>()).collect();
        let labels = (0..n).map(|_| r.random_range(0..c)).collect();
        Batch::new(Matrix::new(n, d, data).unwrap(), labels, c).unwrap()
    }

    #[test]
    fn shape_rejects_broken_chain() {
        assert!(matches!(
            ModelShape::new(vec![(2, 3), (4, 2)]),
            Err(Error::Dimension { .. })
        ));
        assert!(ModelShape::mlp(&[3, 1]).is_err());
        assert_eq!(ModelShape::mlp(&[8, 32, 32, 4]).unwrap().n_params(), 1476);
    }

    #[test]
    fn param_state_checks_length_and_finiteness() {
        let s = ModelShape::mlp(&[2, 3, 2]).unwrap();
        assert!(ParamState::new(s.clone(), vec![0.0; 5]).is_err());
        let mut v = vec![0.0; s.n_params()];
        v[3] = f64::NAN;
        assert!(matches!(ParamState::new(s, v), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_weights_give_uniform_rows() {
        let s = ModelShape::mlp(&[3, 4]).unwrap();
        let p = ParamState::zeros(s);
        let mut r = rng(1);
        let b = random_batch(&mut r, 6, 3, 4);
        let probs = forward_probs(&p, &b.features).unwrap();
        for row in probs.iter_rows() {
            for &v in row {
                assert_eq!(v, 0.25);
            }
        }
        assert_relative_eq!(
            cross_entropy_loss(&p, &b).unwrap(),
            4f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn saturated_true_class() {
        // 1 -> 1 hidden (identity on positive inputs) -> 2 classes
        let s = ModelShape::mlp(&[1, 1, 2]).unwrap();
        // layer0: w=1, b=0 ; layer1: w=[0, 50], b=[0, 0]
        let p = ParamState::new(s, vec![1.0, 0.0, 0.0, 50.0, 0.0, 0.0]).unwrap();
        let f = Matrix::new(1, 1, vec![0.8]).unwrap();
        let probs = forward_probs(&p, &f).unwrap();
        assert!(probs.row(0)[1] > 0.99);
        let b = Batch::new(f, vec![1], 2).unwrap();
        assert!(cross_entropy_loss(&p, &b).unwrap() < 1e-12);
        let g = grad_params(&p, &b).unwrap();
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn dimension_mismatch_names_dimension() {
        let s = ModelShape::mlp(&[3, 2]).unwrap();
        let p = ParamState::zeros(s);
        let err = forward_probs(&p, &Matrix::zeros(2, 4)).unwrap_err();
        assert!(err.to_string().contains("feature dimension"), "{err}");
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let mut r = rng(7);
        let s = ModelShape::mlp(&[3, 5, 3]).unwrap();
        let p = ParamState::init(s, &mut r);
        let b = random_batch(&mut r, 7, 3, 3);
        let g1 = grad_params(&p, &b).unwrap();
        let g2 = grad_params(&p, &b.concat(&b).unwrap()).unwrap();
        for (a, c) in g1.iter().zip(&g2) {
            assert_relative_eq!(a, c, epsilon = 1e-15, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_first_layer_disconnects_input() {
        let mut r = rng(3);
        let s = ModelShape::mlp(&[4, 3, 2]).unwrap();
        let mut v = ParamState::init(s.clone(), &mut r).values().to_vec();
        for x in &mut v[..4 * 3] {
            *x = 0.0;
        }
        let p = ParamState::new(s, v).unwrap();
        let b = random_batch(&mut r, 5, 4, 2);
        let gx = grad_input(&p, &b.features, &b.labels).unwrap();
        assert!(gx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permuting_samples_permutes_input_gradients() {
        let mut r = rng(11);
        let s = ModelShape::mlp(&[3, 6, 3]).unwrap();
        let p = ParamState::init(s, &mut r);
        let b = random_batch(&mut r, 5, 3, 3);
        let perm = [3, 0, 4, 1, 2];
        let g = grad_input(&p, &b.features, &b.labels).unwrap();
        let pb = b.select(&perm);
        let gp = grad_input(&p, &pb.features, &pb.labels).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(gp.row(k), g.row(i));
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
    }
}
