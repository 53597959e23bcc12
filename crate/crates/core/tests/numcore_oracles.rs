//! Independent oracles for the numerical core.

use memdisc::numcore::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line evaluation of a 2-3-2 rectifier network.
fn straight_line_232(p: &[f64], x: &[f64]) -> [f64; 2] {
    // layer 0: W0 (3x2) at 0..6, b0 at 6..9; layer 1: W1 (2x3) at 9..15, b1 at 15..17
    let mut h = [0.0; 3];
    for o in 0..3 {
        let z = p[o * 2] * x[0] + p[o * 2 + 1] * x[1] + p[6 + o];
        h[o] = if z > 0.0 { z } else { 0.0 };
    }
    let mut z = [0.0; 2];
    for o in 0..2 {
        z[o] = p[9 + o * 3] * h[0] + p[9 + o * 3 + 1] * h[1] + p[9 + o * 3 + 2] * h[2] + p[15 + o];
    }
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

fn random_simplex(r: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| -r.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(42);
    let shape = ModelShape::mlp(&[2, 3, 2]).unwrap();
    let values: Vec<f64> = (0..shape.n_params()).map(|_| r.random_range(-2.0..2.0)).collect();
    let params = ParamState::new(shape, values.clone()).unwrap();
    let rows: Vec<Vec<f64>> = (0..5).map(|_| vec![r.random(), r.random()]).collect();
    let probs = forward_probs(&params, &Matrix::from_rows(&rows).unwrap()).unwrap();
    for (i, x) in rows.iter().enumerate() {
        let want = straight_line_232(&values, x);
        for (got, want) in probs.row(i).iter().zip(&want) {
            assert!((got - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn cross_entropy_matches_resummation() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let shape = ModelShape::mlp(&[2, 3, 2]).unwrap();
    let values: Vec<f64> = (0..shape.n_params()).map(|_| r.random_range(-2.0..2.0)).collect();
    let params = ParamState::new(shape, values.clone()).unwrap();
    let rows: Vec<Vec<f64>> = (0..8).map(|_| vec![r.random(), r.random()]).collect();
    let labels: Vec<usize> = (0..8).map(|_| r.random_range(0..2)).collect();
    let batch = Batch::new(Matrix::from_rows(&rows).unwrap(), labels.clone(), 2).unwrap();
    let mut acc = 0.0;
    for (x, &y) in rows.iter().zip(&labels) {
        acc += -straight_line_232(&values, x)[y].max(1e-12).ln();
    }
    let got = cross_entropy_loss(&params, &batch).unwrap();
    assert!((got - acc / 8.0).abs() <= 1e-12);
}

#[test]
fn kl_matches_direct_summation_on_random_pairs() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let c = r.random_range(2..=6);
        let p = random_simplex(&mut r, c);
        let q = random_simplex(&mut r, c);
        let mut want = 0.0;
        for i in 0..c {
            want += p[i] * (p[i].ln() - q[i].max(1e-12).ln());
        }
        let got = kl_div(&p, &q);
        assert!(got >= -1e-12);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        assert!(kl_div(&p, &p).abs() <= 1e-12);
    }
}

#[test]
fn gradcheck_is_reproducible_and_detects_faults() {
    let opts = GradcheckOptions::default();
    let a = gradcheck(17, &opts).unwrap();
    let b = gradcheck(17, &opts).unwrap();
    assert_eq!(a, b);
    assert!(a.failures(&opts.tolerances).is_empty(), "{a:?}");
    let faulty = GradcheckOptions {
        inject_fault: true,
        ..opts
    };
    let f = gradcheck(17, &faulty).unwrap();
    assert_eq!(f.failures(&opts.tolerances), vec!["grad_params"]);
}

#[test]
fn divergence_input_gradient_matches_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let shape = ModelShape::mlp(&[3, 5, 3]).unwrap();
    let a = ParamState::init(shape.clone(), &mut r);
    let b = ParamState::init(shape, &mut r);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| r.random()).collect()).collect();
    let f = Matrix::from_rows(&rows).unwrap();
    for measure in [Measure::Kl, Measure::Js] {
        let g = divergence_grad_input(&a, &b, &f, measure).unwrap();
        let h = 1e-6;
        let mut fd = Vec::new();
        for x in &rows {
            for j in 0..3 {
                let eval = |delta: f64| {
                    let mut xx = x.clone();
                    xx[j] += delta;
                    let m = Matrix::new(1, 3, xx).unwrap();
                    let pa = forward_probs(&a, &m).unwrap();
                    let pb = forward_probs(&b, &m).unwrap();
                    measure.eval(pa.row(0), pb.row(0))
                };
                fd.push((eval(h) - eval(-h)) / (2.0 * h));
            }
        }
        let err = norm_rel_error(g.as_slice(), &fd);
        assert!(err < 1e-6, "{measure}: {err}");
    }
}

#[test]
fn hvp_matches_dense_oracle_on_tiny_models() {
    for seed in 0..10 {
        let (params, batch) = tiny_problem(seed);
        assert!(params.len() <= 60);
        let v: Vec<f64> = (0..params.len()).map(|k| ((k * 7 + 3) % 11) as f64 / 11.0 - 0.5).collect();
        let hv = fd_hvp(&params, &batch, &v, None).unwrap();
        let dense = dense_hessian_times(&params, &batch, &v).unwrap();
        assert!(norm_rel_error(&hv, &dense) <= 1e-3);
        let mixed = fd_mixed_grad_input(&params, &batch.features, &batch.labels, &v, None).unwrap();
        let dense_m = dense_mixed_times(&params, &batch, &v).unwrap();
        assert!(norm_rel_error(mixed.as_slice(), dense_m.as_slice()) <= 1e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probability_rows_sum_to_one(seed in any::<u64>(), n in 1usize..8) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let shape = ModelShape::mlp(&[4, 6, 3]).unwrap();
        let params = ParamState::init(shape, &mut r);
        let f = Matrix::new(n, 4, (0..n * 4).map(|_| r.random()).collect()).unwrap();
        let probs = forward_probs(&params, &f).unwrap();
        for row in probs.iter_rows() {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p <= 1.0));
        }
    }

    #[test]
    fn js_symmetric_and_bounded(seed in any::<u64>(), c in 2usize..8) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = random_simplex(&mut r, c);
        let q = random_simplex(&mut r, c);
        let a = js_div(&p, &q);
        prop_assert_eq!(a.to_bits(), js_div(&q, &p).to_bits());
        prop_assert!(a >= -1e-12 && a <= 2f64.ln() + 1e-12);
    }
}
