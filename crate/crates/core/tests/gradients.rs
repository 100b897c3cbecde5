//! Finite-difference and dense-reference checks of the backward pass.

use fedmef::nn::{loss_and_grad, ConvSpec, GradMode, LayerSpec, SparseModel, Tensor};
use fedmef::sap::{densify, SapConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_cnn(seed: u64) -> SparseModel {
    let layers = vec![
        LayerSpec::Conv(ConvSpec::new(3, 2, 3).with_padding(1)),
        LayerSpec::Relu,
        LayerSpec::Conv(ConvSpec::new(3, 3, 4).with_padding(1).with_stride(2)),
        LayerSpec::Relu,
        LayerSpec::AvgPool { window: 2 },
        LayerSpec::Flatten,
        LayerSpec::Linear {
            in_features: 16,
            out_features: 3,
        },
    ];
    SparseModel::new(&[2, 8, 8], layers, seed).unwrap()
}

fn batch(seed: u64, b: usize) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..b * 128).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..b).map(|_| rng.random_range(0..3)).collect();
    (Tensor::new(&[b, 2, 8, 8], x).unwrap(), y)
}

fn loss(m: &SparseModel, x: &Tensor, y: &[usize]) -> f64 {
    loss_and_grad(&m.forward(x).unwrap(), y).unwrap().0
}

/// Central difference with one Richardson step: `(4 D(h/2) - D(h)) / 3`.
fn fd(m: &SparseModel, x: &Tensor, y: &[usize], layer: usize, idx: usize, bias: bool) -> f64 {
    let eval = |delta: f64| {
        let mut p = m.clone();
        let params = p.params_mut(layer).unwrap();
        if bias {
            params.bias.as_mut().unwrap()[idx] += delta;
        } else {
            params.weight.values_mut()[idx] += delta;
        }
        loss(&p, x, y)
    };
    let d = |h: f64| (eval(h) - eval(-h)) / (2.0 * h);
    let h = 1e-4;
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn check_against_fd(m: &SparseModel) -> (usize, f64) {
    let (x, y) = batch(17, 3);
    let (logits, trace) = m.forward_train(&x, &SapConfig::dense(), 32).unwrap();
    let (_, g) = loss_and_grad(&logits, &y).unwrap();
    let grads = m.backward(&trace, &g, GradMode::Masked).unwrap();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for l in m.param_layers() {
        let p = m.params(l).unwrap();
        let lg = grads.layer(l).unwrap();
        for i in p.weight.mask().unpruned_indices() {
            let num = fd(m, &x, &y, l, i, false);
            let rel = (lg.weight[i] - num).abs() / (lg.weight[i].abs() + 1e-8);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "layer {l} weight {i}: analytic {} fd {num}", lg.weight[i]);
            checked += 1;
        }
        if let (Some(b), Some(gb)) = (&p.bias, &lg.bias) {
            for i in 0..b.len() {
                let num = fd(m, &x, &y, l, i, true);
                let rel = (gb[i] - num).abs() / (gb[i].abs() + 1e-8);
                worst = worst.max(rel);
                assert!(rel < 1e-4, "layer {l} bias {i}: analytic {} fd {num}", gb[i]);
                checked += 1;
            }
        }
    }
    (checked, worst)
}

#[test]
fn dense_nsconv_network_matches_finite_differences() {
    let (n, worst) = check_against_fd(&tiny_cnn(2));
    assert_eq!(n, 54 + 108 + 48 + 3);
    assert!(worst < 1e-4);
}

#[test]
fn sparse_nsconv_network_matches_finite_differences() {
    let mut m = tiny_cnn(3);
    m.random_prune(0.5, &[], 4).unwrap();
    check_against_fd(&m);
}

#[test]
fn plain_conv_network_matches_finite_differences() {
    let layers = tiny_cnn(0)
        .layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Conv(c) => LayerSpec::Conv(c.clone().plain()),
            other => other.clone(),
        })
        .collect();
    let m = SparseModel::new(&[2, 8, 8], layers, 9).unwrap();
    check_against_fd(&m);
}

#[test]
fn sap_gradients_equal_dense_backward_on_zeroed_inputs() {
    let mut m = tiny_cnn(5);
    m.random_prune(0.5, &[], 6).unwrap();
    let (x, y) = batch(23, 4);
    let sap = SapConfig::new(0.7).unwrap();
    let (logits, trace) = m.forward_train(&x, &sap, 32).unwrap();
    let (_, g) = loss_and_grad(&logits, &y).unwrap();
    let grads = m.backward(&trace, &g, GradMode::Dense).unwrap();

    // Independent reference: dense-cached forward, then recompute each weight
    // gradient by hand from the zeroed input and the dense upstream gradient.
    let (_, dense_trace) = m.forward_train(&x, &SapConfig::dense(), 32).unwrap();
    let dense = m.backward(&dense_trace, &g, GradMode::Dense).unwrap();
    // The linear layer is last: its weight gradient only depends on its own input.
    let lin = 6;
    let xin = densify(trace.input_cache(lin).unwrap()).unwrap();
    let mut expect = vec![0.0; 3 * 16];
    for b in 0..4 {
        for o in 0..3 {
            for i in 0..16 {
                expect[o * 16 + i] += g.data()[b * 3 + o] * xin.data()[b * 16 + i];
            }
        }
    }
    for (a, e) in grads.layer(lin).unwrap().weight.iter().zip(&expect) {
        assert!((a - e).abs() < 1e-12);
    }
    // Pruning caches must change weight gradients somewhere but leave biases alone.
    assert_ne!(grads.layer(0).unwrap().weight, dense.layer(0).unwrap().weight);
    assert_eq!(grads.layer(lin).unwrap().bias, dense.layer(lin).unwrap().bias);
}
