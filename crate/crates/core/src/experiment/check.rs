//! Self-checks against independent oracles: finite differences, brute-force
//! statistics, full sorts and hand-written storage closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bae::{self, ExtrusionPlan, Penalty};
use crate::error::Result;
use crate::nn::{conv_forward, loss_and_grad, standardize_layer, channel_moment_check, ConvSpec, GradMode, LayerSpec, SparseModel, Tensor, ChannelMomentSetup};
use crate::sap::{kept_count, prune_activation, SapConfig};
use crate::sparse::{self, random_prune_with, CompressionScheme, Mask, MaskedTensor};

/// One line of the check table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Workload sizes of the randomized checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckSizes {
    pub codec_trials: usize,
    pub top_k_tensors: usize,
    pub monte_carlo_trials: usize,
}

impl Default for CheckSizes {
    fn default() -> Self {
        Self {
            codec_trials: 10_000,
            top_k_tensors: 1_000,
            monte_carlo_trials: 10_000,
        }
    }
}

/// Two standardized convolutions and a linear layer on 2x8x8 inputs.
pub fn tiny_cnn(seed: u64) -> Result<SparseModel> {
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
    SparseModel::new(&[2, 8, 8], layers, seed)
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize) -> Result<(Tensor, Vec<usize>)> {
    let x = (0..b * 128).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..b).map(|_| rng.random_range(0..3)).collect();
    Ok((Tensor::new(&[b, 2, 8, 8], x)?, y))
}

/// Largest relative error `|analytic - numeric| / (|analytic| + 1e-8)` over
/// every weight and bias of the tiny network, against a Richardson-refined
/// central difference. Returns `(parameters checked, worst error)`.
pub fn gradient_error(seed: u64) -> Result<(usize, f64)> {
    let m = tiny_cnn(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (x, y) = random_batch(&mut rng, 3)?;
    let (logits, trace) = m.forward_train(&x, &SapConfig::dense(), 64)?;
    let (_, g) = loss_and_grad(&logits, &y)?;
    let grads = m.backward(&trace, &g, GradMode::Masked)?;

    let loss_at = |layer: usize, idx: usize, bias: bool, delta: f64| -> Result<f64> {
        let mut p = m.clone();
        let params = p.params_mut(layer).unwrap();
        if bias {
            params.bias.as_mut().unwrap()[idx] += delta;
        } else {
            params.weight.values_mut()[idx] += delta;
        }
        Ok(loss_and_grad(&p.forward(&x)?, &y)?.0)
    };
    let numeric = |layer: usize, idx: usize, bias: bool| -> Result<f64> {
        let d = |h: f64| -> Result<f64> { Ok((loss_at(layer, idx, bias, h)? - loss_at(layer, idx, bias, -h)?) / (2.0 * h)) };
        let h = 1e-4;
        Ok((4.0 * d(h / 2.0)? - d(h)?) / 3.0)
    };

    let (mut checked, mut worst) = (0, 0.0f64);
    for l in m.param_layers() {
        let p = m.params(l).unwrap();
        let lg = grads.layer(l).unwrap();
        for i in 0..p.weight.len() {
            let num = numeric(l, i, false)?;
            worst = worst.max((lg.weight[i] - num).abs() / (lg.weight[i].abs() + 1e-8));
            checked += 1;
        }
        if let (Some(b), Some(gb)) = (&p.bias, &lg.bias) {
            for i in 0..b.len() {
                let num = numeric(l, i, true)?;
                worst = worst.max((gb[i] - num).abs() / (gb[i].abs() + 1e-8));
                checked += 1;
            }
        }
    }
    Ok((checked, worst))
}

pub fn gradient_check(seed: u64) -> Result<CheckOutcome> {
    let (n, worst) = gradient_error(seed)?;
    Ok(CheckOutcome::new(
        "gradient vs finite differences",
        worst < 1e-4,
        format!("{n} parameters, worst relative error {worst:.2e}"),
    ))
}

/// Output magnitude on a constant input, and the worst deviation of
/// standardized filter moments from `(0, gamma^2 c_in)`.
pub fn nsconv_moment_errors(seed: u64) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ConvSpec {
        gamma: 0.8,
        ..ConvSpec::new(3, 4, 5)
    };
    let shape = spec.weight_shape();
    let mask = random_prune_with(&shape, 0.5, &mut rng)?;
    let raw = (0..spec.c_out * spec.filter_len()).map(|_| rng.random_range(-1.0..1.5)).collect();
    let filters = MaskedTensor::new(raw, mask)?;

    let x = Tensor::filled(&[2, 4, 6, 6], 0.7);
    let out = conv_forward(&x, &filters, &spec)?;
    let const_err = out.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let (w, _) = standardize_layer(&filters, &spec);
    let target = spec.gamma * spec.gamma * spec.c_in as f64;
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    let len = spec.filter_len();
    for f in 0..spec.c_out {
        let kept: Vec<f64> = (f * len..(f + 1) * len)
            .filter(|&i| filters.mask().get(i))
            .map(|i| w[i])
            .collect();
        let n = kept.len() as f64;
        let mean = kept.iter().sum::<f64>() / n;
        let var = kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        mean_err = mean_err.max(mean.abs());
        var_err = var_err.max((var - target).abs());
    }
    Ok((const_err, mean_err, var_err))
}

pub fn nsconv_checks(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let (c, m, v) = nsconv_moment_errors(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let s = channel_moment_check(&ChannelMomentSetup::default(), trials, &mut rng)?;
    Ok(vec![
        CheckOutcome::new("standardized conv: constant input", c < 1e-10, format!("max |out| {c:.2e}")),
        CheckOutcome::new(
            "standardized conv: filter moments",
            m < 1e-10 && v < 1e-6,
            format!("mean error {m:.2e}, variance error {v:.2e}"),
        ),
        CheckOutcome::new(
            "standardized conv: channel mean",
            s.mean.abs() <= 3.0 * s.mean_std_error && s.control_mean > 3.0 * s.control_mean_std_error,
            format!(
                "{} trials: mean {:.4} (se {:.4}), plain control {:.4} (se {:.4}); \
                 variance {:.4} = {:.3}x the per-entry closed form, {:.3}x the kept-count prediction",
                s.trials,
                s.mean,
                s.mean_std_error,
                s.control_mean,
                s.control_mean_std_error,
                s.var,
                s.var_to_closed_form_ratio(),
                s.var / s.predicted_var
            ),
        ),
    ])
}

/// Largest gap between sparse-cache weight gradients and dense backward on
/// the explicitly zeroed caches.
pub fn sap_gradient_gap(seed: u64) -> Result<f64> {
    let mut m = tiny_cnn(seed)?;
    m.random_prune(0.5, &[], seed.wrapping_add(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let (x, y) = random_batch(&mut rng, 4)?;
    let (logits, trace) = m.forward_train(&x, &SapConfig::new(0.7)?, 32)?;
    let (_, g) = loss_and_grad(&logits, &y)?;
    let sparse = m.backward(&trace, &g, GradMode::Dense)?;
    let dense = m.backward(&trace.densified()?, &g, GradMode::Dense)?;
    let mut gap = 0.0f64;
    for l in m.param_layers() {
        let (a, b) = (sparse.layer(l).unwrap(), dense.layer(l).unwrap());
        for (u, v) in a.weight.iter().zip(&b.weight) {
            gap = gap.max((u - v).abs());
        }
    }
    Ok(gap)
}

/// Number of random tensors whose kept activation set differs from a full
/// sort by (magnitude descending, index ascending).
pub fn top_k_mismatches(tensors: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..tensors {
        let n = rng.random_range(1..=200);
        let s_ta = rng.random_range(0.0..0.99);
        // Coarse values half of the time to force ties.
        let coarse = rng.random_bool(0.5);
        let data: Vec<f64> = (0..n)
            .map(|_| if coarse { f64::from(rng.random_range(-3i32..=3)) } else { rng.random_range(-2.0..2.0) })
            .collect();
        let cache = prune_activation(&Tensor::new(&[1, n], data.clone())?, s_ta)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| data[b].abs().total_cmp(&data[a].abs()).then(a.cmp(&b)));
        order.truncate(kept_count(n, s_ta));
        order.sort_unstable();
        if cache.kept_indices() != order {
            bad += 1;
        }
    }
    Ok(bad)
}

pub fn sap_checks(tensors: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let gap = sap_gradient_gap(seed)?;
    let bad = top_k_mismatches(tensors, seed)?;
    Ok(vec![
        CheckOutcome::new("pruned-cache gradients", gap <= 1e-12, format!("max gap {gap:.2e}")),
        CheckOutcome::new("activation top-k vs full sort", bad == 0, format!("{bad} of {tensors} tensors differ")),
    ])
}

fn log2_ceil(x: u64) -> u64 {
    let mut bits = 0;
    while (1u64 << bits) < x {
        bits += 1;
    }
    bits
}

/// Storage closed forms, written independently of the codec.
pub fn expected_bits(n_r: usize, n_c: usize, m: usize, b: u32) -> (CompressionScheme, u64) {
    let (n, m64, b) = ((n_r * n_c) as u64, m as u64, u64::from(b));
    let d = m as f64 / n as f64;
    if d >= 0.9 {
        (CompressionScheme::Dense, n * b)
    } else if d >= 0.3 {
        (CompressionScheme::Bitmap, n + m64 * b)
    } else if d >= 0.1 {
        (CompressionScheme::Coo, m64 * log2_ceil(n) + m64 * b)
    } else {
        let csr = m64 * log2_ceil(n_c as u64) + n_r as u64 * log2_ceil(m64);
        let csc = m64 * log2_ceil(n_r as u64) + n_c as u64 * log2_ceil(m64);
        if csc < csr {
            (CompressionScheme::Csc, csc + m64 * b)
        } else {
            (CompressionScheme::Csr, csr + m64 * b)
        }
    }
}

/// Round-trips one tensor through encode, framing, parsing and decode.
/// Returns whether it came back bit-exact and whether its accounting matched.
fn codec_round_trip(t: &MaskedTensor, b: u32) -> Result<(bool, bool)> {
    let e = sparse::encode(t, b)?;
    let frame = sparse::to_frame(&e)?;
    let (parsed, used) = sparse::from_frame(&frame)?;
    let back = sparse::decode(&parsed)?;
    let (n_r, n_c) = sparse::matrix_dims(t.shape());
    let (scheme, bits) = expected_bits(n_r, n_c, t.nnz(), b);
    Ok((back.bit_eq(t) && used == frame.len(), e.scheme == scheme && e.total_bits == bits && parsed.total_bits == bits))
}

/// Counts of (non-exact round trips, accounting mismatches) over random tensors.
pub fn codec_failures(trials: usize, seed: u64) -> Result<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut inexact, mut miscounted) = (0, 0);
    for _ in 0..trials {
        let rank = rng.random_range(1..=3);
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=12)).collect();
        let n: usize = shape.iter().product();
        let nnz = match rng.random_range(0..4) {
            0 => [0.1, 0.3, 0.9].map(|d| (d * n as f64).ceil() as usize)[rng.random_range(0..3)],
            1 => rng.random_range(0..=n),
            _ => rng.random_range(0..=(n / 5).max(1)).min(n),
        };
        let mut bits = vec![false; n];
        for i in rand::seq::index::sample(&mut rng, n, nnz) {
            bits[i] = true;
        }
        let values = (0..n)
            .map(|_| match rng.random_range(0..8) {
                0 => -0.0,
                1 => f64::MIN_POSITIVE / 3.0,
                _ => rng.random_range(-1e3..1e3),
            })
            .collect();
        let t = MaskedTensor::new(values, Mask::from_bits(&shape, bits)?)?;
        let b = [8, 16, 32, 64][rng.random_range(0..4)];
        let (exact, counted) = codec_round_trip(&t, b)?;
        inexact += usize::from(!exact);
        miscounted += usize::from(!counted);
    }
    Ok((inexact, miscounted))
}

/// Accounting mismatches at the exact band boundaries of a 10x10 matrix and
/// on a tall matrix that selects CSC.
pub fn codec_boundary_failures() -> Result<usize> {
    let mut bad = 0;
    let cases: [(&[usize], usize); 7] = [
        (&[10, 10], 9),
        (&[10, 10], 10),
        (&[10, 10], 29),
        (&[10, 10], 30),
        (&[10, 10], 89),
        (&[10, 10], 90),
        (&[100, 2], 5),
    ];
    for (shape, nnz) in cases {
        let n: usize = shape.iter().product();
        let bits: Vec<bool> = (0..n).map(|i| i < nnz).collect();
        let t = MaskedTensor::new(vec![1.5; n], Mask::from_bits(shape, bits)?)?;
        for b in [8, 32] {
            let (exact, counted) = codec_round_trip(&t, b)?;
            bad += usize::from(!exact || !counted);
        }
    }
    Ok(bad)
}

pub fn codec_checks(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let (inexact, miscounted) = codec_failures(trials, seed)?;
    let boundary = codec_boundary_failures()?;
    Ok(vec![
        CheckOutcome::new(
            "codec round trips",
            inexact == 0 && miscounted == 0,
            format!("{trials} tensors: {inexact} inexact, {miscounted} miscounted"),
        ),
        CheckOutcome::new("codec band boundaries", boundary == 0, format!("{boundary} mismatches")),
    ])
}

/// Violations of the schedule endpoint identities.
pub fn schedule_violations() -> Vec<String> {
    let mut bad = Vec::new();
    for (r_stop, e) in [(300, 10), (40, 2), (1, 1)] {
        let start = bae::adjustment_rate(0, r_stop, e);
        let end = bae::adjustment_rate((r_stop * e) as u64, r_stop, e);
        if start != 0.4 || end != 0.0 {
            bad.push(format!("adjustment rate ({r_stop}, {e}): start {start}, end {end}"));
        }
    }
    for t_budget in [1u64, 7, 100] {
        let plan = ExtrusionPlan::empty().with_schedule(1.0, Penalty::L2, t_budget, 0.5);
        if bae::budget_lr(t_budget, &plan, 3.0) != 0.0 {
            bad.push(format!("budget rate nonzero at t = {t_budget}"));
        }
        for t in 0..=t_budget {
            if bae::budget_lr(t, &plan, 0.0) != 0.0 {
                bad.push(format!("budget rate nonzero at zero norm, t = {t}"));
            }
        }
    }
    for i in 0..=20 {
        for j in 0..=20 {
            let (eta, beta) = (f64::from(i) * 0.05, f64::from(j) * 0.05);
            if bae::effective_lr(eta, beta, true) != eta.max(beta) {
                bad.push(format!("effective rate at ({eta}, {beta})"));
            }
        }
    }
    bad
}

pub fn schedule_check() -> CheckOutcome {
    let bad = schedule_violations();
    CheckOutcome::new("schedule endpoints", bad.is_empty(), if bad.is_empty() { "all identities hold".into() } else { bad.join("; ") })
}

/// Runs every check.
pub fn run_checks(sizes: CheckSizes) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![gradient_check(2)?];
    out.extend(nsconv_checks(sizes.monte_carlo_trials, 3)?);
    out.extend(sap_checks(sizes.top_k_tensors, 4)?);
    out.extend(codec_checks(sizes.codec_trials, 5)?);
    out.push(schedule_check());
    Ok(out)
}
