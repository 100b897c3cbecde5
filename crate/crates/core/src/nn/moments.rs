//! Monte-Carlo check of output-channel statistics for ReLU-Conv layers, with
//! and without filter standardization.
//!
//! Under standard convolution (no `1/c_in` factor) a standardized filter
//! `w` with `sum(w) = 0` gives `E[a] = 0` exactly for i.i.d. inputs, and
//! `Var[a] = sum(w^2) * sigma_f^2 = k * gamma^2 * c_in * sigma_f^2` with `k`
//! surviving entries. The closed form `gamma^2 (sigma_f^2 + mu_f^2)` assumes a
//! different scaling convention, so it is reported as a ratio only.
//! A plain convolution whose filters have mean `mu_w > 0` drifts to
//! `E[a] = k * mu_w * mu_f`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::conv::conv2d;
use crate::nn::layer::ConvSpec;
use crate::nn::nsconv::standardize_layer;
use crate::nn::Tensor;
use crate::sparse::{random_prune_with, MaskedTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMomentSetup {
    pub c_in: usize,
    pub kernel_size: usize,
    pub height: usize,
    pub width: usize,
    pub mask_sparsity: f64,
    pub gamma: f64,
    /// Mean of the raw filter entries; positive values exercise the drift.
    pub filter_mean: f64,
    pub filter_std: f64,
    /// Use this constant as input instead of ReLU'd Gaussian noise.
    pub constant_input: Option<f64>,
}

impl Default for ChannelMomentSetup {
    fn default() -> Self {
        Self {
            c_in: 8,
            kernel_size: 3,
            height: 6,
            width: 6,
            mask_sparsity: 0.5,
            gamma: 1.0,
            filter_mean: 0.2,
            filter_std: 0.5,
            constant_input: None,
        }
    }
}

/// Measured and predicted per-channel statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub trials: usize,
    pub insufficient_samples: bool,
    /// Input statistics `mu_f`, `sigma_f^2`.
    pub input_mean: f64,
    pub input_var: f64,
    /// Standardized-filter output.
    pub mean: f64,
    pub mean_std_error: f64,
    pub var: f64,
    /// `gamma^2 (sigma_f^2 + mu_f^2)`.
    pub closed_form_var: f64,
    /// `mean(k) * gamma^2 * c_in * sigma_f^2` under standard convolution.
    pub predicted_var: f64,
    /// Plain-convolution control.
    pub control_mean: f64,
    pub control_mean_std_error: f64,
    /// `mean(k) * mu_w * mu_f`.
    pub control_predicted_mean: f64,
}

impl ChannelStats {
    pub fn var_to_closed_form_ratio(&self) -> f64 {
        self.var / self.closed_form_var
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::INFINITY);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Runs `n_trials` draws of (random sparse filter, random input) through one
/// output channel. Fewer than 100 trials is allowed but flagged.
pub fn channel_moment_check<R: Rng + ?Sized>(setup: &ChannelMomentSetup, n_trials: usize, rng: &mut R) -> Result<ChannelStats> {
    if n_trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    let insufficient_samples = n_trials < 100;
    if insufficient_samples {
        log::warn!("channel-moment check with only {n_trials} trials; estimates are unreliable");
    }
    let spec = ConvSpec::new(setup.kernel_size, setup.c_in, 1);
    let plain = spec.clone().plain();
    let wshape = spec.weight_shape();
    let wlen = spec.filter_len();
    let wdist = Normal::new(setup.filter_mean, setup.filter_std)
        .map_err(|e| Error::invalid(format!("filter distribution: {e}")))?;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let in_len = setup.c_in * setup.height * setup.width;

    let mut trial_means = Vec::with_capacity(n_trials);
    let mut control_means = Vec::with_capacity(n_trials);
    let (mut sum_sq, mut count) = (0.0, 0usize);
    let (mut in_sum, mut in_sq) = (0.0, 0.0);
    let mut kept_total = 0usize;

    for _ in 0..n_trials {
        let mask = random_prune_with(&wshape, setup.mask_sparsity, rng)?;
        let raw: Vec<f64> = (0..wlen).map(|_| wdist.sample(rng)).collect();
        let filter = MaskedTensor::new(raw, mask)?;
        kept_total += filter.nnz();
        let data: Vec<f64> = match setup.constant_input {
            Some(c) => vec![c; in_len],
            None => (0..in_len).map(|_| f64::max(std_normal.sample(rng), 0.0)).collect(),
        };
        in_sum += data.iter().sum::<f64>();
        in_sq += data.iter().map(|v| v * v).sum::<f64>();
        let x = Tensor::new(&[1, setup.c_in, setup.height, setup.width], data)?;

        let (std_w, _) = standardize_layer(&filter, &spec);
        let out = conv2d(&x, &std_w, &spec)?;
        let o = out.data();
        trial_means.push(o.iter().sum::<f64>() / o.len() as f64);
        sum_sq += o.iter().map(|v| v * v).sum::<f64>();
        count += o.len();

        let ctl = conv2d(&x, filter.values(), &plain)?;
        control_means.push(ctl.data().iter().sum::<f64>() / ctl.len() as f64);
    }

    let n_in = (n_trials * in_len) as f64;
    let input_mean = in_sum / n_in;
    let input_var = (in_sq / n_in - input_mean * input_mean).max(0.0);
    let (mean, mean_std_error) = mean_and_se(&trial_means);
    let (control_mean, control_mean_std_error) = mean_and_se(&control_means);
    let var = sum_sq / count as f64 - mean * mean;
    let avg_kept = kept_total as f64 / n_trials as f64;
    let g2 = setup.gamma * setup.gamma;
    Ok(ChannelStats {
        trials: n_trials,
        insufficient_samples,
        input_mean,
        input_var,
        mean,
        mean_std_error,
        var,
        closed_form_var: g2 * (input_var + input_mean * input_mean),
        predicted_var: avg_kept * g2 * setup.c_in as f64 * input_var,
        control_mean,
        control_mean_std_error,
        control_predicted_mean: avg_kept * setup.filter_mean * input_mean,
    })
}
