//! Filter-wise standardization over unpruned weights (normalized sparse convolution).
//!
//! Each filter `i` is replaced by `gamma * sqrt(c_in) * (w - mean) / std`,
//! with `mean` and `std` taken over its unpruned entries only (population
//! divisor). Pruned entries stay exactly zero.

use crate::error::{Error, Result};
use crate::nn::layer::ConvSpec;
use crate::sparse::MaskedTensor;

/// Lower bound substituted for a vanishing filter standard deviation.
pub const STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStats {
    pub mean: f64,
    /// Standard deviation after the epsilon guard.
    pub std: f64,
    pub count: usize,
    /// `true` when the raw deviation fell below [`STD_EPS`].
    pub guarded: bool,
}

impl FilterStats {
    /// Fewer than two unpruned entries: the filter standardizes to all zeros.
    pub fn is_degenerate(&self) -> bool {
        self.count < 2
    }
}

/// Standardizes a single filter. Errors if fewer than two entries are unpruned.
pub fn nsconv_standardize(filter: &MaskedTensor, c_in: usize, gamma: f64) -> Result<Vec<f64>> {
    let unpruned = filter.nnz();
    if unpruned < 2 {
        return Err(Error::DegenerateFilter {
            filter: 0,
            unpruned,
        });
    }
    let mut out = vec![0.0; filter.len()];
    standardize_filter(filter.values(), filter.mask().bits(), c_in, gamma, &mut out);
    Ok(out)
}

/// Lenient single-filter standardization used inside the network: degenerate
/// filters produce zeros instead of an error.
pub(crate) fn standardize_filter(
    w: &[f64],
    mask: &[bool],
    c_in: usize,
    gamma: f64,
    out: &mut [f64],
) -> FilterStats {
    let count = mask.iter().filter(|&&m| m).count();
    out.fill(0.0);
    if count < 2 {
        return FilterStats {
            mean: 0.0,
            std: 1.0,
            count,
            guarded: false,
        };
    }
    let n = count as f64;
    let mean = w.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / n;
    let var = w
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| (v - mean).powi(2))
        .sum::<f64>()
        / n;
    let raw_std = var.sqrt();
    let guarded = raw_std < STD_EPS;
    let std = if guarded { STD_EPS } else { raw_std };
    let scale = gamma * (c_in as f64).sqrt() / std;
    for ((o, &v), &m) in out.iter_mut().zip(w).zip(mask) {
        if m {
            *o = scale * (v - mean);
        }
    }
    FilterStats {
        mean,
        std,
        count,
        guarded,
    }
}

/// Chain rule through the standardization of one filter. `grad_hat` is the
/// gradient with respect to the standardized weights; the result is written
/// to `out` at unpruned positions only.
pub(crate) fn standardize_backward(
    w: &[f64],
    mask: &[bool],
    stats: &FilterStats,
    c_in: usize,
    gamma: f64,
    grad_hat: &[f64],
    out: &mut [f64],
) {
    if stats.is_degenerate() {
        for (o, &m) in out.iter_mut().zip(mask) {
            if m {
                *o = 0.0;
            }
        }
        return;
    }
    let n = stats.count as f64;
    let scale = gamma * (c_in as f64).sqrt() / stats.std;
    let mut g_mean = 0.0;
    let mut gu_mean = 0.0;
    for ((&v, &m), &g) in w.iter().zip(mask).zip(grad_hat) {
        if m {
            g_mean += g;
            gu_mean += g * (v - stats.mean) / stats.std;
        }
    }
    g_mean /= n;
    gu_mean /= n;
    // With the guard active the deviation is a constant and drops out.
    if stats.guarded {
        gu_mean = 0.0;
    }
    for (((o, &v), &m), &g) in out.iter_mut().zip(w).zip(mask).zip(grad_hat) {
        if m {
            let u = (v - stats.mean) / stats.std;
            *o = scale * (g - g_mean - u * gu_mean);
        }
    }
}

/// Standardizes every filter of a conv weight tensor `(c_out, c_in, ks, ks)`.
pub fn standardize_layer(weights: &MaskedTensor, spec: &ConvSpec) -> (Vec<f64>, Vec<FilterStats>) {
    let flen = spec.filter_len();
    let mut out = vec![0.0; weights.len()];
    let stats = weights
        .values()
        .chunks(flen)
        .zip(weights.mask().bits().chunks(flen))
        .zip(out.chunks_mut(flen))
        .map(|((w, m), o)| standardize_filter(w, m, spec.c_in, spec.gamma, o))
        .collect();
    (out, stats)
}
