//! Direct (loop) convolution kernels. Cross-correlation, no `1/c_in` factor.

use crate::error::{Error, Result};
use crate::nn::layer::ConvSpec;
use crate::nn::nsconv::standardize_layer;
use crate::nn::Tensor;
use crate::sparse::MaskedTensor;

/// Forward convolution with the weights the layer actually uses: standardized
/// when `spec.nsconv` is set (recomputed from the current weights), raw otherwise.
pub fn conv_forward(input: &Tensor, filters: &MaskedTensor, spec: &ConvSpec) -> Result<Tensor> {
    if filters.shape() != spec.weight_shape() {
        return Err(Error::invalid(format!(
            "filter shape {:?} does not match spec {:?}",
            filters.shape(),
            spec.weight_shape()
        )));
    }
    if spec.nsconv {
        let (w, _) = standardize_layer(filters, spec);
        conv2d(input, &w, spec)
    } else {
        conv2d(input, filters.values(), spec)
    }
}

fn check_input(input: &Tensor, spec: &ConvSpec) -> Result<(usize, usize, usize)> {
    match input.shape() {
        [b, c, h, w] if *c == spec.c_in => Ok((*b, *h, *w)),
        s => Err(Error::invalid(format!(
            "conv expects (batch, {}, h, w) input, got {s:?}",
            spec.c_in
        ))),
    }
}

/// Output positions `[lo, hi)` along one axis whose input index
/// `o * stride + k - pad` falls inside `[0, n_in)`.
fn valid_range(k: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride);
    let hi = if n_in + pad <= k {
        0
    } else {
        ((n_in - 1 + pad - k) / stride + 1).min(n_out)
    };
    (lo.min(hi), hi)
}

/// Per kernel offset: valid output range and the input index of its first element.
struct Span {
    lo: usize,
    hi: usize,
    start: usize,
}

fn spans(ks: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> Vec<Span> {
    (0..ks)
        .map(|k| {
            let (lo, hi) = valid_range(k, pad, stride, n_in, n_out);
            Span {
                lo,
                hi,
                start: (lo * stride + k).saturating_sub(pad),
            }
        })
        .collect()
}

/// Cross-correlation of `input (B, c_in, H, W)` with `weights (c_out, c_in, ks, ks)`.
pub(crate) fn conv2d(input: &Tensor, weights: &[f64], spec: &ConvSpec) -> Result<Tensor> {
    let (b, h, w) = check_input(input, spec)?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let (ks, s) = (spec.kernel_size, spec.stride);
    let (ci, co) = (spec.c_in, spec.c_out);
    let ys = spans(ks, spec.padding, s, h, ho);
    let xs = spans(ks, spec.padding, s, w, wo);
    let x = input.data();
    let mut out = vec![0.0; b * co * ho * wo];
    for bi in 0..b {
        for o in 0..co {
            let obase = (bi * co + o) * ho * wo;
            for c in 0..ci {
                let xbase = (bi * ci + c) * h * w;
                for (ki, ysp) in ys.iter().enumerate() {
                    for (kj, xsp) in xs.iter().enumerate() {
                        let wv = weights[((o * ci + c) * ks + ki) * ks + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        let len = xsp.hi - xsp.lo;
                        for (dy, y) in (ysp.lo..ysp.hi).enumerate() {
                            let row = xbase + (ysp.start + dy * s) * w + xsp.start;
                            let orow = obase + y * wo + xsp.lo;
                            let dst = &mut out[orow..orow + len];
                            if s == 1 {
                                for (d, v) in dst.iter_mut().zip(&x[row..row + len]) {
                                    *d += wv * v;
                                }
                            } else {
                                for (i, d) in dst.iter_mut().enumerate() {
                                    *d += wv * x[row + i * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, co, ho, wo], out)
}

fn check_grad_shape(grad_out: &Tensor, expected: [usize; 4]) -> Result<()> {
    if grad_out.shape() != expected {
        return Err(Error::TraceMismatch(format!(
            "conv output gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            expected
        )));
    }
    Ok(())
}

/// Gradient with respect to the input (always dense).
pub(crate) fn conv2d_backward_input(
    grad_out: &Tensor,
    weights: &[f64],
    spec: &ConvSpec,
    in_hw: (usize, usize),
) -> Result<Tensor> {
    let (h, w) = in_hw;
    let (ho, wo) = spec.output_hw(h, w)?;
    let b = grad_out.batch();
    let (ks, s) = (spec.kernel_size, spec.stride);
    let (ci, co) = (spec.c_in, spec.c_out);
    check_grad_shape(grad_out, [b, co, ho, wo])?;
    let ys = spans(ks, spec.padding, s, h, ho);
    let xs = spans(ks, spec.padding, s, w, wo);
    let g = grad_out.data();
    let mut dx = vec![0.0; b * ci * h * w];
    for bi in 0..b {
        for o in 0..co {
            let gbase = (bi * co + o) * ho * wo;
            for c in 0..ci {
                let xbase = (bi * ci + c) * h * w;
                for (ki, ysp) in ys.iter().enumerate() {
                    for (kj, xsp) in xs.iter().enumerate() {
                        let wv = weights[((o * ci + c) * ks + ki) * ks + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        let len = xsp.hi - xsp.lo;
                        for (dy, y) in (ysp.lo..ysp.hi).enumerate() {
                            let row = xbase + (ysp.start + dy * s) * w + xsp.start;
                            let grow = gbase + y * wo + xsp.lo;
                            let src = &g[grow..grow + len];
                            if s == 1 {
                                for (d, v) in dx[row..row + len].iter_mut().zip(src) {
                                    *d += wv * v;
                                }
                            } else {
                                for (i, v) in src.iter().enumerate() {
                                    dx[row + i * s] += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, ci, h, w], dx)
}

/// Gradient with respect to the (effective) weights. Positions where
/// `wanted` is false are left at zero and skipped.
pub(crate) fn conv2d_backward_weight(
    grad_out: &Tensor,
    input: &Tensor,
    spec: &ConvSpec,
    wanted: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let (b, h, w) = check_input(input, spec)?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let (ks, s) = (spec.kernel_size, spec.stride);
    let (ci, co) = (spec.c_in, spec.c_out);
    check_grad_shape(grad_out, [b, co, ho, wo])?;
    let ys = spans(ks, spec.padding, s, h, ho);
    let xs = spans(ks, spec.padding, s, w, wo);
    let g = grad_out.data();
    let x = input.data();
    let mut dw = vec![0.0; co * ci * ks * ks];
    for o in 0..co {
        for c in 0..ci {
            for (ki, ysp) in ys.iter().enumerate() {
                for (kj, xsp) in xs.iter().enumerate() {
                    let wi = ((o * ci + c) * ks + ki) * ks + kj;
                    if wanted.is_some_and(|m| !m[wi]) {
                        continue;
                    }
                    let len = xsp.hi - xsp.lo;
                    let mut acc = 0.0;
                    for bi in 0..b {
                        let gbase = (bi * co + o) * ho * wo;
                        let xbase = (bi * ci + c) * h * w;
                        for (dy, y) in (ysp.lo..ysp.hi).enumerate() {
                            let row = xbase + (ysp.start + dy * s) * w + xsp.start;
                            let grow = gbase + y * wo + xsp.lo;
                            let gs = &g[grow..grow + len];
                            if s == 1 {
                                acc += gs.iter().zip(&x[row..row + len]).map(|(a, b)| a * b).sum::<f64>();
                            } else {
                                acc += gs.iter().enumerate().map(|(i, a)| a * x[row + i * s]).sum::<f64>();
                            }
                        }
                    }
                    dw[wi] = acc;
                }
            }
        }
    }
    Ok(dw)
}
