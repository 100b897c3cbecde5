//! Feed-forward sparse CNN with manual backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d, conv2d_backward_input, conv2d_backward_weight};
use crate::nn::layer::{infer_shapes, ConvSpec, LayerSpec};
use crate::nn::nsconv::{standardize_backward, standardize_layer, FilterStats};
use crate::nn::Tensor;
use crate::sap::{cache_storage_bits, dense_cache_bits, densify, prune_activation, ActivationCache, SapConfig};
use crate::sparse::{self, random_prune_with, Mask, MaskedTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: MaskedTensor,
    pub bias: Option<Vec<f64>>,
}

/// Which weight-gradient entries backward fills in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Only unpruned positions; pruned entries are zero.
    Masked,
    /// Also pruned positions, holding the gradient with respect to the
    /// effective (possibly standardized) weight. Used for growth ranking.
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Per-layer gradients, `None` for layers without parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Option<LayerGrad>>,
}

impl GradientSet {
    pub fn layer(&self, l: usize) -> Option<&LayerGrad> {
        self.layers.get(l).and_then(|g| g.as_ref())
    }
}

/// Size of one retained cache, for memory telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheRecord {
    pub layer: usize,
    pub numel: usize,
    pub dense_bits: u64,
    pub cache_bits: u64,
    pub sparsity: f64,
}

#[derive(Debug, Clone)]
enum TraceEntry {
    Conv {
        cache: ActivationCache,
        effective: Vec<f64>,
        stats: Option<Vec<FilterStats>>,
        in_hw: (usize, usize),
    },
    Linear {
        cache: ActivationCache,
    },
    Relu {
        signs: Vec<bool>,
    },
    Pool {
        in_shape: Vec<usize>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
}

/// Everything backward needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    version: u64,
    batch: usize,
    entries: Vec<TraceEntry>,
    records: Vec<CacheRecord>,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// One record per retained cache: parameterized-layer inputs and ReLU sign bitmaps.
    pub fn cache_records(&self) -> &[CacheRecord] {
        &self.records
    }

    pub fn total_cache_bits(&self) -> u64 {
        self.records.iter().map(|r| r.cache_bits).sum()
    }

    pub fn total_dense_bits(&self) -> u64 {
        self.records.iter().map(|r| r.dense_bits).sum()
    }

    /// The retained input cache of parameterized layer `l`.
    pub fn input_cache(&self, l: usize) -> Option<&ActivationCache> {
        match self.entries.get(l)? {
            TraceEntry::Conv { cache, .. } | TraceEntry::Linear { cache } => Some(cache),
            _ => None,
        }
    }

    /// A copy whose input caches are stored densely, with pruned entries as
    /// explicit zeros. Backward on it is the reference for sparse-cache
    /// backward.
    pub fn densified(&self) -> Result<ForwardTrace> {
        let mut out = self.clone();
        for e in &mut out.entries {
            if let TraceEntry::Conv { cache, .. } | TraceEntry::Linear { cache } = e {
                *cache = ActivationCache::from_dense(&densify(cache)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<Option<LayerParams>>,
    prunable: Vec<bool>,
    version: u64,
}

impl SparseModel {
    /// Dense model with He-normal conv weights, uniform linear weights and zero biases.
    /// Conv layers carry no bias; linear layers do.
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        infer_shapes(input_shape, &layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(layers.len());
        for l in &layers {
            params.push(match l {
                LayerSpec::Conv(c) => {
                    let std = (2.0 / c.filter_len() as f64).sqrt();
                    let dist = Normal::new(0.0, std).expect("positive std");
                    let shape = c.weight_shape();
                    let n: usize = shape.iter().product();
                    let values = (0..n).map(|_| dist.sample(&mut rng)).collect();
                    Some(LayerParams {
                        weight: MaskedTensor::dense(&shape, values)?,
                        bias: None,
                    })
                }
                LayerSpec::Linear {
                    in_features,
                    out_features,
                } => {
                    let bound = 1.0 / (*in_features as f64).sqrt();
                    let dist = Uniform::new(-bound, bound).expect("valid bounds");
                    let values = (0..in_features * out_features).map(|_| dist.sample(&mut rng)).collect();
                    Some(LayerParams {
                        weight: MaskedTensor::dense(&[*out_features, *in_features], values)?,
                        bias: Some(vec![0.0; *out_features]),
                    })
                }
                _ => None,
            });
        }
        let prunable = layers.iter().map(LayerSpec::has_params).collect();
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            params,
            prunable,
            version: 0,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        infer_shapes(&self.input_shape, &self.layers)
            .ok()
            .and_then(|s| s.last().and_then(|v| v.first().copied()))
            .unwrap_or(0)
    }

    /// Indices of layers holding parameters.
    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&l| self.params[l].is_some()).collect()
    }

    /// Indices of layers whose weights take part in pruning and adjustment.
    pub fn prunable_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&l| self.prunable[l]).collect()
    }

    pub fn is_prunable(&self, l: usize) -> bool {
        self.prunable.get(l).copied().unwrap_or(false)
    }

    pub fn params(&self, l: usize) -> Option<&LayerParams> {
        self.params.get(l).and_then(|p| p.as_ref())
    }

    /// Mutable parameter access; invalidates outstanding traces.
    pub fn params_mut(&mut self, l: usize) -> Option<&mut LayerParams> {
        self.version += 1;
        self.params.get_mut(l).and_then(|p| p.as_mut())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Uniform random pruning of every prunable layer, except the parameterized
    /// layers listed in `exclude` (indices into [`SparseModel::param_layers`]),
    /// which stay dense and are never adjusted.
    pub fn random_prune(&mut self, target_sparsity: f64, exclude: &[usize], seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (ordinal, l) in self.param_layers().into_iter().enumerate() {
            if exclude.contains(&ordinal) {
                self.prunable[l] = false;
                continue;
            }
            let shape = self.params[l].as_ref().unwrap().weight.shape().to_vec();
            let mask = random_prune_with(&shape, target_sparsity, &mut rng)?;
            self.params_mut(l).unwrap().weight.set_mask(mask)?;
        }
        Ok(())
    }

    /// Sparsity over all prunable weights.
    pub fn mask_sparsity(&self) -> f64 {
        let (zeros, total) = self
            .prunable_layers()
            .iter()
            .map(|&l| self.params[l].as_ref().unwrap().weight.mask())
            .fold((0, 0), |(z, t), m| (z + m.count_zeros(), t + m.len()));
        if total == 0 {
            0.0
        } else {
            zeros as f64 / total as f64
        }
    }

    pub fn layer_mask(&self, l: usize) -> Option<&Mask> {
        self.params(l).map(|p| p.weight.mask())
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::invalid(format!(
                "model expects (batch, {:?}) input, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite { layer: 0 });
        }
        Ok(())
    }

    fn effective_conv_weights(&self, l: usize, c: &ConvSpec) -> (Vec<f64>, Option<Vec<FilterStats>>) {
        let w = &self.params[l].as_ref().unwrap().weight;
        if c.nsconv {
            let (eff, stats) = standardize_layer(w, c);
            (eff, Some(stats))
        } else {
            (w.values().to_vec(), None)
        }
    }

    /// Inference-only forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut a = x.clone();
        for (l, spec) in self.layers.iter().enumerate() {
            a = match spec {
                LayerSpec::Conv(c) => {
                    let (eff, _) = self.effective_conv_weights(l, c);
                    conv2d(&a, &eff, c)?
                }
                LayerSpec::Linear { .. } => linear_forward(&a, self.params[l].as_ref().unwrap())?,
                LayerSpec::Relu => relu(a),
                LayerSpec::AvgPool { window } => avg_pool(&a, *window)?,
                LayerSpec::Flatten => flatten(a)?,
            };
            if !a.all_finite() {
                return Err(Error::NonFinite { layer: l });
            }
        }
        Ok(a)
    }

    /// Training forward pass. Outputs are identical to [`SparseModel::forward`];
    /// `sap` only controls how much of each layer input is retained.
    pub fn forward_train(&self, x: &Tensor, sap: &SapConfig, value_bits: u32) -> Result<(Tensor, ForwardTrace)> {
        self.check_input(x)?;
        let mut a = x.clone();
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut records = Vec::new();
        let mut ordinal = 0;
        for (l, spec) in self.layers.iter().enumerate() {
            let (next, entry) = match spec {
                LayerSpec::Conv(c) => {
                    let cache = prune_activation(&a, sap.sparsity_for(ordinal))?;
                    ordinal += 1;
                    records.push(record(l, &cache, value_bits));
                    let (eff, stats) = self.effective_conv_weights(l, c);
                    let out = conv2d(&a, &eff, c)?;
                    let in_hw = (a.shape()[2], a.shape()[3]);
                    (
                        out,
                        TraceEntry::Conv {
                            cache,
                            effective: eff,
                            stats,
                            in_hw,
                        },
                    )
                }
                LayerSpec::Linear { .. } => {
                    let cache = prune_activation(&a, sap.sparsity_for(ordinal))?;
                    ordinal += 1;
                    records.push(record(l, &cache, value_bits));
                    let out = linear_forward(&a, self.params[l].as_ref().unwrap())?;
                    (out, TraceEntry::Linear { cache })
                }
                LayerSpec::Relu => {
                    let signs: Vec<bool> = a.data().iter().map(|&v| v > 0.0).collect();
                    let n = signs.len();
                    records.push(CacheRecord {
                        layer: l,
                        numel: n,
                        dense_bits: n as u64,
                        cache_bits: n as u64,
                        sparsity: 0.0,
                    });
                    (relu(a), TraceEntry::Relu { signs })
                }
                LayerSpec::AvgPool { window } => {
                    let in_shape = a.shape().to_vec();
                    (avg_pool(&a, *window)?, TraceEntry::Pool { in_shape })
                }
                LayerSpec::Flatten => {
                    let in_shape = a.shape().to_vec();
                    (flatten(a)?, TraceEntry::Flatten { in_shape })
                }
            };
            if !next.all_finite() {
                return Err(Error::NonFinite { layer: l });
            }
            a = next;
            entries.push(entry);
        }
        let trace = ForwardTrace {
            version: self.version,
            batch: x.batch(),
            entries,
            records,
        };
        Ok((a, trace))
    }

    /// Backward pass from the loss gradient with respect to the logits.
    pub fn backward(&self, trace: &ForwardTrace, loss_grad: &Tensor, mode: GradMode) -> Result<GradientSet> {
        if trace.version != self.version {
            return Err(Error::TraceMismatch(format!(
                "trace taken at model version {}, model is at {}",
                trace.version, self.version
            )));
        }
        if trace.entries.len() != self.layers.len() {
            return Err(Error::TraceMismatch("layer count differs".into()));
        }
        if loss_grad.batch() != trace.batch {
            return Err(Error::TraceMismatch(format!(
                "gradient batch {} vs trace batch {}",
                loss_grad.batch(),
                trace.batch
            )));
        }
        let mut grads: Vec<Option<LayerGrad>> = vec![None; self.layers.len()];
        let mut g = loss_grad.clone();
        for l in (0..self.layers.len()).rev() {
            let need_input_grad = l > 0;
            match (&self.layers[l], &trace.entries[l]) {
                (
                    LayerSpec::Conv(c),
                    TraceEntry::Conv {
                        cache,
                        effective,
                        stats,
                        in_hw,
                    },
                ) => {
                    let p = self.params[l].as_ref().unwrap();
                    let x = densify(cache)?;
                    let mask = p.weight.mask().bits();
                    let wanted = match mode {
                        GradMode::Dense => None,
                        GradMode::Masked => Some(mask),
                    };
                    let g_eff = conv2d_backward_weight(&g, &x, c, wanted)?;
                    let weight = match stats {
                        Some(stats) => {
                            let flen = c.filter_len();
                            let mut out = match mode {
                                // Pruned slots report the effective-weight gradient.
                                GradMode::Dense => g_eff.clone(),
                                GradMode::Masked => vec![0.0; g_eff.len()],
                            };
                            for (f, st) in stats.iter().enumerate() {
                                let r = f * flen..(f + 1) * flen;
                                standardize_backward(
                                    &p.weight.values()[r.clone()],
                                    &mask[r.clone()],
                                    st,
                                    c.c_in,
                                    c.gamma,
                                    &g_eff[r.clone()],
                                    &mut out[r],
                                );
                            }
                            out
                        }
                        None => g_eff,
                    };
                    grads[l] = Some(LayerGrad { weight, bias: None });
                    if need_input_grad {
                        g = conv2d_backward_input(&g, effective, c, *in_hw)?;
                    }
                }
                (LayerSpec::Linear { in_features, out_features }, TraceEntry::Linear { cache }) => {
                    let p = self.params[l].as_ref().unwrap();
                    let x = densify(cache)?;
                    let (b, fi, fo) = (g.batch(), *in_features, *out_features);
                    if g.shape() != [b, fo] || x.shape() != [b, fi] {
                        return Err(Error::TraceMismatch(format!("linear layer {l} shapes differ")));
                    }
                    let (gd, xd) = (g.data(), x.data());
                    let mask = p.weight.mask().bits();
                    let mut dw = vec![0.0; fo * fi];
                    let mut db = vec![0.0; fo];
                    for bi in 0..b {
                        for o in 0..fo {
                            let go = gd[bi * fo + o];
                            db[o] += go;
                            if go == 0.0 {
                                continue;
                            }
                            let row = &mut dw[o * fi..(o + 1) * fi];
                            let xr = &xd[bi * fi..(bi + 1) * fi];
                            for i in 0..fi {
                                row[i] += go * xr[i];
                            }
                        }
                    }
                    if mode == GradMode::Masked {
                        for (v, &m) in dw.iter_mut().zip(mask) {
                            if !m {
                                *v = 0.0;
                            }
                        }
                    }
                    grads[l] = Some(LayerGrad {
                        weight: dw,
                        bias: p.bias.as_ref().map(|_| db),
                    });
                    if need_input_grad {
                        let w = p.weight.values();
                        let mut dx = vec![0.0; b * fi];
                        for bi in 0..b {
                            for o in 0..fo {
                                let go = gd[bi * fo + o];
                                let wr = &w[o * fi..(o + 1) * fi];
                                let dr = &mut dx[bi * fi..(bi + 1) * fi];
                                for i in 0..fi {
                                    dr[i] += go * wr[i];
                                }
                            }
                        }
                        g = Tensor::new(&[b, fi], dx)?;
                    }
                }
                (LayerSpec::Relu, TraceEntry::Relu { signs }) => {
                    if signs.len() != g.len() {
                        return Err(Error::TraceMismatch(format!("relu layer {l} size differs")));
                    }
                    for (v, &s) in g.data_mut().iter_mut().zip(signs) {
                        if !s {
                            *v = 0.0;
                        }
                    }
                }
                (LayerSpec::AvgPool { window }, TraceEntry::Pool { in_shape }) => {
                    g = avg_pool_backward(&g, *window, in_shape)?;
                }
                (LayerSpec::Flatten, TraceEntry::Flatten { in_shape }) => {
                    g = g.reshape(in_shape)?;
                }
                _ => return Err(Error::TraceMismatch(format!("entry {l} does not match layer kind"))),
            }
        }
        Ok(GradientSet { layers: grads })
    }

    /// Masked SGD step: `w -= lr * g` at unpruned positions; biases are dense.
    pub fn apply_gradients(&mut self, grads: &GradientSet, lr: f64) {
        self.version += 1;
        for (p, g) in self.params.iter_mut().zip(&grads.layers) {
            if let (Some(p), Some(g)) = (p.as_mut(), g.as_ref()) {
                p.weight.masked_axpy(-lr, &g.weight);
                if let (Some(b), Some(gb)) = (p.bias.as_mut(), g.bias.as_ref()) {
                    for (v, d) in b.iter_mut().zip(gb) {
                        *v -= lr * d;
                    }
                }
            }
        }
    }

    /// Serializes parameters: a `u32` layer count, then for each parameterized
    /// layer the weight record and a `u8` bias flag followed by a dense bias record.
    pub fn to_checkpoint(&self, value_bits: u32) -> Result<Vec<u8>> {
        let layers = self.param_layers();
        let mut out = (layers.len() as u32).to_le_bytes().to_vec();
        for l in layers {
            let p = self.params[l].as_ref().unwrap();
            out.extend(sparse::to_frame(&sparse::encode(&p.weight, value_bits)?)?);
            match &p.bias {
                Some(b) => {
                    out.push(1);
                    let t = MaskedTensor::dense(&[b.len()], b.clone())?;
                    out.extend(sparse::to_frame(&sparse::encode(&t, value_bits)?)?);
                }
                None => out.push(0),
            }
        }
        Ok(out)
    }

    /// Restores parameters written by [`SparseModel::to_checkpoint`] into a
    /// model with the same architecture.
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<()> {
        let layers = self.param_layers();
        if bytes.len() < 4 {
            return Err(Error::decode(None, 0, "missing layer-count header"));
        }
        let count = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        if count != layers.len() {
            return Err(Error::decode(None, 0, format!("checkpoint has {count} layers, model {}", layers.len())));
        }
        let mut pos = 4;
        let mut restored = Vec::with_capacity(count);
        for &l in &layers {
            let (e, used) = sparse::from_frame(&bytes[pos..])?;
            pos += used;
            let weight = sparse::decode(&e)?;
            if weight.shape() != self.params[l].as_ref().unwrap().weight.shape() {
                return Err(Error::decode(Some(e.scheme), pos, "weight shape differs from architecture"));
            }
            let flag = *bytes.get(pos).ok_or_else(|| Error::decode(None, pos, "missing bias flag"))?;
            pos += 1;
            let bias = if flag == 1 {
                let (e, used) = sparse::from_frame(&bytes[pos..])?;
                pos += used;
                Some(sparse::decode(&e)?.into_parts().0)
            } else {
                None
            };
            restored.push(LayerParams { weight, bias });
        }
        for (l, p) in layers.into_iter().zip(restored) {
            self.params[l] = Some(p);
        }
        self.version += 1;
        Ok(())
    }
}

fn record(layer: usize, cache: &ActivationCache, b: u32) -> CacheRecord {
    CacheRecord {
        layer,
        numel: cache.numel(),
        dense_bits: dense_cache_bits(cache.numel(), b, false),
        cache_bits: cache_storage_bits(cache, b, false),
        sparsity: cache.sparsity(),
    }
}

fn linear_forward(x: &Tensor, p: &LayerParams) -> Result<Tensor> {
    let (fo, fi) = (p.weight.shape()[0], p.weight.shape()[1]);
    let b = match x.shape() {
        [b, f] if *f == fi => *b,
        s => return Err(Error::invalid(format!("linear expects (batch, {fi}), got {s:?}"))),
    };
    let w = p.weight.values();
    let xd = x.data();
    let mut out = vec![0.0; b * fo];
    for bi in 0..b {
        let xr = &xd[bi * fi..(bi + 1) * fi];
        for o in 0..fo {
            let wr = &w[o * fi..(o + 1) * fi];
            let mut acc = p.bias.as_ref().map_or(0.0, |bb| bb[o]);
            for i in 0..fi {
                acc += wr[i] * xr[i];
            }
            out[bi * fo + o] = acc;
        }
    }
    Tensor::new(&[b, fo], out)
}

fn relu(mut a: Tensor) -> Tensor {
    for v in a.data_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    a
}

fn flatten(a: Tensor) -> Result<Tensor> {
    let b = a.batch();
    let f = if b == 0 { 0 } else { a.len() / b };
    a.reshape(&[b, f])
}

fn avg_pool(a: &Tensor, k: usize) -> Result<Tensor> {
    let (b, c, h, w) = match a.shape() {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(Error::invalid(format!("pooling expects 4-D input, got {s:?}"))),
    };
    let (ho, wo) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let x = a.data();
    let mut out = vec![0.0; b * c * ho * wo];
    for bc in 0..b * c {
        for y in 0..ho {
            for xo in 0..wo {
                let mut acc = 0.0;
                for i in 0..k {
                    let row = bc * h * w + (y * k + i) * w + xo * k;
                    acc += x[row..row + k].iter().sum::<f64>();
                }
                out[(bc * ho + y) * wo + xo] = acc * inv;
            }
        }
    }
    Tensor::new(&[b, c, ho, wo], out)
}

fn avg_pool_backward(g: &Tensor, k: usize, in_shape: &[usize]) -> Result<Tensor> {
    let (b, c, h, w) = match in_shape {
        [b, c, h, w] => (*b, *c, *h, *w),
        s => return Err(Error::TraceMismatch(format!("pool input shape {s:?}"))),
    };
    let (ho, wo) = (h / k, w / k);
    if g.shape() != [b, c, ho, wo] {
        return Err(Error::TraceMismatch(format!("pool gradient shape {:?}", g.shape())));
    }
    let inv = 1.0 / (k * k) as f64;
    let gd = g.data();
    let mut dx = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        for y in 0..ho {
            for xo in 0..wo {
                let v = gd[(bc * ho + y) * wo + xo] * inv;
                for i in 0..k {
                    let row = bc * h * w + (y * k + i) * w + xo * k;
                    dx[row..row + k].iter_mut().for_each(|d| *d += v);
                }
            }
        }
    }
    Tensor::new(in_shape, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss_and_grad;

    fn tiny() -> SparseModel {
        let layers = vec![
            LayerSpec::Conv(ConvSpec::new(3, 1, 4).with_padding(1)),
            LayerSpec::Relu,
            LayerSpec::AvgPool { window: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear {
                in_features: 16,
                out_features: 3,
            },
        ];
        SparseModel::new(&[1, 4, 4], layers, 5).unwrap()
    }

    #[test]
    fn single_linear_gradient_is_outer_product() {
        let mut m = SparseModel::new(
            &[3],
            vec![LayerSpec::Linear {
                in_features: 3,
                out_features: 2,
            }],
            1,
        )
        .unwrap();
        m.params_mut(0).unwrap().weight = MaskedTensor::dense(&[2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        let x = Tensor::new(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let target = [1.0, 0.0];
        let (y, trace) = m.forward_train(&x, &SapConfig::dense(), 32).unwrap();
        // Squared error 0.5 * |y - t|^2 → dL/dy = y - t.
        let r: Vec<f64> = y.data().iter().zip(target).map(|(a, t)| a - t).collect();
        let g = m.backward(&trace, &Tensor::new(&[1, 2], r.clone()).unwrap(), GradMode::Masked).unwrap();
        let lg = g.layer(0).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert!((lg.weight[o * 3 + i] - r[o] * x.data()[i]).abs() < 1e-15);
            }
        }
        assert_eq!(lg.bias.as_ref().unwrap(), &r);
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut m = tiny();
        let x = Tensor::filled(&[2, 1, 4, 4], 0.3);
        let (y, trace) = m.forward_train(&x, &SapConfig::dense(), 32).unwrap();
        let (_, g) = loss_and_grad(&y, &[0, 1]).unwrap();
        let grads = m.backward(&trace, &g, GradMode::Masked).unwrap();
        m.apply_gradients(&grads, 0.1);
        assert!(matches!(m.backward(&trace, &g, GradMode::Masked), Err(Error::TraceMismatch(_))));
    }

    #[test]
    fn masked_step_preserves_pruned_zeros() {
        let mut m = tiny();
        m.random_prune(0.5, &[], 3).unwrap();
        let x = Tensor::new(&[2, 1, 4, 4], (0..32).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let (y, trace) = m.forward_train(&x, &SapConfig::dense(), 32).unwrap();
        let (_, g) = loss_and_grad(&y, &[0, 2]).unwrap();
        let grads = m.backward(&trace, &g, GradMode::Dense).unwrap();
        m.apply_gradients(&grads, 0.5);
        for l in m.param_layers() {
            let p = m.params(l).unwrap();
            for (v, &k) in p.weight.values().iter().zip(p.weight.mask().bits()) {
                if !k {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn sap_does_not_change_forward_output() {
        let m = tiny();
        let x = Tensor::new(&[3, 1, 4, 4], (0..48).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        let (a, _) = m.forward_train(&x, &SapConfig::dense(), 32).unwrap();
        let (b, t) = m.forward_train(&x, &SapConfig::new(0.9).unwrap(), 32).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, m.forward(&x).unwrap());
        assert!(t.total_cache_bits() < t.total_dense_bits());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let m = tiny();
        let mut x = Tensor::zeros(&[1, 1, 4, 4]);
        x.data_mut()[3] = f64::NAN;
        assert!(matches!(m.forward(&x), Err(Error::NonFinite { layer: 0 })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = tiny();
        m.random_prune(0.9, &[], 8).unwrap();
        let bytes = m.to_checkpoint(32).unwrap();
        let mut other = tiny();
        other.load_checkpoint(&bytes).unwrap();
        for l in m.param_layers() {
            assert!(m.params(l).unwrap().weight.bit_eq(&other.params(l).unwrap().weight));
            assert_eq!(m.params(l).unwrap().bias, other.params(l).unwrap().bias);
        }
        assert!(other.load_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
