use rand::seq::SliceRandom;
use rand::Rng;

use crate::bae::{self, ExtrusionPlan};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{loss_and_grad, GradMode, SparseModel, Tensor};
use crate::sap::SapConfig;
use crate::sparse::Mask;

/// Largest-magnitude pruned-position gradients of one layer, sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTopK {
    pub layer: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopKGradients {
    pub layers: Vec<LayerTopK>,
}

impl TopKGradients {
    pub fn layer(&self, l: usize) -> Option<&LayerTopK> {
        self.layers.iter().find(|t| t.layer == l)
    }
}

/// The `k` pruned positions of largest `|grad|` (ties to the lower index),
/// returned in index order.
pub fn top_k_pruned(grad: &[f64], mask: &Mask, k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut cand = mask.pruned_indices();
    let k = k.min(cand.len());
    if k == 0 {
        return (Vec::new(), Vec::new());
    }
    let cmp = |a: &usize, b: &usize| grad[*b].abs().total_cmp(&grad[*a].abs()).then(a.cmp(b));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable();
    let values = cand.iter().map(|&i| grad[i]).collect();
    (cand, values)
}

/// Settings shared by every client of one round.
#[derive(Debug, Clone)]
pub struct LocalSetup<'a> {
    pub round: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub eta0: f64,
    pub decay: f64,
    pub value_bits: u32,
    pub sap: &'a SapConfig,
    /// Surrogate loss and budgeted learning rate for this round.
    pub extrusion: Option<&'a ExtrusionPlan>,
    /// Adjustment rate used to size the TopK upload, if any.
    pub top_k_rate: Option<f64>,
}

/// One optimizer step of an extrusion phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrusionStep {
    pub step: u64,
    pub theta_low_norm: f64,
    pub eta: f64,
    pub beta: f64,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub model: SparseModel,
    pub samples: usize,
    pub steps: u64,
    /// Mean base loss over all local steps.
    pub mean_loss: f64,
    pub peak_cache_bits: u64,
    pub peak_dense_cache_bits: u64,
    pub top_k: Option<TopKGradients>,
    pub extrusion: Vec<ExtrusionStep>,
}

fn check_finite(model: &SparseModel) -> Result<()> {
    for l in model.param_layers() {
        let p = model.params(l).unwrap();
        let bias_ok = p.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()));
        if !bias_ok || !p.weight.values().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { layer: l });
        }
    }
    Ok(())
}

/// Runs `E` epochs of masked mini-batch SGD on a model copy. Returns `None`
/// for an empty shard.
pub fn local_train<R: Rng + ?Sized>(
    mut model: SparseModel,
    data: &LabeledDataset,
    shard: &[usize],
    setup: &LocalSetup<'_>,
    rng: &mut R,
) -> Result<Option<LocalOutcome>> {
    if shard.is_empty() {
        log::warn!("skipping client with an empty shard in round {}", setup.round);
        return Ok(None);
    }
    let steps_per_epoch = shard.len().div_ceil(setup.batch_size);
    let plan = setup.extrusion.map(|p| {
        let mut p = p.clone();
        p.t_budget = (setup.local_epochs * steps_per_epoch) as u64;
        p
    });

    let mut order = shard.to_vec();
    let mut last_batch = Vec::new();
    let mut step = 0u64;
    let mut loss_sum = 0.0;
    let (mut peak_cache, mut peak_dense) = (0, 0);
    let mut telemetry = Vec::new();

    for e in 0..setup.local_epochs {
        let epoch = (setup.round * setup.local_epochs + e) as u64;
        let eta = bae::base_lr(setup.eta0, setup.decay, epoch);
        order.shuffle(rng);
        for batch in order.chunks(setup.batch_size) {
            let (x, y) = data.batch(batch);
            let (logits, trace) = model.forward_train(&x, setup.sap, setup.value_bits)?;
            let (loss, g) = loss_and_grad(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { layer: model.layers().len() - 1 });
            }
            loss_sum += loss;
            peak_cache = peak_cache.max(trace.total_cache_bits());
            peak_dense = peak_dense.max(trace.total_dense_bits());
            let mut grads = model.backward(&trace, &g, GradMode::Masked)?;
            let lr = match &plan {
                Some(plan) => {
                    bae::add_surrogate_grad(&mut grads, &model, plan);
                    let norm = bae::theta_low_norm(&model, plan);
                    let beta = bae::budget_lr(step, plan, norm);
                    let mu = bae::effective_lr(eta, beta, true);
                    telemetry.push(ExtrusionStep {
                        step,
                        theta_low_norm: norm,
                        eta,
                        beta,
                        mu,
                    });
                    mu
                }
                None => eta,
            };
            model.apply_gradients(&grads, lr);
            check_finite(&model)?;
            step += 1;
            last_batch.clear();
            last_batch.extend_from_slice(batch);
        }
    }

    let top_k = match setup.top_k_rate {
        Some(zeta) => Some(extract_top_k(&model, data, &last_batch, setup, zeta)?),
        None => None,
    };
    Ok(Some(LocalOutcome {
        model,
        samples: shard.len(),
        steps: step,
        mean_loss: loss_sum / step as f64,
        peak_cache_bits: peak_cache,
        peak_dense_cache_bits: peak_dense,
        top_k,
        extrusion: telemetry,
    }))
}

/// One dense-gradient pass of the base loss on `batch`, reduced to the
/// `round(zeta * n_l)` largest pruned-position gradients per prunable layer.
pub fn extract_top_k(
    model: &SparseModel,
    data: &LabeledDataset,
    batch: &[usize],
    setup: &LocalSetup<'_>,
    zeta: f64,
) -> Result<TopKGradients> {
    let (x, y): (Tensor, Vec<usize>) = data.batch(batch);
    let (logits, trace) = model.forward_train(&x, setup.sap, setup.value_bits)?;
    let (_, g) = loss_and_grad(&logits, &y)?;
    let grads = model.backward(&trace, &g, GradMode::Dense)?;
    let mut layers = Vec::new();
    for l in model.prunable_layers() {
        let mask = model.layer_mask(l).unwrap();
        let k = bae::adjust_count(zeta, mask.count_ones());
        let (indices, values) = top_k_pruned(&grads.layer(l).unwrap().weight, mask, k);
        layers.push(LayerTopK { layer: l, indices, values });
    }
    Ok(TopKGradients { layers })
}
