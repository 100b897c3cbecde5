use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bae::{self, ExtrusionPlan};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fl::client::{local_train, ExtrusionStep, LayerTopK, LocalOutcome, LocalSetup, TopKGradients};
use crate::fl::config::{RoundConfig, Variant};
use crate::fl::partition::partition_dirichlet;
use crate::fl::server::{adjust_structure, aggregate, aggregate_top_k, aggregation_weights};
use crate::fl::wire::{send_model, send_tensor_as, WireCount};
use crate::nn::{argmax_rows, LayerSpec, SparseModel};
use crate::sap::SapConfig;
use crate::sparse::{CompressionScheme, Mask, MaskedTensor};

/// Everything recorded about one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub clients: usize,
    /// Sample-weighted mean of the clients' mean base loss.
    pub train_loss: f64,
    /// Test accuracy of the model the server keeps after this round.
    pub eval_acc: f64,
    pub adjusted: bool,
    pub zeta: Option<f64>,
    pub pre_adjust_acc: Option<f64>,
    /// `pre_adjust_acc - eval_acc` in adjustment rounds.
    pub post_adjust_drop: Option<f64>,
    /// Norm of the marked weights in the aggregated model, before adjustment;
    /// `None` when nothing was marked.
    pub theta_low_norm: Option<f64>,
    pub mask_sparsity: f64,
    /// Per prunable layer, after the round.
    pub layer_sparsity: Vec<f64>,
    pub layer_sparsity_before: Vec<f64>,
    /// Largest `|w|` over grown positions right after adjustment.
    pub grown_max_abs: Option<f64>,
    /// Fraction of dropped weights that had been marked.
    pub drop_marked_overlap: Option<f64>,
    pub swaps: usize,
    /// Largest per-step activation cache over all clients.
    pub cache_bits: u64,
    pub dense_cache_bits: u64,
    /// Largest per-client exchange (download, upload and gradients).
    pub wire_bits: u64,
    pub wire_frame_bytes: u64,
    pub model_bits: u64,
    pub top_k_bits: u64,
}

/// One extrusion step of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrusionRecord {
    pub round: usize,
    pub client: usize,
    pub step: ExtrusionStep,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub rounds: Vec<RoundMetrics>,
    pub extrusion: Vec<ExtrusionRecord>,
    pub shard_sizes: Vec<usize>,
    pub model: SparseModel,
}

impl RunResult {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.eval_acc)
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Classification accuracy in batches of 256.
pub fn evaluate(model: &SparseModel, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(256) {
        let (x, y) = data.batch(chunk);
        let pred = argmax_rows(&model.forward(&x)?);
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Builds the initial global model of a variant: plain convolutions for
/// `NoSap`, random pruning (except `dense_layers`) for pruned variants.
pub fn initial_model(cfg: &RoundConfig, variant: Variant, input_shape: &[usize], layers: &[LayerSpec]) -> Result<SparseModel> {
    let layers: Vec<LayerSpec> = layers
        .iter()
        .map(|l| match l {
            LayerSpec::Conv(c) if variant.plain_conv() => LayerSpec::Conv(c.clone().plain()),
            other => other.clone(),
        })
        .collect();
    let mut model = SparseModel::new(input_shape, layers, cfg.seed)?;
    if variant.is_pruned() {
        model.random_prune(cfg.mask_sparsity, &cfg.dense_layers, mix_seed(&[cfg.seed, 1]))?;
    }
    Ok(model)
}

fn layer_sparsities(model: &SparseModel) -> Vec<f64> {
    model
        .prunable_layers()
        .iter()
        .map(|&l| model.layer_mask(l).unwrap().sparsity())
        .collect()
}

fn send_top_k(t: &TopKGradients, model: &SparseModel, value_bits: u32) -> Result<(TopKGradients, WireCount)> {
    let mut count = WireCount::default();
    let mut layers = Vec::new();
    for lt in &t.layers {
        let shape = model.layer_mask(lt.layer).unwrap().shape().to_vec();
        let n: usize = shape.iter().product();
        let mut bits = vec![false; n];
        let mut values = vec![0.0; n];
        for (&i, &v) in lt.indices.iter().zip(&lt.values) {
            bits[i] = true;
            values[i] = v;
        }
        let sent = MaskedTensor::new(values, Mask::from_bits(&shape, bits)?)?;
        let (recv, c) = send_tensor_as(&sent, value_bits, CompressionScheme::Coo)?;
        count.add(c);
        let indices = recv.mask().unpruned_indices();
        let values = indices.iter().map(|&i| recv.values()[i]).collect();
        layers.push(LayerTopK {
            layer: lt.layer,
            indices,
            values,
        });
    }
    Ok((TopKGradients { layers }, count))
}

/// Runs `cfg.rounds` federated rounds of `variant` from a fresh model.
pub fn run(
    cfg: &RoundConfig,
    variant: Variant,
    input_shape: &[usize],
    layers: &[LayerSpec],
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<RunResult> {
    cfg.validate()?;
    let model = initial_model(cfg, variant, input_shape, layers)?;
    run_from(cfg, variant, model, train, test)
}

/// Runs the protocol starting from a given global model.
pub fn run_from(
    cfg: &RoundConfig,
    variant: Variant,
    mut model: SparseModel,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<RunResult> {
    cfg.validate()?;
    let in_shape = model.input_shape().to_vec();
    if in_shape != train.shape() || in_shape != test.shape() {
        return Err(Error::Config(format!(
            "model input {in_shape:?} does not match data shape {:?}",
            train.shape()
        )));
    }
    if train.classes().max(test.classes()) > model.num_classes() {
        return Err(Error::Config(format!(
            "{} classes but the model has {} outputs",
            train.classes(),
            model.num_classes()
        )));
    }
    let mut part_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 2]));
    let shards = partition_dirichlet(train.labels(), cfg.clients, cfg.alpha, cfg.min_shard, &mut part_rng)?;
    let sap = if variant.prunes_activations() {
        SapConfig::new(cfg.activation_sparsity)?
    } else {
        SapConfig::dense()
    };

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut extrusion = Vec::new();
    for r in 0..cfg.rounds {
        let participants: Vec<usize> = if cfg.clients_per_round == cfg.clients {
            (0..cfg.clients).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 3, r as u64]));
            let mut p = rand::seq::index::sample(&mut rng, cfg.clients, cfg.clients_per_round).into_vec();
            p.sort_unstable();
            p
        };

        let adjusting = variant.adjusts() && cfg.is_adjustment_round(r);
        let zeta = adjusting.then(|| bae::adjustment_rate((r * cfg.local_epochs) as u64, cfg.adjust_stop, cfg.local_epochs));
        let plan: Option<ExtrusionPlan> = match zeta {
            Some(z) => Some(bae::mark_low_magnitude(&model, z)?.with_schedule(cfg.lambda, cfg.penalty, 0, cfg.eta0)),
            None => None,
        };
        let layer_sparsity_before = layer_sparsities(&model);

        let (received, download) = send_model(&model, cfg.value_bits)?;
        let setup = LocalSetup {
            round: r,
            local_epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            eta0: cfg.eta0,
            decay: cfg.decay,
            value_bits: cfg.value_bits,
            sap: &sap,
            extrusion: if variant.extrudes() { plan.as_ref() } else { None },
            top_k_rate: zeta,
        };
        let outcomes: Vec<(usize, Option<LocalOutcome>)> = participants
            .par_iter()
            .map(|&k| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 4, r as u64, k as u64]));
                local_train(received.clone(), train, &shards[k], &setup, &mut rng).map(|o| (k, o))
            })
            .collect::<Result<_>>()?;

        let mut uploads = Vec::new();
        let mut grads = Vec::new();
        let mut sizes = Vec::new();
        let mut losses = Vec::new();
        let (mut wire_bits, mut wire_bytes, mut top_k_bits) = (0, 0, 0);
        let (mut cache_bits, mut dense_cache_bits) = (0, 0);
        for (k, o) in outcomes {
            let Some(o) = o else { continue };
            let (m, up) = send_model(&o.model, cfg.value_bits)?;
            let mut per_client = download + up;
            if let Some(t) = &o.top_k {
                let (t, c) = send_top_k(t, &m, cfg.value_bits)?;
                top_k_bits = top_k_bits.max(c.bits);
                per_client.add(c);
                grads.push(t);
            }
            wire_bits = wire_bits.max(per_client.bits);
            wire_bytes = wire_bytes.max(per_client.frame_bytes);
            cache_bits = cache_bits.max(o.peak_cache_bits);
            dense_cache_bits = dense_cache_bits.max(o.peak_dense_cache_bits);
            extrusion.extend(o.extrusion.into_iter().map(|step| ExtrusionRecord { round: r, client: k, step }));
            sizes.push(o.samples);
            losses.push(o.mean_loss);
            uploads.push(m);
        }
        let weights = aggregation_weights(&sizes)?;
        let refs: Vec<&SparseModel> = uploads.iter().collect();
        let mut agg = aggregate(&refs, &weights)?;
        let train_loss = losses.iter().zip(&weights).map(|(l, p)| l * p).sum();

        let mut metrics = RoundMetrics {
            round: r,
            clients: uploads.len(),
            train_loss,
            eval_acc: 0.0,
            adjusted: adjusting,
            zeta,
            pre_adjust_acc: None,
            post_adjust_drop: None,
            theta_low_norm: None,
            mask_sparsity: 0.0,
            layer_sparsity: Vec::new(),
            layer_sparsity_before,
            grown_max_abs: None,
            drop_marked_overlap: None,
            swaps: 0,
            cache_bits,
            dense_cache_bits,
            wire_bits,
            wire_frame_bytes: wire_bytes,
            model_bits: download.bits,
            top_k_bits,
        };
        if let (Some(z), Some(plan)) = (zeta, &plan) {
            metrics.theta_low_norm = (!plan.is_empty()).then(|| bae::theta_low_norm(&agg, plan));
            let pre = evaluate(&agg, test)?;
            let grad_refs: Vec<&TopKGradients> = grads.iter().collect();
            let agg_grads = aggregate_top_k(&grad_refs, &weights, &agg)?;
            let report = adjust_structure(&mut agg, &agg_grads, z)?;
            let post = evaluate(&agg, test)?;
            let mut grown_max: f64 = 0.0;
            let (mut dropped, mut overlap) = (0usize, 0usize);
            for a in &report {
                let w = agg.params(a.layer).unwrap().weight.values();
                grown_max = a.grown.iter().fold(grown_max, |m, &i| m.max(w[i].abs()));
                let marked = plan.layer(a.layer).unwrap_or(&[]);
                dropped += a.dropped.len();
                overlap += a.dropped.iter().filter(|i| marked.binary_search(i).is_ok()).count();
            }
            metrics.pre_adjust_acc = Some(pre);
            metrics.post_adjust_drop = Some(pre - post);
            metrics.grown_max_abs = Some(grown_max);
            metrics.drop_marked_overlap = (dropped > 0).then(|| overlap as f64 / dropped as f64);
            metrics.swaps = dropped;
            metrics.eval_acc = post;
            log::debug!("round {r}: adjusted {dropped} weights, overlap with marked set {overlap}/{dropped}");
        } else {
            metrics.eval_acc = evaluate(&agg, test)?;
        }
        metrics.mask_sparsity = agg.mask_sparsity();
        metrics.layer_sparsity = layer_sparsities(&agg);
        log::info!(
            "{variant} seed {} round {r}: loss {:.4} acc {:.4}",
            cfg.seed,
            metrics.train_loss,
            metrics.eval_acc
        );
        rounds.push(metrics);
        model = agg;
    }
    Ok(RunResult {
        variant,
        seed: cfg.seed,
        rounds,
        extrusion,
        shard_sizes: shards.iter().map(Vec::len).collect(),
        model,
    })
}
