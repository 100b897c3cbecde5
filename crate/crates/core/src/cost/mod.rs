//! Closed-form memory, training-FLOPs and communication estimators per
//! framework, a layer-by-layer FLOP counter, and a static ResNet18 spec used
//! only for cost-ratio reproduction.
//!
//! Conventions: a multiply-accumulate counts as 2 FLOPs, the backward pass
//! costs twice the forward pass, and normalization and loss FLOPs are omitted.
//! Memory and exchange sizes are in bits.

mod flops;
mod report;

pub use flops::{flops_of_model, from_layer_specs, resnet18_cifar, total_activations, total_weights, CostLayer};
pub use report::{CostReport, CostRow, ReportSettings};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::Variant;

/// Training frameworks whose costs have closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Framework {
    /// Dense federated averaging.
    FedAvg,
    /// A fixed sparse mask, never adjusted.
    StaticPrune,
    /// Dynamic pruning without TopK gradient uploads.
    FedDst,
    /// Dynamic pruning with TopK gradient uploads and dense activation caches.
    FedTiny,
    /// Dynamic pruning with extrusion and pruned activation caches.
    FedMef,
}

impl Framework {
    pub const ALL: [Framework; 5] = [
        Framework::FedAvg,
        Framework::StaticPrune,
        Framework::FedDst,
        Framework::FedTiny,
        Framework::FedMef,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Framework::FedAvg => "FedAvg",
            Framework::StaticPrune => "StaticPrune",
            Framework::FedDst => "FedDST-like",
            Framework::FedTiny => "FedTiny-like",
            Framework::FedMef => "FedMef",
        }
    }

    /// The cost model of a simulator variant. All three ablations keep pruned
    /// activation caches, TopK uploads and per-step weight overhead, so they
    /// share the full method's closed forms.
    pub fn of_variant(v: Variant) -> Framework {
        match v {
            Variant::FedMef | Variant::NoBae | Variant::NoSap => Framework::FedMef,
            Variant::StaticPrune => Framework::StaticPrune,
            Variant::FedAvgDense => Framework::FedAvg,
        }
    }
}

impl std::fmt::Display for Framework {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Every quantity the closed forms draw on. Fields a framework does not use
/// may be left unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostInputs {
    /// `M^p_d`: dense parameter memory.
    pub param_dense_bits: Option<f64>,
    /// `M^p_s`: sparse parameter memory.
    pub param_sparse_bits: Option<f64>,
    /// `M^a_d`: dense activation memory.
    pub act_dense_bits: Option<f64>,
    /// `M^a_s`: pruned activation memory.
    pub act_sparse_bits: Option<f64>,
    /// `M_xi`: memory of the TopK gradients and their indices.
    pub top_k_bits: Option<f64>,
    /// `F_d`, `F_s`: dense and sparse inference FLOPs.
    pub flops_dense: Option<f64>,
    pub flops_sparse: Option<f64>,
    /// `F_o`: per-iteration overhead FLOPs of extrusion, standardization and
    /// activation pruning.
    pub flops_overhead: Option<f64>,
    /// `O_d`, `O_s`, `O_xi`: dense, sparse and TopK exchange sizes.
    pub exchange_dense_bits: Option<f64>,
    pub exchange_sparse_bits: Option<f64>,
    pub exchange_top_k_bits: Option<f64>,
    /// `E`: local iterations per round.
    pub local_iters: Option<usize>,
}

fn need(value: Option<f64>, name: &str, fw: Framework) -> Result<f64> {
    let v = value.ok_or_else(|| Error::invalid(format!("{fw} cost needs {name}")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
    }
    Ok(v)
}

fn not_above(sparse: Option<f64>, dense: Option<f64>, what: &str) -> Result<()> {
    match (sparse, dense) {
        (Some(s), Some(d)) if s > d => Err(Error::invalid(format!("sparse {what} {s} exceeds dense {d}"))),
        _ => Ok(()),
    }
}

impl CostInputs {
    /// Checks that sparse quantities never exceed their dense counterparts.
    pub fn validate(&self) -> Result<()> {
        not_above(self.param_sparse_bits, self.param_dense_bits, "parameter memory")?;
        not_above(self.act_sparse_bits, self.act_dense_bits, "activation memory")?;
        not_above(self.flops_sparse, self.flops_dense, "FLOPs")?;
        not_above(self.exchange_sparse_bits, self.exchange_dense_bits, "exchange size")
    }

    pub fn memory(&self, fw: Framework) -> Result<f64> {
        memory_footprint(fw, self)
    }

    pub fn training_flops(&self, fw: Framework) -> Result<f64> {
        let e = self
            .local_iters
            .ok_or_else(|| Error::invalid(format!("{fw} cost needs local_iters")))?;
        let f_d = need(self.flops_dense, "flops_dense", fw)?;
        let f_s = if fw == Framework::FedAvg { 0.0 } else { need(self.flops_sparse, "flops_sparse", fw)? };
        let f_o = if fw == Framework::FedMef { need(self.flops_overhead, "flops_overhead", fw)? } else { 0.0 };
        training_flops(fw, f_d, f_s, f_o, e)
    }

    pub fn comm_bits(&self, fw: Framework) -> Result<f64> {
        self.validate()?;
        let o_d = if fw == Framework::FedAvg { need(self.exchange_dense_bits, "exchange_dense_bits", fw)? } else { 0.0 };
        let o_s = if fw == Framework::FedAvg { 0.0 } else { need(self.exchange_sparse_bits, "exchange_sparse_bits", fw)? };
        let o_xi = match fw {
            Framework::FedTiny | Framework::FedMef => need(self.exchange_top_k_bits, "exchange_top_k_bits", fw)?,
            _ => 0.0,
        };
        Ok(comm_bits(fw, o_d, o_s, o_xi))
    }
}

/// Training memory: parameters, parameter gradients, cached activations and
/// activation gradients.
pub fn memory_footprint(fw: Framework, inputs: &CostInputs) -> Result<f64> {
    inputs.validate()?;
    let a_d = need(inputs.act_dense_bits, "act_dense_bits", fw)?;
    Ok(match fw {
        Framework::FedAvg => 2.0 * need(inputs.param_dense_bits, "param_dense_bits", fw)? + 2.0 * a_d,
        Framework::StaticPrune => 2.0 * need(inputs.param_sparse_bits, "param_sparse_bits", fw)? + 2.0 * a_d,
        Framework::FedDst | Framework::FedTiny => {
            2.0 * need(inputs.param_sparse_bits, "param_sparse_bits", fw)?
                + 2.0 * a_d
                + need(inputs.top_k_bits, "top_k_bits", fw)?
        }
        Framework::FedMef => {
            2.0 * need(inputs.param_sparse_bits, "param_sparse_bits", fw)?
                + need(inputs.act_sparse_bits, "act_sparse_bits", fw)?
                + a_d
                + need(inputs.top_k_bits, "top_k_bits", fw)?
        }
    })
}

/// Maximum training FLOPs of one round of `e` local iterations. Dynamic
/// methods pay a dense forward/backward in the last iteration to collect
/// gradients at pruned positions. A static mask never does, so it costs
/// `3 F_s E`.
pub fn training_flops(fw: Framework, f_d: f64, f_s: f64, f_o: f64, e: usize) -> Result<f64> {
    if e == 0 {
        return Err(Error::invalid("at least one local iteration is required"));
    }
    let e = e as f64;
    Ok(match fw {
        Framework::FedAvg => 3.0 * f_d * e,
        Framework::StaticPrune => 3.0 * f_s * e,
        Framework::FedDst | Framework::FedTiny => 3.0 * f_s * (e - 1.0) + f_s + 2.0 * f_d,
        Framework::FedMef => 3.0 * (f_s + f_o) * (e - 1.0) + (f_s + f_o) + 2.0 * f_d,
    })
}

/// Per-sample overhead FLOPs of the full method: `4 (1 - s_m) n_theta` for
/// the regularization gradient and weight standardization plus
/// `n_a log2 n_a` for activation top-k selection.
///
/// Inference FLOPs and activation counts are per sample, while the weight
/// terms run once per optimizer step; `batch` amortizes them over the
/// samples of a step. `batch = 1` charges them in full to every sample.
pub fn overhead_flops(mask_sparsity: f64, n_theta: usize, n_a: usize, batch: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&mask_sparsity) {
        return Err(Error::invalid(format!("mask sparsity {mask_sparsity} outside [0, 1]")));
    }
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let weights = 4.0 * (1.0 - mask_sparsity) * n_theta as f64 / batch as f64;
    let acts = if n_a > 1 { n_a as f64 * (n_a as f64).log2() } else { 0.0 };
    Ok(weights + acts)
}

/// Maximum data exchanged by one client in one round.
pub fn comm_bits(fw: Framework, o_d: f64, o_s: f64, o_xi: f64) -> f64 {
    match fw {
        Framework::FedAvg => 2.0 * o_d,
        Framework::StaticPrune | Framework::FedDst => 2.0 * o_s,
        Framework::FedTiny | Framework::FedMef => 2.0 * o_s + o_xi,
    }
}
