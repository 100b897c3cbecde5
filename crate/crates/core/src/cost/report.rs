use serde::{Deserialize, Serialize};

use crate::bae::adjust_count;
use crate::cost::flops::{flops_of_model, total_activations, total_weights, CostLayer};
use crate::cost::{overhead_flops, CostInputs, Framework};
use crate::error::{Error, Result};
use crate::sap::kept_count;
use crate::sparse::{auto_storage_bits, matrix_dims, storage_bits, CompressionScheme};

/// Knobs of a cost evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    /// Target mask sparsity `s_tm`, applied uniformly to prunable layers.
    pub mask_sparsity: f64,
    /// Target activation-cache sparsity `s_ta`.
    pub act_sparsity: f64,
    /// Local iterations per round `E`.
    pub local_iters: usize,
    /// Samples per optimizer step, used to amortize per-step weight overhead.
    pub batch: usize,
    pub value_bits: u32,
    /// Indices into the cost layer list that stay dense.
    pub dense_layers: Vec<usize>,
    /// Largest adjustment rate, which sizes the TopK upload.
    pub max_adjust_rate: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            mask_sparsity: 0.9,
            act_sparsity: 0.9,
            local_iters: 10,
            batch: 64,
            value_bits: 32,
            dense_layers: Vec::new(),
            max_adjust_rate: 0.4,
        }
    }
}

/// Costs of one framework, absolute and relative to dense FedAvg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub framework: Framework,
    pub memory_bits: f64,
    pub training_flops: f64,
    pub comm_bits: f64,
    pub memory_ratio: f64,
    pub flops_ratio: f64,
    pub comm_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub settings: ReportSettings,
    pub n_theta: usize,
    pub n_a: usize,
    pub inputs: CostInputs,
    pub rows: Vec<CostRow>,
}

impl CostReport {
    /// Evaluates every framework on a model under uniform per-layer density.
    pub fn build(layers: &[CostLayer], settings: &ReportSettings) -> Result<CostReport> {
        let s = settings;
        if !(0.0..1.0).contains(&s.mask_sparsity) || !(0.0..1.0).contains(&s.act_sparsity) {
            return Err(Error::invalid("target sparsities must lie in [0, 1)"));
        }
        if let Some(&bad) = s.dense_layers.iter().find(|&&i| i >= layers.len()) {
            return Err(Error::invalid(format!("dense layer {bad} out of range")));
        }
        let b = s.value_bits;
        let densities: Vec<f64> = (0..layers.len())
            .map(|i| if s.dense_layers.contains(&i) { 1.0 } else { 1.0 - s.mask_sparsity })
            .collect();
        let (f_d, f_s) = flops_of_model(layers, &densities)?;
        let n_theta = total_weights(layers);
        let n_a = total_activations(layers);
        let f_o = overhead_flops(s.mask_sparsity, n_theta, n_a, s.batch)?;

        let (mut p_d, mut p_s, mut top_k) = (0u64, 0u64, 0u64);
        for (l, &d) in layers.iter().zip(&densities) {
            let shape = l.weight_shape();
            let n = l.weights();
            let nnz = (d * n as f64).round() as usize;
            p_d += n as u64 * u64::from(b);
            p_s += auto_storage_bits(&shape, nnz, b)?;
            if d < 1.0 {
                let (n_r, n_c) = matrix_dims(&shape);
                let xi = adjust_count(s.max_adjust_rate, nnz).min(n - nnz);
                top_k += storage_bits(n, xi, b, CompressionScheme::Coo, n_r, n_c)?;
            }
        }
        let mut a_s = 0u64;
        for l in layers.iter().filter(|l| !l.shares_input()) {
            let n = l.input_elems();
            a_s += auto_storage_bits(&[n], kept_count(n, s.act_sparsity), b)?;
        }
        let inputs = CostInputs {
            param_dense_bits: Some(p_d as f64),
            param_sparse_bits: Some(p_s as f64),
            act_dense_bits: Some(n_a as f64 * f64::from(b)),
            act_sparse_bits: Some(a_s as f64),
            top_k_bits: Some(top_k as f64),
            flops_dense: Some(f_d),
            flops_sparse: Some(f_s),
            flops_overhead: Some(f_o),
            exchange_dense_bits: Some(p_d as f64),
            exchange_sparse_bits: Some(p_s as f64),
            exchange_top_k_bits: Some(top_k as f64),
            local_iters: Some(s.local_iters),
        };

        let base_memory = inputs.memory(Framework::FedAvg)?;
        let base_flops = inputs.training_flops(Framework::FedAvg)?;
        let base_comm = inputs.comm_bits(Framework::FedAvg)?;
        let mut rows = Vec::new();
        for fw in Framework::ALL {
            let memory_bits = inputs.memory(fw)?;
            let training_flops = inputs.training_flops(fw)?;
            let comm_bits = inputs.comm_bits(fw)?;
            rows.push(CostRow {
                framework: fw,
                memory_bits,
                training_flops,
                comm_bits,
                memory_ratio: memory_bits / base_memory,
                flops_ratio: training_flops / base_flops,
                comm_ratio: comm_bits / base_comm,
            });
        }
        Ok(CostReport {
            settings: settings.clone(),
            n_theta,
            n_a,
            inputs,
            rows,
        })
    }

    pub fn row(&self, fw: Framework) -> &CostRow {
        self.rows.iter().find(|r| r.framework == fw).expect("every framework has a row")
    }
}
