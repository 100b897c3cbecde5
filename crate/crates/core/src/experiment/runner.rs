use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{from_layer_specs, resnet18_cifar, CostLayer, CostReport, Framework, ReportSettings};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::fl::{run, RunResult, Variant};

/// Column order of `metrics.csv`.
pub const METRICS_COLUMNS: [&str; 10] = [
    "round",
    "variant",
    "seed",
    "train_loss",
    "eval_acc",
    "post_adjust_drop",
    "theta_low_norm",
    "mask_sparsity",
    "cache_bits",
    "wire_bits",
];

#[derive(Debug, Serialize)]
struct MetricsRow<'a> {
    round: usize,
    variant: &'a str,
    seed: u64,
    train_loss: f64,
    eval_acc: f64,
    post_adjust_drop: Option<f64>,
    theta_low_norm: Option<f64>,
    mask_sparsity: f64,
    cache_bits: u64,
    wire_bits: u64,
}

/// Per-round metrics of one run as CSV text, header first. Values absent in
/// a round are left empty.
pub fn metrics_csv(result: &RunResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in &result.rounds {
        w.serialize(MetricsRow {
            round: m.round,
            variant: result.variant.name(),
            seed: result.seed,
            train_loss: m.train_loss,
            eval_acc: m.eval_acc,
            post_adjust_drop: m.post_adjust_drop,
            theta_low_norm: m.theta_low_norm,
            mask_sparsity: m.mask_sparsity,
            cache_bits: m.cache_bits,
            wire_bits: m.wire_bits,
        })?;
    }
    if result.rounds.is_empty() {
        w.write_record(METRICS_COLUMNS)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Final numbers of one (variant, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_train_loss: f64,
    /// Mean accuracy drop over adjustment rounds that changed the mask.
    pub mean_post_adjust_drop: Option<f64>,
    pub dir: PathBuf,
}

impl RunSummary {
    pub fn of(result: &RunResult, dir: PathBuf) -> Self {
        let drops: Vec<f64> = result
            .rounds
            .iter()
            .filter(|m| m.swaps > 0)
            .filter_map(|m| m.post_adjust_drop)
            .collect();
        Self {
            variant: result.variant,
            seed: result.seed,
            rounds: result.rounds.len(),
            final_accuracy: result.final_accuracy(),
            final_train_loss: result.rounds.last().map_or(f64::NAN, |m| m.train_loss),
            mean_post_adjust_drop: mean(&drops),
            dir,
        }
    }
}

/// Mean and sample standard deviation across seeds of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantStats {
    pub variant: Variant,
    pub seeds: usize,
    pub final_accuracy_mean: f64,
    pub final_accuracy_std: f64,
    pub post_adjust_drop_mean: Option<f64>,
    pub post_adjust_drop_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub runs: Vec<RunSummary>,
    pub variants: Vec<VariantStats>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn std_dev(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

impl ExperimentSummary {
    pub fn new(runs: Vec<RunSummary>) -> Self {
        let mut variants = Vec::new();
        for v in Variant::ALL {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.variant == v).collect();
            if mine.is_empty() {
                continue;
            }
            let acc: Vec<f64> = mine.iter().map(|r| r.final_accuracy).collect();
            let drops: Vec<f64> = mine.iter().filter_map(|r| r.mean_post_adjust_drop).collect();
            variants.push(VariantStats {
                variant: v,
                seeds: mine.len(),
                final_accuracy_mean: mean(&acc).unwrap(),
                final_accuracy_std: std_dev(&acc).unwrap(),
                post_adjust_drop_mean: mean(&drops),
                post_adjust_drop_std: std_dev(&drops),
            });
        }
        Self { runs, variants }
    }

    pub fn variant(&self, v: Variant) -> Option<&VariantStats> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

/// Runs one (variant, seed) cell. `base` resolves relative data paths.
pub fn run_cell(cfg: &ExperimentConfig, variant: Variant, seed: u64, base: &Path) -> Result<RunResult> {
    let (train, test) = cfg.datasets(seed, base)?;
    let layers = cfg.model.resolved_layers();
    run(&cfg.round_config(seed), variant, &cfg.model.input_shape, &layers, &train, &test)
}

/// Directory of one run below the experiment output directory.
pub fn run_dir(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join(variant.name()).join(format!("seed-{seed}"))
}

/// Runs every (variant, seed) cell in parallel, each writing its own
/// `metrics.csv`, then writes `summary.json` and the resolved `config.toml`
/// into `out`.
pub fn run_matrix(
    cfg: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    base: &Path,
    out: &Path,
) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let cells: Vec<(Variant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let runs = cells
        .par_iter()
        .map(|&(v, seed)| {
            let result = run_cell(cfg, v, seed, base)?;
            let dir = run_dir(out, v, seed);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("metrics.csv"), metrics_csv(&result)?)?;
            log::info!("{v} seed {seed}: final accuracy {:.4}", result.final_accuracy());
            Ok(RunSummary::of(&result, dir))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = ExperimentSummary::new(runs);
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(summary)
}

/// Target mask sparsities of the cost table.
pub const COST_SPARSITIES: [f64; 3] = [0.95, 0.9, 0.8];

#[derive(Debug, Serialize)]
struct CostCsvRow<'a> {
    model: &'a str,
    framework: &'a str,
    mask_sparsity: f64,
    mean_accuracy: Option<f64>,
    memory_bits: f64,
    training_flops: f64,
    comm_bits: f64,
    memory_ratio: f64,
    flops_ratio: f64,
    comm_ratio: f64,
}

fn measured_variant(fw: Framework) -> Option<Variant> {
    match fw {
        Framework::FedAvg => Some(Variant::FedAvgDense),
        Framework::StaticPrune => Some(Variant::StaticPrune),
        Framework::FedMef => Some(Variant::FedMef),
        Framework::FedDst | Framework::FedTiny => None,
    }
}

/// Cost table for the configured model and the bundled ResNet18, one row per
/// (model, framework, target sparsity). Mean accuracies come from `summary`
/// for the configured model at its configured sparsity.
pub fn cost_report_csv(cfg: &ExperimentConfig, summary: Option<&ExperimentSummary>) -> Result<String> {
    let own = from_layer_specs(&cfg.model.input_shape, &cfg.model.resolved_layers())?;
    let models: [(&str, Vec<CostLayer>, Vec<usize>); 2] = [
        ("configured", own, cfg.model.dense_layers.clone()),
        ("resnet18_cifar", resnet18_cifar(), Vec::new()),
    ];
    let mut w = csv::Writer::from_writer(Vec::new());
    for (name, layers, dense_layers) in &models {
        for s_m in COST_SPARSITIES {
            let settings = ReportSettings {
                mask_sparsity: s_m,
                act_sparsity: cfg.training.activation_sparsity,
                local_iters: cfg.federation.local_epochs,
                batch: cfg.federation.batch_size,
                value_bits: cfg.run.value_bits,
                dense_layers: dense_layers.clone(),
                ..ReportSettings::default()
            };
            let report = CostReport::build(layers, &settings)?;
            for row in &report.rows {
                let accuracy = match (summary, measured_variant(row.framework)) {
                    (Some(s), Some(v)) if *name == "configured" && s_m == cfg.training.mask_sparsity => {
                        s.variant(v).map(|st| st.final_accuracy_mean)
                    }
                    _ => None,
                };
                w.serialize(CostCsvRow {
                    model: name,
                    framework: row.framework.name(),
                    mask_sparsity: s_m,
                    mean_accuracy: accuracy,
                    memory_bits: row.memory_bits,
                    training_flops: row.training_flops,
                    comm_bits: row.comm_bits,
                    memory_ratio: row.memory_ratio,
                    flops_ratio: row.flops_ratio,
                    comm_ratio: row.comm_ratio,
                })?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
