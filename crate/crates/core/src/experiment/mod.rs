//! Experiment plumbing: TOML configuration, (variant, seed) run matrices with
//! per-run metrics files, the oracle self-check suite and the cost table.

mod check;
mod config;
mod runner;

pub use check::{
    codec_boundary_failures, codec_checks, codec_failures, expected_bits, gradient_check, gradient_error, nsconv_checks,
    nsconv_moment_errors, run_checks, sap_checks, sap_gradient_gap, schedule_check, schedule_violations, tiny_cnn,
    top_k_mismatches, CheckOutcome, CheckSizes,
};
pub use config::{DataSection, ExperimentConfig, FederationSection, ModelSection, RunSection, TrainingSection};
pub use runner::{
    cost_report_csv, metrics_csv, run_cell, run_dir, run_matrix, ExperimentSummary, RunSummary, VariantStats, COST_SPARSITIES,
    METRICS_COLUMNS,
};
