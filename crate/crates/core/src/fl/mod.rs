//! The federated protocol: Dirichlet sharding, masked local training with
//! optional extrusion, weighted aggregation, TopK gradient collection and
//! server-side prune/grow adjustment.

mod client;
mod config;
mod partition;
mod run;
mod server;
mod wire;

pub use client::{extract_top_k, local_train, top_k_pruned, ExtrusionStep, LayerTopK, LocalOutcome, LocalSetup, TopKGradients};
pub use config::{RoundConfig, Variant};
pub use partition::{dirichlet, partition_dirichlet};
pub use run::{evaluate, initial_model, mix_seed, run, run_from, ExtrusionRecord, RoundMetrics, RunResult};
pub use server::{adjust_structure, aggregate, aggregate_top_k, aggregation_weights, AggregatedTopK, LayerAdjustment};
pub use wire::{model_bits, send_model, send_tensor, send_tensor_as, WireCount};
