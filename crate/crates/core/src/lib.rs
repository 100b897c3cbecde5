//! Federated dynamic pruning with memory-efficient local training.
//!
//! * [`sparse`]: masks, random pruning and density-driven storage codecs.
//! * [`nn`]: a small CNN engine with normalized sparse convolution.
//! * [`sap`]: top-k pruning of activation caches.
//! * [`bae`]: marking, surrogate regularization and the budgeted learning rate.
//! * [`fl`]: the federated protocol with server-side prune/grow adjustment.
//! * [`cost`]: memory, FLOPs and communication estimators.
//! * [`data`]: CSV ingestion and synthetic datasets.
//! * [`experiment`]: configuration, run matrices and metrics output.

pub mod bae;
pub mod cost;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod nn;
pub mod sap;
pub mod sparse;

pub use error::{Error, Result};
