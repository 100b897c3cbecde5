use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bae::Penalty;
use crate::error::{Error, Result};

/// Framework variants sharing one protocol loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// Extrusion, activation pruning with standardized convolutions, prune/grow adjustment.
    FedMef,
    /// Adjustment without extrusion (plain loss and learning rate).
    NoBae,
    /// Extrusion and adjustment; activation caches pruned under plain convolutions.
    NoSap,
    /// Fixed random mask, dense caches, no adjustment.
    StaticPrune,
    /// Dense model, dense caches.
    FedAvgDense,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::FedMef,
        Variant::NoBae,
        Variant::NoSap,
        Variant::StaticPrune,
        Variant::FedAvgDense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::FedMef => "FedMef",
            Variant::NoBae => "noBaE",
            Variant::NoSap => "noSAP",
            Variant::StaticPrune => "StaticPrune",
            Variant::FedAvgDense => "FedAvgDense",
        }
    }

    pub fn is_pruned(self) -> bool {
        self != Variant::FedAvgDense
    }

    pub fn adjusts(self) -> bool {
        matches!(self, Variant::FedMef | Variant::NoBae | Variant::NoSap)
    }

    pub fn extrudes(self) -> bool {
        matches!(self, Variant::FedMef | Variant::NoSap)
    }

    pub fn prunes_activations(self) -> bool {
        matches!(self, Variant::FedMef | Variant::NoBae | Variant::NoSap)
    }

    /// Forces plain convolutions regardless of the model spec.
    pub fn plain_conv(self) -> bool {
        self == Variant::NoSap
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        Ok(match key.as_str() {
            "fedmef" => Variant::FedMef,
            "nobae" | "fedmefnobae" | "fedtiny" => Variant::NoBae,
            "nosap" | "fedmefnosap" => Variant::NoSap,
            "staticprune" | "static" => Variant::StaticPrune,
            "fedavgdense" | "fedavg" | "dense" => Variant::FedAvgDense,
            _ => return Err(Error::Config(format!("unknown variant {s:?}"))),
        })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.name().to_string()
    }
}

/// Protocol and local-training hyper-parameters of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub clients: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub adjust_period: usize,
    pub adjust_stop: usize,
    pub mask_sparsity: f64,
    pub activation_sparsity: f64,
    pub lambda: f64,
    pub penalty: Penalty,
    pub eta0: f64,
    pub decay: f64,
    pub alpha: f64,
    /// Minimum shard size guaranteed by the partitioner.
    pub min_shard: usize,
    /// Parameterized-layer ordinals kept dense and never adjusted.
    pub dense_layers: Vec<usize>,
    /// Value width used for storage and wire accounting.
    pub value_bits: u32,
    pub seed: u64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            clients: 100,
            clients_per_round: 100,
            local_epochs: 10,
            batch_size: 64,
            rounds: 500,
            adjust_period: 10,
            adjust_stop: 300,
            mask_sparsity: 0.9,
            activation_sparsity: 0.9,
            lambda: 1e-3,
            penalty: Penalty::L2,
            eta0: 1.0,
            decay: 0.95,
            alpha: 0.5,
            min_shard: 1,
            dense_layers: Vec::new(),
            value_bits: 32,
            seed: 0,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.clients == 0 {
            return fail("at least one client is required".into());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.clients {
            return fail(format!(
                "clients_per_round must be in 1..={}, got {}",
                self.clients, self.clients_per_round
            ));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return fail("local_epochs and batch_size must be positive".into());
        }
        if self.adjust_period == 0 {
            return fail("adjust_period must be at least 1".into());
        }
        if self.adjust_stop > self.rounds {
            return fail(format!(
                "adjust_stop ({}) exceeds the number of rounds ({})",
                self.adjust_stop, self.rounds
            ));
        }
        if !(0.0..1.0).contains(&self.mask_sparsity) || !(0.0..1.0).contains(&self.activation_sparsity) {
            return fail("target sparsities must lie in [0, 1)".into());
        }
        if !(self.lambda >= 0.0 && self.eta0 > 0.0 && self.decay > 0.0 && self.decay <= 1.0) {
            return fail("need lambda >= 0, eta0 > 0 and decay in (0, 1]".into());
        }
        if !(self.alpha > 0.0) {
            return fail("Dirichlet alpha must be positive".into());
        }
        if self.value_bits == 0 || self.value_bits > 64 {
            return fail("value_bits must be in 1..=64".into());
        }
        Ok(())
    }

    /// Rounds `r > 0` with `r % adjust_period == 0` and `r <= adjust_stop`.
    pub fn is_adjustment_round(&self, round: usize) -> bool {
        round > 0 && round % self.adjust_period == 0 && round <= self.adjust_stop
    }
}
