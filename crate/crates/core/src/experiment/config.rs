use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bae::Penalty;
use crate::data::{load_csv, synth_blobs, BlobSpec, LabeledDataset, PixelScale};
use crate::error::{Error, Result};
use crate::fl::{RoundConfig, Variant};
use crate::nn::{infer_shapes, ConvSpec, LayerSpec};

/// A full experiment: model, data, federation and training settings plus
/// the (variant, seed) matrix to run. Omitted sections and keys take the
/// defaults of the reference CIFAR-scale setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub training: TrainingSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Resolved against the output root when relative.
    pub output_dir: PathBuf,
    /// Value width for storage and wire accounting.
    pub value_bits: u32,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            variants: vec![Variant::FedMef],
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            value_bits: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `(channels, height, width)` of one sample.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    /// Parameterized-layer ordinals that are never pruned.
    pub dense_layers: Vec<usize>,
    /// Overrides the gain of every convolution when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Default for ModelSection {
    /// Two standardized convolutions and a linear classifier for 1x16x16
    /// inputs and three classes.
    fn default() -> Self {
        let gamma = 0.25;
        Self {
            input_shape: [1, 16, 16],
            layers: vec![
                LayerSpec::Conv(ConvSpec {
                    gamma,
                    ..ConvSpec::new(3, 1, 10).with_padding(1)
                }),
                LayerSpec::Relu,
                LayerSpec::AvgPool { window: 2 },
                LayerSpec::Conv(ConvSpec {
                    gamma,
                    ..ConvSpec::new(5, 10, 20).with_padding(2)
                }),
                LayerSpec::Relu,
                LayerSpec::AvgPool { window: 2 },
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    in_features: 320,
                    out_features: 3,
                },
            ],
            dense_layers: vec![0],
            gamma: None,
        }
    }
}

impl ModelSection {
    /// Layer list with the gain override applied.
    pub fn resolved_layers(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match (l, self.gamma) {
                (LayerSpec::Conv(c), Some(gamma)) => LayerSpec::Conv(ConvSpec { gamma, ..c.clone() }),
                _ => l.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    /// Quadrant-template blobs; the run seed is added to both data seeds.
    Synthetic {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        noise: f64,
        train_seed: u64,
        test_seed: u64,
    },
    /// Rows of `label, values...` matching the model input shape.
    Csv {
        train_path: PathBuf,
        test_path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
        #[serde(default)]
        scale: PixelScale,
    },
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection::Synthetic {
            classes: 3,
            train_per_class: 100,
            test_per_class: 200,
            noise: 1.0,
            train_seed: 100,
            test_seed: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub clients: usize,
    pub clients_per_round: usize,
    /// Dirichlet concentration of the label split.
    pub alpha: f64,
    pub min_shard: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub adjust_period: usize,
    pub adjust_stop: usize,
}

impl Default for FederationSection {
    fn default() -> Self {
        let r = RoundConfig::default();
        Self {
            clients: r.clients,
            clients_per_round: r.clients_per_round,
            alpha: r.alpha,
            min_shard: r.min_shard,
            rounds: r.rounds,
            local_epochs: r.local_epochs,
            batch_size: r.batch_size,
            adjust_period: r.adjust_period,
            adjust_stop: r.adjust_stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub mask_sparsity: f64,
    pub activation_sparsity: f64,
    pub lambda: f64,
    pub penalty: Penalty,
    pub eta0: f64,
    /// Per-epoch learning-rate decay.
    pub decay: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let r = RoundConfig::default();
        Self {
            mask_sparsity: r.mask_sparsity,
            activation_sparsity: r.activation_sparsity,
            lambda: r.lambda,
            penalty: r.penalty,
            eta0: r.eta0,
            decay: r.decay,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks the model chain, the data source and every protocol setting.
    pub fn validate(&self) -> Result<()> {
        if self.run.variants.is_empty() || self.run.seeds.is_empty() {
            return Err(Error::Config("run.variants and run.seeds must not be empty".into()));
        }
        let layers = self.model.resolved_layers();
        let shapes = infer_shapes(&self.model.input_shape, &layers).map_err(|e| Error::Config(format!("model: {e}")))?;
        if shapes.last().map(Vec::len) != Some(1) {
            return Err(Error::Config("model must end in a flat class-score vector".into()));
        }
        let n_params = layers.iter().filter(|l| l.has_params()).count();
        if let Some(&bad) = self.model.dense_layers.iter().find(|&&l| l >= n_params) {
            return Err(Error::Config(format!(
                "dense layer {bad} out of range for {n_params} parameterized layers"
            )));
        }
        if let DataSection::Synthetic { classes, noise, .. } = &self.data {
            if !(2..=15).contains(classes) || !(noise.is_finite() && *noise >= 0.0) {
                return Err(Error::Config("synthetic data needs 2..=15 classes and a finite noise >= 0".into()));
            }
            let outputs = shapes.last().unwrap()[0];
            if outputs < *classes {
                return Err(Error::Config(format!("{classes} classes but the model has {outputs} outputs")));
            }
        }
        self.round_config(self.run.seeds[0]).validate()
    }

    /// Protocol settings of one seed.
    pub fn round_config(&self, seed: u64) -> RoundConfig {
        let f = &self.federation;
        let t = &self.training;
        RoundConfig {
            clients: f.clients,
            clients_per_round: f.clients_per_round,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            rounds: f.rounds,
            adjust_period: f.adjust_period,
            adjust_stop: f.adjust_stop,
            mask_sparsity: t.mask_sparsity,
            activation_sparsity: t.activation_sparsity,
            lambda: t.lambda,
            penalty: t.penalty,
            eta0: t.eta0,
            decay: t.decay,
            alpha: f.alpha,
            min_shard: f.min_shard,
            dense_layers: self.model.dense_layers.clone(),
            value_bits: self.run.value_bits,
            seed,
        }
    }

    /// Train and test sets of one seed. CSV paths are taken relative to
    /// `base` when not absolute.
    pub fn datasets(&self, seed: u64, base: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
        let shape = self.model.input_shape;
        match &self.data {
            DataSection::Synthetic {
                classes,
                train_per_class,
                test_per_class,
                noise,
                train_seed,
                test_seed,
            } => {
                let spec = |per_class, s: u64| BlobSpec {
                    classes: *classes,
                    per_class,
                    shape,
                    noise: *noise,
                    seed: s.wrapping_add(seed),
                };
                Ok((
                    synth_blobs(&spec(*train_per_class, *train_seed))?,
                    synth_blobs(&spec(*test_per_class, *test_seed))?,
                ))
            }
            DataSection::Csv {
                train_path,
                test_path,
                classes,
                scale,
            } => {
                let train = load_csv(&base.join(train_path), shape, *classes, *scale)?;
                let classes = classes.or(Some(train.classes()));
                let test = load_csv(&base.join(test_path), shape, classes, *scale)?;
                Ok((train, test))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_takes_reference_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        let r = c.round_config(0);
        assert_eq!((r.local_epochs, r.rounds, r.adjust_period, r.adjust_stop, r.batch_size), (10, 500, 10, 300, 64));
        assert_eq!((r.alpha, r.mask_sparsity, r.activation_sparsity, r.eta0, r.decay), (0.5, 0.9, 0.9, 1.0, 0.95));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[federation]\nclient = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[extra]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[data]\nsource = \"synthetic\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn serialization_is_a_fixpoint() {
        let mut c = ExperimentConfig::from_toml_str("").unwrap();
        c.run.variants = Variant::ALL.to_vec();
        c.model.gamma = Some(0.5);
        let once = c.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&once).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml_string().unwrap(), once);
    }

    #[test]
    fn broken_model_chain_is_a_config_error() {
        let text = "[model]\ninput_shape = [1, 8, 8]\n";
        assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))));
    }
}
