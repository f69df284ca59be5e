//! Datasets, the training loop, checkpoints and evaluation passes.

mod dataset;
mod eval;
mod toy;
mod trainer;

pub use dataset::{prepare_dataset, Dataset, ManifestRow, PrepareSummary, Shape, Split, DATASET_POINTS};
pub use eval::{ablate, evaluate, robustness, AblationRow, RobustnessRow, ShapeEval};
pub use toy::{generate_toy_dataset, toy_shape, ToyKind};
pub use trainer::{EpochStats, TrainLog, Trainer, LOG_HEADER};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, SampleSizes, SamplingMethod};
use crate::metrics::{AuctionParams, MetricsError};
use crate::models::{DecoderKind, EmdMode, ModelConfig, ModelError};
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("non-finite loss in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Network width preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    /// Full size: 2048 input / output points, 1024 predicted.
    Full,
    /// A few channels and 16 points; for smoke tests.
    Tiny,
}

impl FromStr for ModelSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(ModelSize::Full),
            "tiny" => Ok(ModelSize::Tiny),
            other => Err(format!("unknown model size {other:?} (expected full or tiny)")),
        }
    }
}

impl fmt::Display for ModelSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelSize::Full => "full",
            ModelSize::Tiny => "tiny",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sphere-split radius.
    pub radius: f64,
    pub decoder: DecoderKind,
    pub mu: f64,
    pub seed: u64,
    #[serde(with = "method_serde")]
    pub sampling_method: SamplingMethod,
    /// Checkpoint interval in epochs.
    pub checkpoint_every: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip: f64,
    /// Final ε of the auction used for the training loss.
    pub emd_eps: f64,
    pub model: ModelSize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            batch_size: 64,
            radius: 0.35,
            decoder: DecoderKind::Mbd,
            mu: 1.0,
            seed: 0,
            sampling_method: SamplingMethod::Ifps,
            checkpoint_every: 10,
            clip: 0.0,
            emd_eps: 1e-3,
            model: ModelSize::Full,
        }
    }
}

mod method_serde {
    use super::SamplingMethod;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &SamplingMethod, s: S) -> Result<S::Ok, S::Error> {
        match m {
            SamplingMethod::Ifps => s.serialize_str("ifps"),
            SamplingMethod::Mds { sigma } => s.serialize_str(&format!("mds:{sigma}")),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SamplingMethod, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl TrainConfig {
    /// Every key accepted by [`TrainConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "lr",
        "epochs",
        "batch_size",
        "radius",
        "decoder",
        "mu",
        "seed",
        "sampling_method",
        "checkpoint_every",
        "clip",
        "emd_eps",
        "model",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value.trim().parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "radius" => self.radius = num(key, value)?,
            "decoder" => self.decoder = value.trim().parse().map_err(|e: ModelError| format!("decoder: {e}"))?,
            "mu" => self.mu = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "sampling_method" => {
                self.sampling_method = value.parse().map_err(|e: GeometryError| format!("sampling_method: {e}"))?
            }
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "emd_eps" => self.emd_eps = num(key, value)?,
            "model" => self.model = value.trim().parse().map_err(|e| format!("model: {e}"))?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key with its textual value, in [`TrainConfig::KEYS`] order;
    /// feeding the pairs back through [`TrainConfig::set`] restores `self`.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let method = match self.sampling_method {
            SamplingMethod::Ifps => "ifps".to_string(),
            SamplingMethod::Mds { sigma } => format!("mds:{sigma}"),
        };
        let values = [
            self.lr.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.radius.to_string(),
            self.decoder.to_string(),
            self.mu.to_string(),
            self.seed.to_string(),
            method,
            self.checkpoint_every.to_string(),
            self.clip.to_string(),
            self.emd_eps.to_string(),
            self.model.to_string(),
        ];
        Self::KEYS.iter().copied().zip(values).collect()
    }

    /// All problems at once.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr.is_finite() && self.lr > 0.0) {
            out.push(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [("epochs", self.epochs), ("batch_size", self.batch_size), ("checkpoint_every", self.checkpoint_every)] {
            if v == 0 {
                out.push(format!("{name} must be at least 1"));
            }
        }
        if !(self.radius > 0.0 && self.radius < 1.0) {
            out.push(format!("radius must lie in (0, 1), got {}", self.radius));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            out.push(format!("mu must be non-negative, got {}", self.mu));
        }
        if !(self.clip.is_finite() && self.clip >= 0.0) {
            out.push(format!("clip must be non-negative, got {}", self.clip));
        }
        if !(self.emd_eps.is_finite() && self.emd_eps > 0.0) {
            out.push(format!("emd_eps must be positive, got {}", self.emd_eps));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(p))
        }
    }

    /// Architecture for this configuration.
    pub fn model_config(&self) -> ModelConfig {
        let mut c = match self.model {
            ModelSize::Full => ModelConfig::default(),
            ModelSize::Tiny => ModelConfig::tiny(self.decoder),
        };
        c.decoder = self.decoder;
        c.mu = self.mu;
        c
    }

    /// Loss used for training.
    pub fn emd_mode(&self) -> EmdMode {
        EmdMode::Approx(AuctionParams { eps_end: Some(self.emd_eps), ..AuctionParams::default() })
    }
}

/// Point counts of the samples cut for a model: the partial input and the
/// complete target have the output size, the missing part the decoder size.
pub fn sample_sizes(config: &ModelConfig) -> SampleSizes {
    SampleSizes { complete: config.output_points, partial: config.output_points, missing: config.missing_points }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_training_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.epochs, c.batch_size, c.radius), (1e-3, 200, 64, 0.35));
        assert!(c.validate().is_ok());
        assert_eq!(sample_sizes(&c.model_config()), SampleSizes::default());
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = TrainConfig::default();
        let values = ["0.01", "3", "4", "0.3", "mlp", "0.5", "9", "mds:0.1", "2", "1.5", "0.01", "tiny"];
        for (k, v) in TrainConfig::KEYS.iter().zip(values) {
            c.set(k, v).unwrap();
        }
        assert_eq!(c.decoder, DecoderKind::Mlp);
        assert_eq!(c.sampling_method, SamplingMethod::Mds { sigma: 0.1 });
        assert_eq!(c.model, ModelSize::Tiny);
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("epochs", "x").is_err());
    }

    #[test]
    fn pairs_round_trip_through_set() {
        let c = TrainConfig {
            lr: 3e-4,
            decoder: DecoderKind::Mlp,
            sampling_method: SamplingMethod::Mds { sigma: 0.07 },
            model: ModelSize::Tiny,
            ..TrainConfig::default()
        };
        let mut back = TrainConfig::default();
        for (k, v) in c.to_pairs() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, c);
    }

    #[test]
    fn all_problems_are_listed() {
        let c = TrainConfig { lr: 0.0, epochs: 0, radius: 1.5, ..TrainConfig::default() };
        assert_eq!(c.problems().len(), 3);
        match c.validate() {
            Err(TrainError::Config(p)) => assert_eq!(p.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_survives_json() {
        let c = TrainConfig { sampling_method: SamplingMethod::Mds { sigma: 0.07 }, ..TrainConfig::default() };
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
