use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, LabelMode};
use crate::distill::NoiseConfig;
use crate::error::{Error, Result};
use crate::gradcore::Activation;
use crate::milnet::{AggregatorKind, ModelConfig};

/// Classifier-phase epochs under `paper_scale`.
pub const PAPER_CLASSIFIER_EPOCHS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTuneMode {
    /// Cross-entropy on the teacher's hard labels, clean inputs.
    Naive,
    /// Teacher-student KL with noisy student inputs, every instance weight 1.
    Vanilla,
    /// As `Vanilla`, weighted by the attention-derived confidence.
    Confidence,
}

impl FineTuneMode {
    pub fn name(self) -> &'static str {
        match self {
            FineTuneMode::Naive => "naive",
            FineTuneMode::Vanilla => "vanilla",
            FineTuneMode::Confidence => "confidence",
        }
    }
}

impl FromStr for FineTuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "vanilla" => Ok(Self::Vanilla),
            "confidence" => Ok(Self::Confidence),
            other => Err(Error::Config(format!(
                "unknown fine-tune mode `{other}` (expected naive, vanilla or confidence)"
            ))),
        }
    }
}

/// Everything that determines a training run. Serialized with flat keys; a
/// config file may set any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub backbone: AggregatorKind,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub embedder_lr: f64,
    pub embedder_batch: usize,
    /// Passes over all training instances per embedder phase.
    pub embedder_passes: usize,
    pub iterations: usize,
    pub mode: FineTuneMode,

    pub augmentation: bool,
    /// Augmented bags replace the originals instead of adding to them.
    pub augment_replace: bool,
    pub n: usize,
    pub alpha_beta: f64,
    pub gamma: f64,
    pub label_mode: LabelMode,

    pub beta: f64,
    pub alpha_w: f64,
    pub noise_scale: f64,
    pub dropout: f64,

    pub hidden: Vec<usize>,
    pub rep_dim: usize,
    pub attention_dim: usize,
    pub activation: Activation,

    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Keep the previous aggregator and classifier after an embedder phase
    /// instead of drawing fresh ones.
    pub warm_start: bool,
    /// Use the full 200-epoch classifier phase.
    pub paper_scale: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let augment = AugmentConfig::default();
        let noise = NoiseConfig::default();
        Self {
            backbone: AggregatorKind::GatedAttention,
            classifier_epochs: 50,
            classifier_lr: 2e-4,
            embedder_lr: 1e-5,
            embedder_batch: 100,
            embedder_passes: 3,
            iterations: 1,
            mode: FineTuneMode::Confidence,
            augmentation: true,
            augment_replace: false,
            n: augment.n,
            alpha_beta: augment.alpha_beta,
            gamma: augment.gamma,
            label_mode: augment.label_mode,
            beta: 6.0,
            alpha_w: 1.0,
            noise_scale: noise.scale,
            dropout: noise.dropout,
            hidden: model.hidden,
            rep_dim: model.rep_dim,
            attention_dim: model.attention_dim,
            activation: model.activation,
            split: [2.0 / 3.0, 0.0, 1.0 / 3.0],
            warm_start: false,
            paper_scale: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Parses a JSON config; unknown keys are rejected by name.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.classifier_epochs == 0 {
            return bad("classifier_epochs must be at least 1".into());
        }
        for (name, lr) in [("classifier_lr", self.classifier_lr), ("embedder_lr", self.embedder_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.embedder_batch == 0 {
            return bad("embedder_batch must be at least 1".into());
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.alpha_w >= 0.0 && self.alpha_w.is_finite()) {
            return bad(format!("alpha_w must be non-negative, got {}", self.alpha_w));
        }
        if self.rep_dim == 0 || self.attention_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be non-negative and sum to 1", self.split));
        }
        let wrap = |e: Error| match e {
            Error::Argument(m) => Error::Config(m),
            other => other,
        };
        self.augment_config().validate().map_err(wrap)?;
        self.noise_config().validate().map_err(wrap)?;
        Ok(())
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            n: self.n,
            alpha_beta: self.alpha_beta,
            gamma: self.gamma,
            label_mode: self.label_mode,
        }
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            scale: self.noise_scale,
            dropout: self.dropout,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden.clone(),
            rep_dim: self.rep_dim,
            attention_dim: self.attention_dim,
            activation: self.activation,
        }
    }

    pub fn effective_classifier_epochs(&self) -> usize {
        if self.paper_scale {
            PAPER_CLASSIFIER_EPOCHS
        } else {
            self.classifier_epochs
        }
    }
}
