//! The outer training loop: a classifier phase, then `iterations` rounds of
//! (embedder phase, fresh classifier phase), with a test evaluation after
//! every classifier phase.

mod classifier;
mod config;
mod embedder;

pub use classifier::{embed_bags, fused_reps, head_step, run_classifier_phase, ClassifierPhaseReport};
pub use config::{FineTuneMode, TrainConfig, PAPER_CLASSIFIER_EPOCHS};
pub use embedder::{instance_pool, run_embedder_phase, EmbedderPhaseReport, PooledInstance};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bagdata::{split_dataset, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::milnet::{param_digest, MilModel};
use crate::rng::{stream, Stream, StreamRng};

/// Decision threshold on the positive-class probability.
pub const THRESHOLD: f64 = 0.5;

/// The random streams one run draws from.
pub struct RunRngs {
    pub init: StreamRng,
    pub augment: StreamRng,
    pub shuffle: StreamRng,
    pub noise: StreamRng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            init: stream(seed, Stream::Init),
            augment: stream(seed, Stream::Augment),
            shuffle: stream(seed, Stream::Shuffle),
            noise: stream(seed, Stream::Noise),
        }
    }
}

/// Positive-class probability for every bag.
pub fn bag_scores(model: &MilModel, ds: &Dataset) -> Result<Vec<f64>> {
    if ds.num_classes != 2 {
        return Err(Error::arg(format!(
            "bag metrics are binary, dataset has {} classes",
            ds.num_classes
        )));
    }
    ds.bags
        .par_iter()
        .map(|b| Ok(model.predict(&b.feature_matrix())?[1]))
        .collect()
}

pub fn evaluate_model(model: &MilModel, ds: &Dataset) -> Result<EvalResult> {
    let scores = bag_scores(model, ds)?;
    let labels: Vec<bool> = ds.bags.iter().map(|b| b.is_positive()).collect();
    evaluate(&scores, &labels, THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "lowercase")]
pub enum PhaseReport {
    Classifier(ClassifierPhaseReport),
    Embedder(EmbedderPhaseReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// 0 for the baseline classifier phase, `i` after the `i`-th embedder phase.
    pub iteration: usize,
    #[serde(flatten)]
    pub metrics: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: TrainConfig,
    pub train_bags: usize,
    pub test_bags: usize,
    pub phases: Vec<PhaseReport>,
    pub evaluations: Vec<EvalPoint>,
    /// SHA-256 over all final parameter values.
    pub final_digest: String,
    /// Only filled on request; it would break byte-identical reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl RunReport {
    pub fn baseline(&self) -> Option<&EvalPoint> {
        self.evaluations.first()
    }

    pub fn last(&self) -> Option<&EvalPoint> {
        self.evaluations.last()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Full run on pre-split data. Returns the final model and the report.
pub fn run_icmil(train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<(MilModel, RunReport)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if test.d_raw != train.d_raw || test.num_classes != train.num_classes {
        return Err(Error::arg("train and test sets disagree on dimensions"));
    }
    let mut rngs = RunRngs::new(config.seed);
    let mut model = MilModel::new(
        train.d_raw,
        train.num_classes,
        config.backbone,
        &config.model_config(),
        &mut rngs.init,
    );

    let mut phases = Vec::new();
    let mut evaluations = Vec::new();
    phases.push(PhaseReport::Classifier(run_classifier_phase(train, &mut model, config, &mut rngs, 0)?));
    evaluations.push(EvalPoint {
        iteration: 0,
        metrics: evaluate_model(&model, test)?,
    });

    for it in 1..=config.iterations {
        phases.push(PhaseReport::Embedder(run_embedder_phase(train, &mut model, config, &mut rngs, it)?));
        if !config.warm_start {
            let (aggregator, classifier) = MilModel::fresh_head(
                config.backbone,
                config.rep_dim,
                config.attention_dim,
                train.num_classes,
                &mut rngs.init,
            );
            model.aggregator = aggregator;
            model.classifier = classifier;
        }
        phases.push(PhaseReport::Classifier(run_classifier_phase(train, &mut model, config, &mut rngs, it)?));
        evaluations.push(EvalPoint {
            iteration: it,
            metrics: evaluate_model(&model, test)?,
        });
    }

    let report = RunReport {
        seed: config.seed,
        config: config.clone(),
        train_bags: train.len(),
        test_bags: test.len(),
        phases,
        evaluations,
        final_digest: param_digest(model.params()),
        wall_clock_seconds: None,
    };
    Ok((model, report))
}

/// Splits `ds` by the configured fractions, then runs.
pub fn run_icmil_on(ds: &Dataset, config: &TrainConfig) -> Result<(MilModel, RunReport)> {
    let (train, _, test) = split_dataset(ds, config.split, config.seed)?;
    run_icmil(&train, &test, config)
}
