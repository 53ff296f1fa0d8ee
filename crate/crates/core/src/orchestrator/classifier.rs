use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{RunRngs, TrainConfig};
use crate::augment::{plan_pair, MixPlan};
use crate::bagdata::Dataset;
use crate::error::{Error, Result};
use crate::gradcore::{cross_entropy_unchecked, softmax_cross_entropy_grad, Adam, Tensor2};
use crate::milnet::{head_backward, head_forward, param_digest, MilModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPhaseReport {
    pub iteration: usize,
    /// Mean training cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub embedder_digest: String,
}

/// One training sample of an epoch, already embedded.
enum Sample {
    Original(usize),
    Augmented { reps: Tensor2, label: Vec<f64> },
}

/// Instance representations of every bag under the current embedder.
pub fn embed_bags(model: &MilModel, ds: &Dataset) -> Result<Vec<Tensor2>> {
    ds.bags
        .par_iter()
        .map(|b| model.embedder.embed(&b.feature_matrix()))
        .collect()
}

/// Rows of an augmentation plan gathered from pre-embedded bags. The embedder
/// acts row by row, so this equals embedding the fused bag.
pub fn fused_reps(plan: &MixPlan, reps_a: &Tensor2, reps_b: &Tensor2) -> Result<Tensor2> {
    let b = reps_b.select_rows(&plan.kept_b);
    if plan.kept_a.is_empty() {
        return Ok(b);
    }
    reps_a.select_rows(&plan.kept_a).vstack(&b)
}

/// Cross-entropy step on one embedded bag. Only the aggregator and classifier
/// move.
pub fn head_step(model: &mut MilModel, reps: &Tensor2, label: &[f64], opt: &mut Adam) -> Result<f64> {
    let trace = head_forward(&model.aggregator, &model.classifier, reps)?;
    let loss = cross_entropy_unchecked(&trace.probs, label);
    let dlogits = softmax_cross_entropy_grad(&trace.probs, label);
    head_backward(&mut model.aggregator, &mut model.classifier, reps, &trace, &dlogits, false)?;
    opt.step(&mut model.head_params_mut())?;
    Ok(loss)
}

/// Augmented samples for one epoch: bag `i` is the B side of its own sample,
/// paired with a uniformly drawn other bag as A.
fn augmented_samples(
    ds: &Dataset,
    reps: &[Tensor2],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Sample>> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::arg("augmentation needs at least two training bags"));
    }
    let aug = config.augment_config();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (&ds.bags[j], &ds.bags[i]);
        let plan = plan_pair(a.into(), b.into(), &aug, rng)?;
        let fused = fused_reps(&plan, &reps[j], &reps[i])?;
        out.push(Sample::Augmented {
            reps: fused,
            label: plan.label,
        });
    }
    Ok(out)
}

/// Trains the model's aggregator and classifier with its embedder frozen.
pub fn run_classifier_phase(
    train: &Dataset,
    model: &mut MilModel,
    config: &TrainConfig,
    rngs: &mut RunRngs,
    iteration: usize,
) -> Result<ClassifierPhaseReport> {
    if train.is_empty() {
        return Err(Error::arg("classifier phase needs a non-empty training set"));
    }
    let embedder_digest = param_digest(model.embedder.params());
    let reps = embed_bags(model, train)?;
    let mut opt = Adam::new(config.classifier_lr);
    for p in model.head_params_mut() {
        p.zero_grad();
    }

    let epochs = config.effective_classifier_epochs();
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut steps = 0;
    for _ in 0..epochs {
        let mut samples = Vec::new();
        if !(config.augmentation && config.augment_replace) {
            samples.extend((0..train.len()).map(Sample::Original));
        }
        if config.augmentation {
            samples.extend(augmented_samples(train, &reps, config, &mut rngs.augment)?);
        }
        samples.shuffle(&mut rngs.shuffle);

        let mut total = 0.0;
        for sample in &samples {
            total += match sample {
                Sample::Original(i) => head_step(model, &reps[*i], &train.bags[*i].label, &mut opt)?,
                Sample::Augmented { reps, label } => head_step(model, reps, label, &mut opt)?,
            };
        }
        steps += samples.len();
        epoch_losses.push(total / samples.len() as f64);
    }

    if param_digest(model.embedder.params()) != embedder_digest {
        return Err(Error::FrozenViolation("classifier phase (embedder)".into()));
    }
    log::info!(
        "classifier phase {iteration}: {epochs} epochs, final loss {:.4}",
        epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(ClassifierPhaseReport {
        iteration,
        epoch_losses,
        steps,
        embedder_digest,
    })
}
