use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FineTuneMode, RunRngs, TrainConfig};
use crate::bagdata::Dataset;
use crate::distill::{
    distill_step, naive_pseudolabel_step, noisy_batch, normalize_attention, ConvertingLayer,
    DistillBatch, StudentBranch, TeacherBranch,
};
use crate::error::{Error, Result};
use crate::gradcore::{Adam, Tensor2};
use crate::milnet::{param_digest, MilModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderPhaseReport {
    pub iteration: usize,
    pub mode: FineTuneMode,
    /// Mean batch loss per pass over the training instances.
    pub pass_losses: Vec<f64>,
    pub steps: usize,
    pub instances: usize,
    /// Mean confidence weight over the instance pool.
    pub mean_confidence: f64,
    pub teacher_digest: String,
}

/// Teacher view of one training instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledInstance {
    pub bag: usize,
    pub instance: usize,
    pub raw_attention: f64,
    pub normalized_attention: f64,
    pub confidence: f64,
}

/// Scores every instance with the teacher aggregator, normalizing attention
/// within each bag.
pub fn instance_pool(teacher: &TeacherBranch, ds: &Dataset, beta: f64) -> Result<Vec<PooledInstance>> {
    let layer = ConvertingLayer { beta };
    let per_bag: Vec<Vec<PooledInstance>> = ds
        .bags
        .par_iter()
        .enumerate()
        .map(|(b, bag)| {
            let raw = teacher.bag_attention(&bag.feature_matrix())?;
            let norm = normalize_attention(&raw);
            let conf = layer.bag_confidence(&raw)?;
            Ok((0..bag.len())
                .map(|k| PooledInstance {
                    bag: b,
                    instance: k,
                    raw_attention: raw[k],
                    normalized_attention: norm[k],
                    confidence: conf[k],
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_bag.into_iter().flatten().collect())
}

fn gather(ds: &Dataset, pool: &[PooledInstance], idx: &[usize]) -> Result<Tensor2> {
    let rows: Vec<&[f64]> = idx
        .iter()
        .map(|&i| ds.bags[pool[i].bag].instances[pool[i].instance].features.as_slice())
        .collect();
    Tensor2::from_rows(&rows)
}

/// Fine-tunes the model's embedder against a frozen copy of the current
/// model. The aggregator and classifier are left as they were; the student's
/// classifier is discarded.
pub fn run_embedder_phase(
    train: &Dataset,
    model: &mut MilModel,
    config: &TrainConfig,
    rngs: &mut RunRngs,
    iteration: usize,
) -> Result<EmbedderPhaseReport> {
    let teacher = TeacherBranch::from_model(model);
    let teacher_digest = teacher.digest();
    let head_digest = param_digest(model.aggregator.params().into_iter().chain(model.classifier.params()));

    let pool = instance_pool(&teacher, train, config.beta)?;
    let mean_confidence = if pool.is_empty() {
        0.0
    } else {
        pool.iter().map(|p| p.confidence).sum::<f64>() / pool.len() as f64
    };
    let mut student = StudentBranch::from_teacher(&teacher);
    let mut opt = Adam::new(config.embedder_lr);
    let noise = config.noise_config();

    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut pass_losses = Vec::with_capacity(config.embedder_passes);
    let mut steps = 0;
    for _ in 0..config.embedder_passes {
        order.shuffle(&mut rngs.shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.embedder_batch) {
            let x = gather(train, &pool, chunk)?;
            let loss = match config.mode {
                FineTuneMode::Naive => naive_pseudolabel_step(&teacher, &mut student, &x, &mut opt)?,
                FineTuneMode::Vanilla | FineTuneMode::Confidence => {
                    let noised = noisy_batch(&x, &noise, &mut rngs.noise);
                    let attention = chunk.iter().map(|&i| pool[i].normalized_attention).collect();
                    let confidence = match config.mode {
                        FineTuneMode::Confidence => chunk.iter().map(|&i| pool[i].confidence).collect(),
                        _ => vec![1.0; chunk.len()],
                    };
                    let batch = DistillBatch::new(x, noised, attention, confidence)?;
                    distill_step(&teacher, &mut student, &batch, config.alpha_w, &mut opt)?
                }
            };
            total += loss;
            batches += 1;
        }
        steps += batches;
        pass_losses.push(if batches == 0 { 0.0 } else { total / batches as f64 });
    }

    if teacher.digest() != teacher_digest {
        return Err(Error::FrozenViolation("embedder phase (teacher)".into()));
    }
    model.embedder = student.embedder;
    let head_after = param_digest(model.aggregator.params().into_iter().chain(model.classifier.params()));
    if head_after != head_digest {
        return Err(Error::FrozenViolation("embedder phase (aggregator/classifier)".into()));
    }
    log::info!(
        "embedder phase {iteration} ({}): {steps} steps over {} instances, mean confidence {mean_confidence:.4}",
        config.mode.name(),
        pool.len()
    );
    Ok(EmbedderPhaseReport {
        iteration,
        mode: config.mode,
        pass_losses,
        steps,
        instances: pool.len(),
        mean_confidence,
        teacher_digest,
    })
}
