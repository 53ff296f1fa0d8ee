//! Embedder fine-tuning by teacher-student distillation.
//!
//! The teacher is a frozen copy of the trained embedder and bag classifier,
//! applied to single instances. The student (a learnable copy of both) sees a
//! noised version of each instance and is pulled toward the teacher's
//! prediction by the consistency loss `L_c = KL(t(x) ‖ s(x'))`. The weight
//! similarity loss `L_w = KL(f(h) ‖ f'(h))` keeps the student classifier near
//! the teacher classifier on the teacher representation `h`. Each instance's
//! loss is scaled by a confidence weight `|2a − 1|^β` computed from the
//! teacher aggregator's min-max normalized attention within its bag.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{
    cross_entropy_unchecked, kl_unchecked, softmax_nonempty, softmax_rows, Adam, Param, Tensor2,
};
use crate::milnet::{param_digest, Aggregator, BagClassifier, Embedder, MilModel};

/// Frozen guidance branch. Exposes no mutable access to its parameters.
#[derive(Debug, Clone)]
pub struct TeacherBranch {
    embedder: Embedder,
    aggregator: Aggregator,
    classifier: BagClassifier,
}

impl TeacherBranch {
    pub fn from_model(model: &MilModel) -> Self {
        Self {
            embedder: model.embedder.clone(),
            aggregator: model.aggregator.clone(),
            classifier: model.classifier.clone(),
        }
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    pub fn classifier(&self) -> &BagClassifier {
        &self.classifier
    }

    pub fn reps(&self, x: &Tensor2) -> Result<Tensor2> {
        self.embedder.embed(x)
    }

    /// Instance-level class distributions, one row per instance.
    pub fn instance_probs(&self, x: &Tensor2) -> Result<Tensor2> {
        Ok(softmax_rows(&self.classifier.logits(&self.reps(x)?)?))
    }

    /// Raw attention of the teacher aggregator over one bag.
    pub fn bag_attention(&self, bag_features: &Tensor2) -> Result<Vec<f64>> {
        let reps = self.reps(bag_features)?;
        Ok(self.aggregator.aggregate(&reps, &self.classifier)?.attention)
    }

    pub fn digest(&self) -> String {
        let mut p = self.embedder.params();
        p.extend(self.aggregator.params());
        p.extend(self.classifier.params());
        param_digest(p)
    }
}

/// Learnable copy of embedder and classifier.
#[derive(Debug, Clone)]
pub struct StudentBranch {
    pub embedder: Embedder,
    pub classifier: BagClassifier,
}

impl StudentBranch {
    pub fn from_teacher(teacher: &TeacherBranch) -> Self {
        let mut s = Self {
            embedder: teacher.embedder.clone(),
            classifier: teacher.classifier.clone(),
        };
        s.zero_grad();
        s
    }

    pub fn instance_probs(&self, x: &Tensor2) -> Result<Tensor2> {
        Ok(softmax_rows(&self.classifier.logits(&self.embedder.embed(x)?)?))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.embedder.params_mut();
        p.extend(self.classifier.params_mut());
        p
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Min-max normalization of one bag's attention. A constant vector maps to
/// all ones, so its confidence weights are uniformly 1.
pub fn normalize_attention(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![1.0; scores.len()];
    }
    let span = max - min;
    scores.iter().map(|&a| (a - min) / span).collect()
}

/// `|2a − 1|^β`: 1 at both ends of `[0, 1]`, 0 in the middle.
pub fn convert_confidence(a_norm: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a_norm) {
        return Err(Error::arg(format!("normalized attention {a_norm} outside [0, 1]")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::arg(format!("beta must be positive, got {beta}")));
    }
    Ok((2.0 * a_norm - 1.0).abs().powf(beta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvertingLayer {
    pub beta: f64,
}

impl Default for ConvertingLayer {
    fn default() -> Self {
        Self { beta: 6.0 }
    }
}

impl ConvertingLayer {
    pub fn convert(&self, a_norm: f64) -> Result<f64> {
        convert_confidence(a_norm, self.beta)
    }

    /// Raw bag attention to per-instance confidence weights.
    pub fn bag_confidence(&self, attention: &[f64]) -> Result<Vec<f64>> {
        normalize_attention(attention)
            .into_iter()
            .map(|a| self.convert(a))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Standard deviation of the additive Gaussian noise.
    pub scale: f64,
    /// Probability of zeroing each feature.
    pub dropout: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            scale: 0.1,
            dropout: 0.1,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::arg("noise scale must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::arg("dropout must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Gaussian noise followed by feature dropout. Every feature consumes one
/// normal and one uniform draw regardless of the settings.
pub fn noisy_augment<R: Rng + ?Sized>(x: &[f64], noise: &NoiseConfig, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            let u: f64 = rng.random();
            if u < noise.dropout {
                0.0
            } else {
                v + noise.scale * z
            }
        })
        .collect()
}

pub fn noisy_batch<R: Rng + ?Sized>(x: &Tensor2, noise: &NoiseConfig, rng: &mut R) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let noised = noisy_augment(x.row(r), noise, rng);
        out.row_mut(r).copy_from_slice(&noised);
    }
    out
}

/// `KL(teacher(x) ‖ student(x'))` for one instance.
pub fn consistency_loss(
    teacher: &TeacherBranch,
    student: &StudentBranch,
    x: &[f64],
    x_noised: &[f64],
) -> Result<f64> {
    if x.len() != x_noised.len() {
        return Err(Error::arg("clean and noised instances differ in length"));
    }
    let p = teacher.instance_probs(&Tensor2::row_vector(x))?;
    let q = student.instance_probs(&Tensor2::row_vector(x_noised))?;
    Ok(kl_unchecked(p.data(), q.data()))
}

/// `KL(f(h) ‖ f'(h))` on a teacher representation `h`.
pub fn weight_similarity_loss(
    teacher: &BagClassifier,
    student: &BagClassifier,
    teacher_rep: &[f64],
) -> Result<f64> {
    let h = Tensor2::row_vector(teacher_rep);
    let p = softmax_nonempty(teacher.logits(&h)?.data());
    let q = softmax_nonempty(student.logits(&h)?.data());
    Ok(kl_unchecked(&p, &q))
}

/// Instances for one student update.
#[derive(Debug, Clone)]
pub struct DistillBatch {
    pub inputs: Tensor2,
    pub noised: Tensor2,
    /// Min-max normalized teacher attention of each instance within its bag.
    pub attention: Vec<f64>,
    pub confidence: Vec<f64>,
}

impl DistillBatch {
    pub fn new(inputs: Tensor2, noised: Tensor2, attention: Vec<f64>, confidence: Vec<f64>) -> Result<Self> {
        if inputs.shape() != noised.shape() {
            return Err(Error::Dimension {
                op: "distill_batch",
                left: inputs.shape(),
                right: noised.shape(),
            });
        }
        if attention.len() != inputs.rows() || confidence.len() != inputs.rows() {
            return Err(Error::arg("one attention and confidence value per instance required"));
        }
        if attention.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::arg("normalized attention must lie in [0, 1]"));
        }
        Ok(Self {
            inputs,
            noised,
            attention,
            confidence,
        })
    }

    /// Every instance weighted 1, the unweighted teacher-student objective.
    pub fn unweighted(inputs: Tensor2, noised: Tensor2) -> Result<Self> {
        let n = inputs.rows();
        Self::new(inputs, noised, vec![1.0; n], vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Batch objective `mean_i σ_i (L_c,i + α_w L_w,i)`; accumulates student
/// gradients and returns the loss.
pub fn distill_loss_and_grad(
    teacher: &TeacherBranch,
    student: &mut StudentBranch,
    batch: &DistillBatch,
    alpha_w: f64,
) -> Result<f64> {
    let n = batch.len();
    if n == 0 {
        return Ok(0.0);
    }
    let teacher_reps = teacher.reps(&batch.inputs)?;
    let teacher_probs = softmax_rows(&teacher.classifier.logits(&teacher_reps)?);

    let student_trace = student.embedder.embed_traced(&batch.noised)?;
    let student_reps = student_trace.output();
    let student_probs = softmax_rows(&student.classifier.logits(student_reps)?);
    let tethered_probs = softmax_rows(&student.classifier.logits(&teacher_reps)?);

    let c = teacher_probs.cols();
    let mut g_noised = Tensor2::zeros(n, c);
    let mut g_tether = Tensor2::zeros(n, c);
    let mut total = 0.0;
    for i in 0..n {
        let p = teacher_probs.row(i);
        let q = student_probs.row(i);
        let r = tethered_probs.row(i);
        let w = batch.confidence[i];
        total += w * (kl_unchecked(p, q) + alpha_w * kl_unchecked(p, r));
        let scale = w / n as f64;
        for k in 0..c {
            // d KL(p ‖ softmax(z)) / dz = softmax(z) − p
            g_noised.set(i, k, scale * (q[k] - p[k]));
            g_tether.set(i, k, scale * alpha_w * (r[k] - p[k]));
        }
    }

    let clf = &mut student.classifier.linear;
    let d_reps = clf.backward(student_reps, &g_noised)?;
    crate::gradcore::accumulate_linear_grads(&teacher_reps, &mut clf.weight, &mut clf.bias, &g_tether)?;
    student.embedder.backward(&student_trace, &d_reps)?;
    Ok(total / n as f64)
}

/// One confidence-weighted distillation update of the student. The teacher is
/// only read.
pub fn distill_step(
    teacher: &TeacherBranch,
    student: &mut StudentBranch,
    batch: &DistillBatch,
    alpha_w: f64,
    optimizer: &mut Adam,
) -> Result<f64> {
    student.zero_grad();
    let loss = distill_loss_and_grad(teacher, student, batch, alpha_w)?;
    optimizer.step(&mut student.params_mut())?;
    Ok(loss)
}

/// Hard pseudo-label per instance: argmax of the teacher, ties to the lower
/// class index.
pub fn pseudo_labels(teacher: &TeacherBranch, x: &Tensor2) -> Result<Vec<usize>> {
    let probs = teacher.instance_probs(x)?;
    Ok(probs.iter_rows().map(crate::bagdata::argmax).collect())
}

/// Cross-entropy of the student's clean-input prediction against the teacher's
/// hard pseudo-labels; accumulates gradients and returns the mean loss.
pub fn naive_loss_and_grad(
    teacher: &TeacherBranch,
    student: &mut StudentBranch,
    x: &Tensor2,
) -> Result<f64> {
    let n = x.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let labels = pseudo_labels(teacher, x)?;
    let trace = student.embedder.embed_traced(x)?;
    let probs = softmax_rows(&student.classifier.logits(trace.output())?);
    let c = probs.cols();
    let mut g = Tensor2::zeros(n, c);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let q = probs.row(i);
        let target = crate::bagdata::one_hot(label, c);
        total += cross_entropy_unchecked(q, &target);
        for k in 0..c {
            g.set(i, k, (q[k] - target[k]) / n as f64);
        }
    }
    let d_reps = student.classifier.linear.backward(trace.output(), &g)?;
    student.embedder.backward(&trace, &d_reps)?;
    Ok(total / n as f64)
}

pub fn naive_pseudolabel_step(
    teacher: &TeacherBranch,
    student: &mut StudentBranch,
    x: &Tensor2,
    optimizer: &mut Adam,
) -> Result<f64> {
    student.zero_grad();
    let loss = naive_loss_and_grad(teacher, student, x)?;
    optimizer.step(&mut student.params_mut())?;
    Ok(loss)
}
