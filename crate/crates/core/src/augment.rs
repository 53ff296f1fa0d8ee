//! Bag-level augmentation: pseudo-bag masking plus mix-up of two bags.
//!
//! Both bags are dealt into `n` pseudo-bags. With `λ ~ Beta(α, α)`, `⌊λn⌋`
//! pseudo-bags of A and `⌈(1−λ)n⌉` of B are masked out, and the survivors are
//! fused into one bag of exactly `n` pseudo-bags. With probability `γ` the
//! masked B alone is returned under B's label instead.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::bagdata::{partition_indices, Bag, Instance, PseudoBagPartition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// `λ·y_A + (1−λ)·y_B`.
    PaperLiteral,
    /// Each source weighted by the fraction of its pseudo-bags that survived.
    KeptFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Pseudo-bags per bag.
    pub n: usize,
    /// Beta distribution parameter for `λ`.
    pub alpha_beta: f64,
    /// Probability of returning the masked B alone.
    pub gamma: f64,
    pub label_mode: LabelMode,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            n: 4,
            alpha_beta: 1.0,
            gamma: 0.5,
            label_mode: LabelMode::PaperLiteral,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::arg("pseudo-bag count n must be at least 1"));
        }
        if !(self.alpha_beta > 0.0 && self.alpha_beta.is_finite()) {
            return Err(Error::arg(format!(
                "Beta parameter must be positive, got {}",
                self.alpha_beta
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::arg(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Draws `λ ~ Beta(α, α)`, strictly inside `(0, 1)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::arg(format!("Beta parameter must be positive, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::arg(e.to_string()))?;
    loop {
        let lambda: f64 = beta.sample(rng);
        // Tiny α can round a draw onto an endpoint.
        if lambda > 0.0 && lambda < 1.0 {
            return Ok(lambda);
        }
    }
}

/// The parts of a bag the augmentation needs: identity, size and label.
#[derive(Debug, Clone, Copy)]
pub struct BagRef<'a> {
    pub id: &'a str,
    pub len: usize,
    pub label: &'a [f64],
}

impl<'a> From<&'a Bag> for BagRef<'a> {
    fn from(bag: &'a Bag) -> Self {
        Self {
            id: &bag.id,
            len: bag.len(),
            label: &bag.label,
        }
    }
}

/// Which instances of which source make up an augmented bag.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    /// `None` for the single-bag branch.
    pub source_a: Option<String>,
    pub source_b: String,
    pub lambda: f64,
    /// Per pseudo-bag of A: kept (`true`) or masked.
    pub keep_a: Vec<bool>,
    pub keep_b: Vec<bool>,
    /// Surviving instance indices, ascending.
    pub kept_a: Vec<usize>,
    pub kept_b: Vec<usize>,
    pub label: Vec<f64>,
    /// Set when masking would have left no instances and B was kept whole.
    pub fell_back_to_b: bool,
}

impl MixPlan {
    pub fn is_fused(&self) -> bool {
        self.source_a.is_some()
    }

    pub fn kept_groups(&self) -> usize {
        self.keep_a.iter().chain(&self.keep_b).filter(|&&k| k).count()
    }

    pub fn instance_count(&self) -> usize {
        self.kept_a.len() + self.kept_b.len()
    }
}

/// Keeps all but `masked` randomly chosen groups.
fn mask_groups<R: Rng + ?Sized>(n: usize, masked: usize, rng: &mut R) -> Vec<bool> {
    let mut keep = vec![true; n];
    for i in sample(rng, n, masked.min(n)).iter() {
        keep[i] = false;
    }
    keep
}

fn kept_indices(partition: &PseudoBagPartition, keep: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = partition
        .groups
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .flat_map(|(g, _)| g.iter().copied())
        .collect();
    // Original order, so an unmasked bag is reproduced exactly.
    idx.sort_unstable();
    idx
}

fn mix_labels(wa: f64, ya: &[f64], wb: f64, yb: &[f64]) -> Vec<f64> {
    ya.iter().zip(yb).map(|(a, b)| wa * a + wb * b).collect()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::arg(format!("lambda must be in [0, 1], got {lambda}")));
    }
    Ok(())
}

fn whole_b(b: BagRef<'_>, n: usize, lambda: f64, source_a: Option<String>) -> MixPlan {
    MixPlan {
        keep_a: if source_a.is_some() { vec![false; n] } else { Vec::new() },
        source_a,
        source_b: b.id.to_string(),
        lambda,
        keep_b: vec![true; n],
        kept_a: Vec::new(),
        kept_b: (0..b.len).collect(),
        label: b.label.to_vec(),
        fell_back_to_b: true,
    }
}

/// Plans the fusion of masked A and masked B for a given `λ`.
pub fn plan_mixup<R: Rng + ?Sized>(
    a: BagRef<'_>,
    b: BagRef<'_>,
    lambda: f64,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<MixPlan> {
    config.validate()?;
    check_lambda(lambda)?;
    if a.id == b.id {
        return Err(Error::arg(format!("mix-up needs two different bags, got {} twice", a.id)));
    }
    if a.label.len() != b.label.len() {
        return Err(Error::arg("mix-up bags disagree on the number of classes"));
    }
    let n = config.n;
    let part_a = partition_indices(a.id, a.len, n, rng)?;
    let part_b = partition_indices(b.id, b.len, n, rng)?;

    let masked_a = (lambda * n as f64).floor() as usize;
    // n − ⌊λn⌋ equals ⌈(1−λ)n⌉ for real λ; computing it this way keeps the
    // total at exactly n when (1−λ)n rounds just above an integer.
    let masked_b = n - masked_a;
    let keep_a = mask_groups(n, masked_a, rng);
    let keep_b = mask_groups(n, masked_b, rng);
    let kept_a = kept_indices(&part_a, &keep_a);
    let kept_b = kept_indices(&part_b, &keep_b);
    if kept_a.is_empty() && kept_b.is_empty() {
        return Ok(whole_b(b, n, lambda, Some(a.id.to_string())));
    }

    let label = match config.label_mode {
        LabelMode::PaperLiteral => mix_labels(lambda, a.label, 1.0 - lambda, b.label),
        LabelMode::KeptFraction => {
            let fa = (n - masked_a) as f64 / n as f64;
            let fb = (n - masked_b) as f64 / n as f64;
            mix_labels(fa, a.label, fb, b.label)
        }
    };
    Ok(MixPlan {
        source_a: Some(a.id.to_string()),
        source_b: b.id.to_string(),
        lambda,
        keep_a,
        keep_b,
        kept_a,
        kept_b,
        label,
        fell_back_to_b: false,
    })
}

/// Plans one augmented sample: the masked B alone with probability `γ`,
/// otherwise the fusion.
pub fn plan_pair<R: Rng + ?Sized>(
    a: BagRef<'_>,
    b: BagRef<'_>,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<MixPlan> {
    config.validate()?;
    if a.id == b.id {
        return Err(Error::arg(format!("mix-up needs two different bags, got {} twice", a.id)));
    }
    let single = rng.random::<f64>() < config.gamma;
    let lambda = sample_lambda(config.alpha_beta, rng)?;
    if !single {
        return plan_mixup(a, b, lambda, config, rng);
    }
    let n = config.n;
    let part_b = partition_indices(b.id, b.len, n, rng)?;
    let masked_b = n - (lambda * n as f64).floor() as usize;
    let keep_b = mask_groups(n, masked_b, rng);
    let kept_b = kept_indices(&part_b, &keep_b);
    if kept_b.is_empty() {
        return Ok(whole_b(b, n, lambda, None));
    }
    Ok(MixPlan {
        source_a: None,
        source_b: b.id.to_string(),
        lambda,
        keep_a: Vec::new(),
        keep_b,
        kept_a: Vec::new(),
        kept_b,
        label: b.label.to_vec(),
        fell_back_to_b: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBag {
    pub instances: Vec<Instance>,
    pub label: Vec<f64>,
    pub provenance: MixPlan,
}

impl AugmentedBag {
    fn materialize(a: &Bag, b: &Bag, plan: MixPlan) -> Self {
        let instances = plan
            .kept_a
            .iter()
            .map(|&i| a.instances[i].clone())
            .chain(plan.kept_b.iter().map(|&i| b.instances[i].clone()))
            .collect();
        Self {
            instances,
            label: plan.label.clone(),
            provenance: plan,
        }
    }

    pub fn into_bag(self) -> Result<Bag> {
        let id = match &self.provenance.source_a {
            Some(a) => format!("{a}+{}", self.provenance.source_b),
            None => format!("{}'", self.provenance.source_b),
        };
        Bag::new(id, self.instances, self.label)
    }
}

pub fn mixup_bags<R: Rng + ?Sized>(
    a: &Bag,
    b: &Bag,
    lambda: f64,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedBag> {
    let plan = plan_mixup(a.into(), b.into(), lambda, config, rng)?;
    Ok(AugmentedBag::materialize(a, b, plan))
}

pub fn augment_pair<R: Rng + ?Sized>(
    a: &Bag,
    b: &Bag,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<AugmentedBag> {
    let plan = plan_pair(a.into(), b.into(), config, rng)?;
    Ok(AugmentedBag::materialize(a, b, plan))
}
