//! Bags of instance feature vectors, the synthetic generator, pseudo-bag
//! partitioning, splits, and the line-oriented dataset file format.

mod io;
mod partition;
mod split;
mod synthetic;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, Manifest};
pub use partition::{partition_indices, partition_pseudobags, PseudoBagPartition};
pub use split::split_dataset;
pub use synthetic::{generate_synthetic, quantize_9, BagSize, SyntheticSpec, REFERENCE_SEPARATION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceClass {
    Negative,
    Positive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: Vec<f64>,
    /// Generator ground truth. Never read by training code.
    pub latent_class: Option<InstanceClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub instances: Vec<Instance>,
    /// Soft label over the classes.
    pub label: Vec<f64>,
}

impl Bag {
    pub fn new(id: impl Into<String>, instances: Vec<Instance>, label: Vec<f64>) -> Result<Self> {
        let bag = Self {
            id: id.into(),
            instances,
            label,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::Schema(format!("bag {} has no instances", self.id)));
        }
        check_label(&self.label).map_err(|m| Error::Schema(format!("bag {}: {m}", self.id)))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Index of the largest label entry, ties toward the lower index.
    pub fn class_index(&self) -> usize {
        argmax(&self.label)
    }

    /// For binary labels: true when class 1 dominates.
    pub fn is_positive(&self) -> bool {
        self.class_index() == self.label.len().saturating_sub(1) && self.label.len() > 1
    }

    /// Instance features stacked as a `K × d_raw` matrix.
    pub fn feature_matrix(&self) -> Tensor2 {
        let rows: Vec<&[f64]> = self.instances.iter().map(|i| i.features.as_slice()).collect();
        Tensor2::from_rows(&rows).expect("dataset validation guarantees equal lengths")
    }
}

pub(crate) fn check_label(label: &[f64]) -> std::result::Result<(), String> {
    if label.is_empty() {
        return Err("empty label".into());
    }
    if label.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err("label entries must lie in [0, 1]".into());
    }
    let sum: f64 = label.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(format!("label sums to {sum}"));
    }
    Ok(())
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(class: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[class] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub d_raw: usize,
    pub num_classes: usize,
    pub bags: Vec<Bag>,
}

impl Dataset {
    pub fn new(d_raw: usize, num_classes: usize, bags: Vec<Bag>) -> Result<Self> {
        let ds = Self {
            d_raw,
            num_classes,
            bags,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for bag in &self.bags {
            bag.validate()?;
            if bag.label.len() != self.num_classes {
                return Err(Error::Schema(format!(
                    "bag {} has {} label entries, dataset has {} classes",
                    bag.id,
                    bag.label.len(),
                    self.num_classes
                )));
            }
            for (k, inst) in bag.instances.iter().enumerate() {
                if inst.features.len() != self.d_raw {
                    return Err(Error::Schema(format!(
                        "bag {} instance {k} has {} features, expected {}",
                        bag.id,
                        inst.features.len(),
                        self.d_raw
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn instance_count(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    /// Bags per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for bag in &self.bags {
            counts[bag.class_index()] += 1;
        }
        counts
    }

    pub(crate) fn with_bags(&self, bags: Vec<Bag>) -> Self {
        Self {
            d_raw: self.d_raw,
            num_classes: self.num_classes,
            bags,
        }
    }
}
