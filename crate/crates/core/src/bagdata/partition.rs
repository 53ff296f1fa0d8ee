use rand::seq::SliceRandom;
use rand::Rng;

use super::Bag;
use crate::error::{Error, Result};

/// A bag's instance indices dealt into `n` pseudo-bags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoBagPartition {
    pub bag_id: String,
    pub groups: Vec<Vec<usize>>,
}

impl PseudoBagPartition {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Groups left empty because the bag has fewer instances than groups.
    pub fn empty_groups(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.is_empty())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn instance_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

/// Uniformly random balanced partition of `0..k` into `n` groups.
///
/// Indices are shuffled and dealt round-robin, so the first `k mod n` groups
/// get one extra element. When `k < n` the trailing `n - k` groups are empty.
pub fn partition_indices<R: Rng + ?Sized>(
    bag_id: &str,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<PseudoBagPartition> {
    if n == 0 {
        return Err(Error::arg("pseudo-bag count must be at least 1"));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut groups = vec![Vec::with_capacity(k.div_ceil(n)); n];
    for (pos, idx) in order.into_iter().enumerate() {
        groups[pos % n].push(idx);
    }
    Ok(PseudoBagPartition {
        bag_id: bag_id.to_string(),
        groups,
    })
}

pub fn partition_pseudobags<R: Rng + ?Sized>(
    bag: &Bag,
    n: usize,
    rng: &mut R,
) -> Result<PseudoBagPartition> {
    partition_indices(&bag.id, bag.len(), n, rng)
}
