use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Stratified train/validation/test split.
///
/// Within each class the bags are shuffled and cut by largest-remainder
/// rounding of `fraction × stratum size`, so every class is divided in the
/// requested proportions as closely as integer counts allow. Bags keep their
/// original relative order inside each split.
pub fn split_dataset(
    ds: &Dataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
        return Err(Error::arg("split fractions must be non-negative"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("split fractions sum to {total}, expected 1")));
    }

    let mut rng = stream(seed, Stream::Split);
    let mut assignment = vec![0usize; ds.len()];
    let active = fractions.iter().filter(|f| **f > 0.0).count();
    for class in 0..ds.num_classes {
        let mut members: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.bags[i].class_index() == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < active {
            log::warn!(
                "class {class} has {} bags for {active} splits; assignment is best-effort",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        let counts = apportion(members.len(), &fractions);
        let mut cursor = 0;
        for (split, &count) in counts.iter().enumerate() {
            for &m in &members[cursor..cursor + count] {
                assignment[m] = split;
            }
            cursor += count;
        }
    }

    let pick = |s: usize| {
        ds.with_bags(
            ds.bags
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == s)
                .map(|(b, _)| b.clone())
                .collect(),
        )
    };
    Ok((pick(0), pick(1), pick(2)))
}

/// Largest-remainder apportionment of `n` items; ties go to the earlier split.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = (e + 1e-9).floor() as usize;
    }
    let mut remaining = n - counts.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..3).filter(|&i| fractions[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}
