//! ROC AUC, F1 and accuracy for binary bag predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub f1: f64,
    pub acc: f64,
    pub count: usize,
    pub threshold: f64,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::arg("scores contain NaN"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC AUC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Trapezoidal area under the ROC curve.
///
/// Scores are swept from high to low; each run of tied scores moves the curve
/// diagonally in one step, which is exactly the "ties count one half"
/// concordance convention.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let (prev_tp, prev_fp) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Trapezoid in raw counts; normalized once at the end.
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
    }
    Ok(area / (pos as f64 * neg as f64))
}

/// Mean over every positive/negative pair of `[s⁺ > s⁻] + ½[s⁺ = s⁻]`.
/// Quadratic; meant as a test oracle.
pub fn auc_bruteforce_oracle(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut wins = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// F1 of the positive class and accuracy, predicting positive when
/// `score >= threshold`. F1 is 0 when precision + recall is 0.
pub fn f1_accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::arg("no predictions to score"));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let acc = (tp + tn) as f64 / scores.len() as f64;
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    Ok((f1, acc))
}

pub fn evaluate(scores: &[f64], labels: &[bool], threshold: f64) -> Result<EvalResult> {
    let auc = roc_auc(scores, labels)?;
    let (f1, acc) = f1_accuracy(scores, labels, threshold)?;
    Ok(EvalResult {
        auc,
        f1,
        acc,
        count: scores.len(),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_reversed() {
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.1], &labels).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.3, 0.8, 0.9], &labels).unwrap(), 0.0);
        assert_eq!(auc_bruteforce_oracle(&[0.1, 0.3, 0.8, 0.9], &labels).unwrap(), 0.0);
    }

    #[test]
    fn interleaved_is_three_quarters() {
        let s = [0.9, 0.6, 0.3, 0.2];
        let l = [true, false, true, false];
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.75);
        assert_eq!(auc_bruteforce_oracle(&s, &l).unwrap(), 0.75);
    }

    #[test]
    fn all_tied_is_half() {
        let l = [true, false, true, false, false];
        assert_eq!(roc_auc(&[0.4; 5], &l).unwrap(), 0.5);
    }

    #[test]
    fn one_pair() {
        assert_eq!(auc_bruteforce_oracle(&[0.7, 0.2], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.7, 0.2], &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(
            auc_bruteforce_oracle(&[0.1, 0.2], &[false, false]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn f1_cases() {
        let l = [true, false, true, false];
        assert_eq!(f1_accuracy(&[0.9, 0.1, 0.8, 0.2], &l, 0.5).unwrap(), (1.0, 1.0));
        assert_eq!(f1_accuracy(&[0.1, 0.1, 0.2, 0.2], &l, 0.5).unwrap(), (0.0, 0.5));
        // TP=1, FP=1, FN=1, TN=1.
        assert_eq!(f1_accuracy(&[0.9, 0.9, 0.1, 0.1], &l, 0.5).unwrap(), (0.5, 0.5));
        // score == threshold predicts positive
        assert_eq!(f1_accuracy(&[0.5], &[true], 0.5).unwrap(), (1.0, 1.0));
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..100).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 4.0 - 1.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
    }

    proptest! {
        #[test]
        fn negated_scores_complement((s, l) in scored()) {
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let sum = roc_auc(&s, &l).unwrap() + roc_auc(&neg, &l).unwrap();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn monotone_transform_invariant((s, l) in scored(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            let t: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
            let d = roc_auc(&s, &l).unwrap() - roc_auc(&t, &l).unwrap();
            prop_assert!(d.abs() <= 1e-9);
        }

        #[test]
        fn matches_oracle((s, l) in scored()) {
            let d = roc_auc(&s, &l).unwrap() - auc_bruteforce_oracle(&s, &l).unwrap();
            prop_assert!(d.abs() <= 1e-9);
        }
    }
}
