//! Thresholded binary-classification metrics.

use std::fmt;
use std::ops::Add;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts { tp: self.tp + o.tp, fp: self.fp + o.fp, tn: self.tn + o.tn, fn_: self.fn_ + o.fn_ }
    }
}

/// Tallies predictions against labels. A probability equal to the
/// threshold counts as a positive prediction.
pub fn confusion_counts(probs: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch(probs.len(), labels.len()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} not in (0, 1)")));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_report(counts: ConfusionCounts, mean_loss: f64) -> Result<MetricsReport> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    Ok(MetricsReport {
        loss: mean_loss,
        accuracy: ratio(counts.tp + counts.tn, total),
        precision,
        recall,
        f1: f1_score(precision, recall),
        counts,
    })
}

impl MetricsReport {
    /// `loss,accuracy,precision,recall,F1 Score` fields for a results row.
    pub fn csv_fields(&self) -> String {
        format!("{:.6},{:.6},{:.6},{:.6},{:.6}", self.loss, self.accuracy, self.precision, self.recall, self.f1)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(f, "loss       {:.4}", self.loss)?;
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "precision  {:.4}", self.precision)?;
        writeln!(f, "recall     {:.4}", self.recall)?;
        writeln!(f, "F1 score   {:.4}", self.f1)?;
        write!(f, "confusion  tp={} fp={} tn={} fn={}", c.tp, c.fp, c.tn, c.fn_)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tally() {
        let c = confusion_counts(&[0.9, 0.2, 0.7, 0.4], &[1, 0, 0, 1], 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
        let c = confusion_counts(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(c.tp, 1);
        let c = confusion_counts(&[0.99, 0.01, 0.97], &[1, 0, 1], 0.5).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert!(matches!(confusion_counts(&[0.1], &[], 0.5), Err(Error::LengthMismatch(1, 0))));
    }

    #[test]
    fn report_values() {
        assert!((f1_score(0.994, 0.997) - 0.995_497_74).abs() < 1e-6);
        assert!((f1_score(0.81, 0.877) - 0.842_169_532).abs() < 1e-6);
        assert_eq!(f1_score(1.0, 1.0), 1.0);
        let r = metrics_report(ConfusionCounts { tp: 0, fp: 3, tn: 5, fn_: 2 }, 0.3).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.accuracy, 0.5);
        let r = metrics_report(ConfusionCounts { tp: 0, fp: 0, tn: 4, fn_: 0 }, 0.0).unwrap();
        assert_eq!(r.precision, 0.0);
        assert!(matches!(metrics_report(ConfusionCounts::default(), 0.0), Err(Error::EmptyEvaluation)));
        assert_eq!(r.csv_fields(), "0.000000,1.000000,0.000000,0.000000,0.000000");
    }

    proptest! {
        #[test]
        fn bounds_and_permutation(pairs in prop::collection::vec((0.0f64..1.0, 0u8..2), 1..60), rot in 0usize..60) {
            let (p, y): (Vec<f64>, Vec<u8>) = pairs.iter().copied().unzip();
            let r = metrics_report(confusion_counts(&p, &y, 0.5).unwrap(), 0.0).unwrap();
            for v in [r.accuracy, r.precision, r.recall, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-12);
            prop_assert!(r.f1 <= 2.0 * r.precision.min(r.recall) + 1e-12);
            let mut rotated = pairs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let (p2, y2): (Vec<f64>, Vec<u8>) = rotated.into_iter().unzip();
            prop_assert_eq!(confusion_counts(&p2, &y2, 0.5).unwrap(), r.counts);
        }

        #[test]
        fn shards_sum(pairs in prop::collection::vec((0.0f64..1.0, 0u8..2), 0..40), cut in 0usize..40) {
            let (p, y): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
            let k = cut.min(p.len());
            let whole = confusion_counts(&p, &y, 0.5).unwrap();
            let parts = confusion_counts(&p[..k], &y[..k], 0.5).unwrap() + confusion_counts(&p[k..], &y[k..], 0.5).unwrap();
            prop_assert_eq!(whole, parts);
            prop_assert_eq!(whole.total(), p.len());
        }
    }
}
