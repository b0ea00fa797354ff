//! Micro-averaged F1 with a designated negative class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::verbalizer::RelationSchema;

/// Pooled counts over positive (non-N/A) classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrfCounts {
    pub true_positive: usize,
    pub predicted_positive: usize,
    pub gold_positive: usize,
}

impl PrfCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positive, self.predicted_positive)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positive, self.gold_positive)
    }

    /// Zero when there are no true positives.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Counts true, predicted and gold positives. A prediction of `na` is never
/// positive; with `na = None` every class is positive.
pub fn prf_counts(predictions: &[usize], golds: &[usize], na: Option<usize>) -> Result<PrfCounts> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let positive = |c: usize| Some(c) != na;
    let mut counts = PrfCounts::default();
    for (&p, &g) in predictions.iter().zip(golds) {
        counts.predicted_positive += usize::from(positive(p));
        counts.gold_positive += usize::from(positive(g));
        counts.true_positive += usize::from(positive(p) && p == g);
    }
    Ok(counts)
}

pub fn micro_f1_with_na(predictions: &[usize], golds: &[usize], na: Option<usize>) -> Result<f64> {
    Ok(prf_counts(predictions, golds, na)?.f1())
}

/// Micro-F1 treating the schema's N/A label as the negative class.
pub fn micro_f1(predictions: &[usize], golds: &[usize], schema: &RelationSchema) -> Result<f64> {
    micro_f1_with_na(predictions, golds, schema.na_index())
}

#[cfg(test)]
mod tests {
    use super::*;

    const NA: Option<usize> = Some(9);

    #[test]
    fn identical_without_na_is_one() {
        assert_eq!(micro_f1_with_na(&[0, 1, 2], &[0, 1, 2], NA).unwrap(), 1.0);
    }

    #[test]
    fn all_na_predictions_score_zero() {
        assert_eq!(micro_f1_with_na(&[9, 9, 9], &[0, 9, 1], NA).unwrap(), 0.0);
    }

    #[test]
    fn mixed_case_counts() {
        // golds [A, A, B, NA], preds [A, B, B, A]
        let c = prf_counts(&[0, 1, 1, 0], &[0, 0, 1, 9], NA).unwrap();
        assert_eq!((c.true_positive, c.predicted_positive, c.gold_positive), (2, 4, 3));
        assert!((c.f1() - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn without_na_every_class_counts() {
        let f = micro_f1_with_na(&[0, 1, 1], &[0, 0, 1], None).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            micro_f1_with_na(&[0], &[0, 1], NA),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
