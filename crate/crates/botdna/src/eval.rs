//! Confusion-matrix metrics with bots (label 1) as the positive class,
//! plus cross-seed aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {preds} predictions vs {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("label {0} out of range, expected 0 or 1")]
    BadLabel(u8),
    #[error("metric key sets differ: {0:?} vs {1:?}")]
    KeyMismatch(Vec<String>, Vec<String>),
    #[error("nothing to aggregate")]
    Empty,
}

/// Binary confusion counts; positive = bot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Tallies predictions against labels.
pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<Confusion, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for (&p, &y) in preds.iter().zip(labels) {
        if p > 1 {
            return Err(EvalError::BadLabel(p));
        }
        if y > 1 {
            return Err(EvalError::BadLabel(y));
        }
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => unreachable!(),
        }
    }
    Ok(c)
}

pub const METRIC_NAMES: [&str; 5] = ["precision", "recall", "f1", "accuracy", "specificity"];

/// The five reported metrics. Any 0/0 ratio is defined as 0 and the
/// metric's name is listed in `degenerate` rather than throwing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub specificity: f64,
    pub degenerate: Vec<String>,
}

impl Metrics {
    pub fn as_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("precision".into(), self.precision);
        m.insert("recall".into(), self.recall);
        m.insert("f1".into(), self.f1);
        m.insert("accuracy".into(), self.accuracy);
        m.insert("specificity".into(), self.specificity);
        m
    }
}

fn ratio(num: f64, den: f64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

/// precision = tp/(tp+fp), recall = tp/(tp+fn), f1 = 2PR/(P+R),
/// accuracy = (tp+tn)/total, specificity = tn/(tn+fp).
pub fn metrics(c: &Confusion) -> Metrics {
    let mut degenerate = Vec::new();
    let tp = c.tp as f64;
    let tn = c.tn as f64;
    let precision = ratio(tp, (c.tp + c.fp) as f64, "precision", &mut degenerate);
    let recall = ratio(tp, (c.tp + c.fn_) as f64, "recall", &mut degenerate);
    let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", &mut degenerate);
    let accuracy = ratio(tp + tn, c.total() as f64, "accuracy", &mut degenerate);
    let specificity = ratio(tn, (c.tn + c.fp) as f64, "specificity", &mut degenerate);
    Metrics {
        precision,
        recall,
        f1,
        accuracy,
        specificity,
        degenerate,
    }
}

/// Mean and population standard deviation (divide by n) per metric,
/// over per-seed runs with identical key sets.
pub fn aggregate(
    per_seed: &[BTreeMap<String, f64>],
) -> Result<(BTreeMap<String, f64>, BTreeMap<String, f64>), EvalError> {
    let first = per_seed.first().ok_or(EvalError::Empty)?;
    let keys: Vec<String> = first.keys().cloned().collect();
    for entry in per_seed {
        let entry_keys: Vec<String> = entry.keys().cloned().collect();
        if entry_keys != keys {
            return Err(EvalError::KeyMismatch(keys, entry_keys));
        }
    }
    let n = per_seed.len() as f64;
    let mut means = BTreeMap::new();
    let mut stds = BTreeMap::new();
    for key in &keys {
        let mean = per_seed.iter().map(|m| m[key]).sum::<f64>() / n;
        let var = per_seed
            .iter()
            .map(|m| (m[key] - mean).powi(2))
            .sum::<f64>()
            / n;
        means.insert(key.clone(), mean);
        stds.insert(key.clone(), var.sqrt());
    }
    Ok((means, stds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let c = confusion(&[1, 1, 0], &[1, 1, 0]).unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 2,
                fp: 0,
                fn_: 0,
                tn: 1
            }
        );
        let m = metrics(&c);
        assert_eq!(
            (m.precision, m.recall, m.f1, m.accuracy, m.specificity),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
        assert!(m.degenerate.is_empty());
    }

    #[test]
    fn total_miss() {
        let c = confusion(&[1, 0], &[0, 1]).unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 0,
                fp: 1,
                fn_: 1,
                tn: 0
            }
        );
    }

    #[test]
    fn fixture_tally() {
        // hand tally: 3 hits on bots, 1 false alarm, 1 missed bot,
        // 5 correctly ignored humans
        let labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let preds = [1, 1, 1, 0, 1, 0, 0, 0, 0, 0];
        let c = confusion(&preds, &labels).unwrap();
        assert_eq!(
            c,
            Confusion {
                tp: 3,
                fp: 1,
                fn_: 1,
                tn: 5
            }
        );
        let m = metrics(&c);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.75).abs() < 1e-12);
        assert!((m.f1 - 0.75).abs() < 1e-12);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
        assert!((m.specificity - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            confusion(&[1], &[1, 0]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_precision_is_zero_with_flag() {
        let c = Confusion {
            tp: 0,
            fp: 0,
            fn_: 3,
            tn: 5,
        };
        let m = metrics(&c);
        assert_eq!(m.precision, 0.0);
        assert!(m.degenerate.contains(&"precision".to_string()));
    }

    #[test]
    fn accuracy_decomposes_into_recall_and_specificity() {
        let c = Confusion {
            tp: 7,
            fp: 2,
            fn_: 3,
            tn: 8,
        };
        let m = metrics(&c);
        let pos = (c.tp + c.fn_) as f64;
        let neg = (c.tn + c.fp) as f64;
        let total = c.total() as f64;
        assert!((m.accuracy - (m.recall * pos + m.specificity * neg) / total).abs() < 1e-15);
    }

    #[test]
    fn f1_lies_between_precision_and_recall() {
        for (tp, fp, fn_, tn) in [(5, 2, 1, 9), (1, 4, 6, 2), (3, 3, 3, 3)] {
            let m = metrics(&Confusion { tp, fp, fn_, tn });
            let lo = m.precision.min(m.recall);
            let hi = m.precision.max(m.recall);
            assert!(m.f1 >= lo - 1e-15 && m.f1 <= hi + 1e-15);
            if (m.precision - m.recall).abs() < 1e-15 {
                assert!((m.f1 - m.precision).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swapping_labels_without_convention_swap_exchanges_recall_and_specificity() {
        let labels = [1u8, 1, 1, 0, 0, 0, 0, 1];
        let preds = [1u8, 0, 1, 0, 1, 0, 0, 1];
        let m = metrics(&confusion(&preds, &labels).unwrap());
        let flipped_labels: Vec<u8> = labels.iter().map(|&y| 1 - y).collect();
        let flipped_preds: Vec<u8> = preds.iter().map(|&p| 1 - p).collect();
        let m_flipped = metrics(&confusion(&flipped_preds, &flipped_labels).unwrap());
        assert!((m.recall - m_flipped.specificity).abs() < 1e-15);
        assert!((m.specificity - m_flipped.recall).abs() < 1e-15);
        assert!((m.accuracy - m_flipped.accuracy).abs() < 1e-15);
    }

    #[test]
    fn aggregate_single_entry_has_zero_std() {
        let entry: BTreeMap<String, f64> =
            [("f1".to_string(), 0.9)].into_iter().collect();
        let (mean, std) = aggregate(&[entry]).unwrap();
        assert_eq!(mean["f1"], 0.9);
        assert_eq!(std["f1"], 0.0);
    }

    #[test]
    fn aggregate_two_values() {
        let e = |v: f64| -> BTreeMap<String, f64> {
            [("acc".to_string(), v)].into_iter().collect()
        };
        let (mean, std) = aggregate(&[e(0.8), e(0.9)]).unwrap();
        assert!((mean["acc"] - 0.85).abs() < 1e-15);
        assert!((std["acc"] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_key_mismatch() {
        let a: BTreeMap<String, f64> = [("f1".to_string(), 0.9)].into_iter().collect();
        let b: BTreeMap<String, f64> = [("acc".to_string(), 0.9)].into_iter().collect();
        assert!(matches!(
            aggregate(&[a, b]),
            Err(EvalError::KeyMismatch(_, _))
        ));
    }

    #[test]
    fn aggregate_matches_independent_recomputation() {
        let rows: Vec<BTreeMap<String, f64>> = [0.81, 0.84, 0.79, 0.86, 0.80]
            .iter()
            .map(|&v| {
                [("f1".to_string(), v), ("accuracy".to_string(), v + 0.01)]
                    .into_iter()
                    .collect()
            })
            .collect();
        let (mean, std) = aggregate(&rows).unwrap();
        for key in ["f1", "accuracy"] {
            let values: Vec<f64> = rows.iter().map(|r| r[key]).collect();
            let m = values.iter().sum::<f64>() / values.len() as f64;
            let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / values.len() as f64;
            assert!((mean[key] - m).abs() < 1e-12);
            assert!((std[key] - v.sqrt()).abs() < 1e-12);
        }
    }
}
