//! Ranking metrics: MRR, Precision@K, Recall@K, average precision, AUC.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Mean of reciprocal ranks; ranks are 1-based.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::InvalidArgument("mrr over no queries".into()));
    }
    if let Some(&bad) = ranks.iter().find(|&&r| r == 0) {
        return Err(Error::InvalidArgument(format!(
            "ranks are 1-based, got {bad}"
        )));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn precision_at_k(relevant_in_top_k: usize, k: usize) -> Result<f64> {
    if k == 0 || relevant_in_top_k > k {
        return Err(Error::InvalidArgument(format!(
            "precision@{k} with {relevant_in_top_k} relevant"
        )));
    }
    Ok(relevant_in_top_k as f64 / k as f64)
}

/// Undefined (an error) when there are no relevant items; callers skip and
/// count such queries.
pub fn recall_at_k(relevant_in_top_k: usize, total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::InvalidArgument(
            "recall undefined with zero relevant items".into(),
        ));
    }
    if relevant_in_top_k > total_relevant {
        return Err(Error::InvalidArgument(format!(
            "{relevant_in_top_k} retrieved relevant exceeds total {total_relevant}"
        )));
    }
    Ok(relevant_in_top_k as f64 / total_relevant as f64)
}

/// Mean over positive positions of the precision at that position;
/// `labels` are relevance flags in rank order.
pub fn average_precision(labels: &[bool]) -> Result<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::InvalidArgument(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if l {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(acc / positives as f64)
}

/// Fraction of (positive, negative) score pairs ranked correctly, ties
/// counted as half.
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::InvalidArgument(
            "auc needs at least one positive and one negative score".into(),
        ));
    }
    let mut acc = 0.0;
    for &p in pos_scores {
        for &n in neg_scores {
            acc += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(acc / (pos_scores.len() * neg_scores.len()) as f64)
}

/// Metrics for one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub ap: f64,
    pub auc: f64,
    /// Number of scored queries.
    pub query_count: usize,
    /// Queries skipped because recall was undefined.
    pub skipped: usize,
    /// Which relevant-set protocol produced the numbers.
    pub protocol: String,
}

impl MetricsReport {
    /// Line-delimited structured text, one `key value` pair per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("protocol {}\n", self.protocol));
        out.push_str(&format!("queries {}\n", self.query_count));
        out.push_str(&format!("skipped {}\n", self.skipped));
        out.push_str(&format!("mrr {:.6}\n", self.mrr));
        out.push_str(&format!("ap {:.6}\n", self.ap));
        out.push_str(&format!("auc {:.6}\n", self.auc));
        for (k, v) in &self.recall_at {
            out.push_str(&format!("recall@{k} {v:.6}\n"));
        }
        for (k, v) in &self.precision_at {
            out.push_str(&format!("precision@{k} {v:.6}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&[1, 1, 1]).unwrap(), 1.0);
        assert!((mrr(&[1, 2, 4]).unwrap() - 0.583333).abs() < 1e-6);
        assert_eq!(mrr(&[5]).unwrap(), 0.2);
        assert!(mrr(&[]).is_err());
        assert!(mrr(&[0]).is_err());
    }

    #[test]
    fn precision_recall_examples() {
        assert_eq!(precision_at_k(3, 10).unwrap(), 0.3);
        assert_eq!(precision_at_k(10, 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(3, 12).unwrap(), 0.25);
        assert!(recall_at_k(1, 0).is_err());
        assert!(precision_at_k(11, 10).is_err());
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true]).unwrap(), 1.0);
        let ap = average_precision(&[true, false, true]).unwrap();
        assert!((ap - 0.833333).abs() < 1e-6);
        assert!(average_precision(&[false, false]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.0], &[1.0]).unwrap(), 0.0);
        assert!(auc(&[], &[1.0]).is_err());
    }

    // brute-force cross-checks on randomized small inputs
    #[test]
    fn metrics_match_brute_force_references() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let n = rng.random_range(1..20);
            let ranks: Vec<usize> = (0..n).map(|_| rng.random_range(1..30)).collect();
            let direct: f64 =
                ranks.iter().map(|&r| (r as f64).recip()).sum::<f64>() / n as f64;
            assert!((mrr(&ranks).unwrap() - direct).abs() < 1e-12);

            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            if labels.iter().any(|&l| l) {
                // reference: running precision accumulated with rationals
                let mut acc = 0.0;
                let mut seen = 0;
                for i in 0..n {
                    if labels[i] {
                        seen += 1;
                        acc += seen as f64 / (i + 1) as f64;
                    }
                }
                let reference = acc / labels.iter().filter(|&&l| l).count() as f64;
                assert!((average_precision(&labels).unwrap() - reference).abs() < 1e-12);
            }

            let pos: Vec<f64> = (0..rng.random_range(1..8))
                .map(|_| rng.random_range(-3..4) as f64)
                .collect();
            let neg: Vec<f64> = (0..rng.random_range(1..8))
                .map(|_| rng.random_range(-3..4) as f64)
                .collect();
            let mut wins = 0.0;
            for &p in &pos {
                for &q in &neg {
                    wins += if p > q {
                        1.0
                    } else if p == q {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            let reference = wins / (pos.len() * neg.len()) as f64;
            assert!((auc(&pos, &neg).unwrap() - reference).abs() < 1e-12);
        }
    }
}
