//! ROC-AUC scoring and comparison reports.
//!
//! The estimator is the rank-based (Mann-Whitney) form: the probability that
//! a random positive outscores a random negative, with half credit for ties.
//! A literal O(n^2) pairwise oracle backs it in tests and stays available for
//! audits.

pub mod reference;
mod report;

pub use report::{fingerprint, MetricsReport, ReportTable};

use crate::error::{Error, Result};

/// Scores paired with binary labels. Higher score = more unreliable (class 1).
#[derive(Debug, Clone)]
pub struct ScoredPredictions {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dim(
                "ScoredPredictions",
                labels.len(),
                scores.len(),
            ));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {l} outside {{0,1}}")));
        }
        Ok(ScoredPredictions { scores, labels })
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 0).count()
    }
}

fn check_both_classes(p: &ScoredPredictions) -> Result<(usize, usize)> {
    let (np, nn) = (p.n_pos(), p.n_neg());
    if np == 0 || nn == 0 {
        return Err(Error::Metric(format!(
            "ROC-AUC needs both classes; got {np} positive and {nn} negative"
        )));
    }
    Ok((np, nn))
}

/// Rank-based ROC-AUC: sort once, assign average ranks to tied scores, then
/// AUC = (R_pos - n_pos(n_pos+1)/2) / (n_pos * n_neg).
pub fn roc_auc(p: &ScoredPredictions) -> Result<f64> {
    let (np, nn) = check_both_classes(p)?;
    let n = p.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        p.scores[a]
            .partial_cmp(&p.scores[b])
            .expect("scores must not be NaN")
    });

    // Average rank within each tie group (ranks are 1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && p.scores[order[j + 1]] == p.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if p.labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let numer = rank_sum_pos - (np * (np + 1)) as f64 / 2.0;
    Ok(numer / (np as f64 * nn as f64))
}

/// Literal double loop over positive-negative pairs, half credit for ties.
pub fn auc_pairwise_oracle(p: &ScoredPredictions) -> Result<f64> {
    let (np, nn) = check_both_classes(p)?;
    let mut wins = 0u64;
    let mut ties = 0u64;
    for (i, &li) in p.labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in p.labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            if p.scores[i] > p.scores[j] {
                wins += 1;
            } else if p.scores[i] == p.scores[j] {
                ties += 1;
            }
        }
    }
    let numer = wins as f64 + ties as f64 / 2.0;
    Ok(numer / (np as f64 * nn as f64))
}

/// Count of tied positive-negative score pairs (reported alongside AUC).
pub fn tie_count(p: &ScoredPredictions) -> usize {
    let mut ties = 0;
    for (i, &li) in p.labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in p.labels.iter().enumerate() {
            if lj == 0 && p.scores[i] == p.scores[j] {
                ties += 1;
            }
        }
    }
    ties
}
