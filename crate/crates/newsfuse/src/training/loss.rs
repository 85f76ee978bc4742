//! Label-smoothing cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Mat};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmoothingLossConfig {
    /// Smoothing rate epsilon.
    pub eps: f64,
    /// Class count K.
    pub classes: usize,
}

impl Default for SmoothingLossConfig {
    fn default() -> Self {
        SmoothingLossConfig {
            eps: 0.15,
            classes: 2,
        }
    }
}

impl SmoothingLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::Config(format!(
                "smoothing rate {} outside [0, 1)",
                self.eps
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }

    /// Smoothed target mass on the true class: 1 - eps + eps/K.
    pub fn q_true(&self) -> f64 {
        1.0 - self.eps + self.eps / self.classes as f64
    }

    /// Smoothed target mass on each other class: eps/K.
    pub fn q_other(&self) -> f64 {
        self.eps / self.classes as f64
    }

    /// Entropy of the smoothed target: the infimum of the loss over all
    /// predictions (attained when p = q).
    pub fn target_entropy(&self) -> f64 {
        let qt = self.q_true();
        let qo = self.q_other();
        let mut h = -qt * qt.ln();
        for _ in 1..self.classes {
            h -= qo * qo.ln();
        }
        h
    }
}

/// Mean over the batch of -sum_c q_c log softmax(logits)_c where the target
/// q puts 1 - eps + eps/K on the true class and eps/K elsewhere. eps = 0
/// recovers plain cross-entropy.
pub fn label_smoothing_ce(logits: &Mat, labels: &[usize], eps: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Config(format!("smoothing rate {eps} outside [0, 1)")));
    }
    if logits.rows != labels.len() {
        return Err(Error::dim("label_smoothing_ce", logits.rows, labels.len()));
    }
    let k = logits.cols;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside [0, {k})")));
    }
    let p = softmax_rows(logits);
    let q_other = eps / k as f64;
    let q_true = 1.0 - eps + q_other;
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        for c in 0..k {
            let q = if c == y { q_true } else { q_other };
            total -= q * p.at(r, c).max(1e-300).ln();
        }
    }
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_ce(logits: &Mat, labels: &[usize]) -> f64 {
        let p = softmax_rows(logits);
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            total -= p.at(r, y).ln();
        }
        total / labels.len() as f64
    }

    #[test]
    fn eps_zero_is_plain_cross_entropy() {
        let logits = Mat::from_rows(&[vec![1.3, -0.2], vec![-2.0, 0.5], vec![0.0, 0.0]]);
        let labels = [0, 1, 0];
        let smoothed = label_smoothing_ce(&logits, &labels, 0.0).unwrap();
        assert!((smoothed - plain_ce(&logits, &labels)).abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_costs_ln_two() {
        let logits = Mat::from_rows(&[vec![0.7, 0.7]]);
        for eps in [0.0, 0.1, 0.15, 0.5] {
            let loss = label_smoothing_ce(&logits, &[0], eps).unwrap();
            assert!((loss - 2f64.ln()).abs() < 1e-12, "eps {eps}: {loss}");
        }
    }

    #[test]
    fn worked_value_at_p_point_nine() {
        // logits chosen so softmax = (0.9, 0.1); with eps = 0.15 the target
        // is (0.925, 0.075) and the loss is -(0.925 ln 0.9 + 0.075 ln 0.1).
        let logits = Mat::from_rows(&[vec![9f64.ln(), 0.0]]);
        let loss = label_smoothing_ce(&logits, &[0], 0.15).unwrap();
        let expected = -(0.925 * 0.9f64.ln() + 0.075 * 0.1f64.ln());
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.27015).abs() < 1e-4);
    }

    #[test]
    fn loss_is_bounded_below_by_target_entropy() {
        let cfg = SmoothingLossConfig {
            eps: 0.15,
            classes: 2,
        };
        let bound = cfg.target_entropy();
        // Entropy of (0.925, 0.075).
        assert!((bound - 0.2663844) .abs() < 1e-6);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let logits =
                Mat::from_rows(&[vec![rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)]]);
            let label = rng.gen_range(0..2);
            let loss = label_smoothing_ce(&logits, &[label], cfg.eps).unwrap();
            assert!(loss >= bound - 1e-12, "loss {loss} below bound {bound}");
        }
    }

    #[test]
    fn invalid_eps_is_an_error() {
        let logits = Mat::from_rows(&[vec![0.0, 0.0]]);
        assert!(label_smoothing_ce(&logits, &[0], 1.0).is_err());
        assert!(label_smoothing_ce(&logits, &[0], -0.1).is_err());
    }

    #[test]
    fn graph_op_matches_pure_function() {
        use crate::nn::Graph;
        let logits = Mat::from_rows(&[vec![0.4, -1.0], vec![2.0, 0.3]]);
        let labels = [1usize, 0];
        let pure = label_smoothing_ce(&logits, &labels, 0.15).unwrap();
        let mut g = Graph::new();
        let l = g.leaf(logits);
        let loss = g.smoothed_ce(l, &labels, 0.15);
        assert!((g.value(loss).at(0, 0) - pure).abs() < 1e-12);
    }
}
