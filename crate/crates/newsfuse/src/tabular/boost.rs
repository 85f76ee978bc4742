//! Boosted ensembles: adaptive boosting over stumps and gradient boosting
//! with binomial deviance and Newton leaf values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tree::{build_tree, SplitMode, Tree, TreeConfig};
use crate::error::{Error, Result};
use crate::nn::Mat;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Adaptive boosting with depth-1 trees and exponential reweighting.
#[derive(Debug, Clone)]
pub struct AdaBoost {
    stages: Vec<(Tree, f64)>,
}

impl AdaBoost {
    pub fn fit(x: &Mat, y: &[u8], n_estimators: usize, seed: u64) -> Result<Self> {
        let n = x.rows;
        let targets: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
        let mut weights = vec![1.0 / n as f64; n];
        let idx: Vec<usize> = (0..n).collect();
        let stump_cfg = TreeConfig {
            max_depth: 1,
            min_leaf: 1,
            split_mode: SplitMode::Best,
            feature_subsample: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        for _ in 0..n_estimators {
            let stump = build_tree(x, &targets, Some(&weights), &idx, &stump_cfg, &mut rng);
            let mut err = 0.0;
            let predictions: Vec<bool> = (0..n)
                .map(|i| stump.predict_row(x.row(i)) > 0.5)
                .collect();
            for i in 0..n {
                if predictions[i] != (y[i] == 1) {
                    err += weights[i];
                }
            }
            if err <= 1e-12 {
                stages.push((stump, 10.0));
                break;
            }
            if err >= 0.5 {
                break;
            }
            let alpha = 0.5 * ((1.0 - err) / err).ln();
            for i in 0..n {
                let sign = if predictions[i] != (y[i] == 1) { 1.0 } else { -1.0 };
                weights[i] *= (sign * alpha).exp();
            }
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            stages.push((stump, alpha));
        }
        if stages.is_empty() {
            return Err(Error::model("adaboost", "no stage beat 0.5 weighted error"));
        }
        Ok(AdaBoost { stages })
    }

    pub fn predict_proba_rows(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows)
            .map(|i| {
                let row = x.row(i);
                let margin: f64 = self
                    .stages
                    .iter()
                    .map(|(stump, alpha)| {
                        let vote = if stump.predict_row(row) > 0.5 { 1.0 } else { -1.0 };
                        alpha * vote
                    })
                    .sum();
                sigmoid(2.0 * margin)
            })
            .collect()
    }
}

/// Gradient boosting on log-odds with shallow regression trees. Each stage
/// fits the residual (y - p) and replaces leaf means with Newton steps
/// sum(residual) / sum(p (1-p)).
#[derive(Debug, Clone)]
pub struct GradientBoosting {
    base_score: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl GradientBoosting {
    pub fn fit(
        x: &Mat,
        y: &[u8],
        n_estimators: usize,
        max_depth: usize,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let n = x.rows;
        let pos = y.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == n {
            return Err(Error::model("gradient_boosting", "single-class training data"));
        }
        let p_bar = pos as f64 / n as f64;
        let base_score = (p_bar / (1.0 - p_bar)).ln();

        let idx: Vec<usize> = (0..n).collect();
        let cfg = TreeConfig {
            max_depth,
            min_leaf: 1,
            split_mode: SplitMode::Best,
            feature_subsample: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw = vec![base_score; n];
        let mut trees = Vec::with_capacity(n_estimators);
        for _ in 0..n_estimators {
            let residuals: Vec<f64> = (0..n)
                .map(|i| f64::from(y[i]) - sigmoid(raw[i]))
                .collect();
            let mut tree = build_tree(x, &residuals, None, &idx, &cfg, &mut rng);

            // Newton leaf values over the tree's partition of the data.
            let mut leaf_num: std::collections::BTreeMap<usize, f64> = Default::default();
            let mut leaf_den: std::collections::BTreeMap<usize, f64> = Default::default();
            for i in 0..n {
                let leaf = tree.leaf_of_row(x.row(i));
                let p = sigmoid(raw[i]);
                *leaf_num.entry(leaf).or_default() += residuals[i];
                *leaf_den.entry(leaf).or_default() += p * (1.0 - p);
            }
            for (leaf, num) in &leaf_num {
                let den = leaf_den[leaf].max(1e-12);
                tree.set_leaf_value(*leaf, num / den);
            }

            for i in 0..n {
                raw[i] += learning_rate * tree.predict_row(x.row(i));
            }
            trees.push(tree);
        }
        Ok(GradientBoosting {
            base_score,
            learning_rate,
            trees,
        })
    }

    pub fn predict_proba_rows(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows)
            .map(|i| {
                let row = x.row(i);
                let raw = self.base_score
                    + self.learning_rate
                        * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>();
                sigmoid(raw)
            })
            .collect()
    }
}
