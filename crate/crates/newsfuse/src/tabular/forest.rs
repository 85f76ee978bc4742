//! Bagged tree ensembles: random forest (bootstrap + per-node feature
//! subsampling) and extra trees (full sample, random thresholds).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{build_tree, SplitMode, Tree, TreeConfig};
use crate::nn::Mat;

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn predict_proba_rows(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows)
            .map(|i| {
                let row = x.row(i);
                self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
                    / self.trees.len() as f64
            })
            .collect()
    }
}

pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub split_mode: SplitMode,
}

pub fn fit_forest(x: &Mat, y: &[u8], cfg: &ForestConfig, seed: u64) -> Forest {
    let targets: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
    let n = x.rows;
    let m = ((x.cols as f64).sqrt().ceil() as usize).clamp(1, x.cols);
    let tree_cfg = TreeConfig {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        split_mode: cfg.split_mode,
        feature_subsample: Some(m),
    };
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64 * 0x9E37));
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            build_tree(x, &targets, None, &idx, &tree_cfg, &mut rng)
        })
        .collect();
    Forest { trees }
}
