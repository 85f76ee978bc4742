//! CART-style trees over dense feature matrices. One builder serves the
//! classification tree, the forests (feature subsampling, random thresholds)
//! and the boosting stages (regression on residuals, leaf ids exposed so the
//! caller can set Newton leaf values).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::Mat;

#[derive(Debug, Clone)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_of_row(&self, row: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { .. } => return idx,
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn set_leaf_value(&mut self, leaf_idx: usize, value: f64) {
        if let Node::Leaf { value: v } = &mut self.nodes[leaf_idx] {
            *v = value;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Exhaustive threshold scan (CART).
    Best,
    /// One uniform-random threshold per candidate feature (extra trees).
    Random,
}

#[derive(Debug, Clone)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub split_mode: SplitMode,
    /// Number of candidate features per node; None = all.
    pub feature_subsample: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 10,
            min_leaf: 1,
            split_mode: SplitMode::Best,
            feature_subsample: None,
        }
    }
}

struct Builder<'a> {
    x: &'a Mat,
    targets: &'a [f64],
    weights: &'a [f64],
    cfg: &'a TreeConfig,
    nodes: Vec<Node>,
}

/// Weighted sum of squared deviations from the weighted mean, computed from
/// sufficient statistics. Serves both criteria: for 0/1 targets minimizing
/// SSE is equivalent to minimizing weighted Gini impurity.
fn impurity(sum_w: f64, sum_wy: f64, sum_wyy: f64) -> f64 {
    if sum_w <= 0.0 {
        return 0.0;
    }
    sum_wyy - sum_wy * sum_wy / sum_w
}

impl<'a> Builder<'a> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let mut sw = 0.0;
        let mut swy = 0.0;
        for &i in idx {
            sw += self.weights[i];
            swy += self.weights[i] * self.targets[i];
        }
        if sw > 0.0 {
            swy / sw
        } else {
            0.0
        }
    }

    fn best_split_on_feature(
        &self,
        idx: &[usize],
        feature: usize,
        mode: SplitMode,
        rng: &mut ChaCha8Rng,
    ) -> Option<(f64, f64)> {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| {
            self.x
                .at(a, feature)
                .partial_cmp(&self.x.at(b, feature))
                .unwrap()
                .then(a.cmp(&b))
        });
        let lo = self.x.at(order[0], feature);
        let hi = self.x.at(*order.last().unwrap(), feature);
        if lo == hi {
            return None;
        }

        let mut total_w = 0.0;
        let mut total_wy = 0.0;
        let mut total_wyy = 0.0;
        for &i in &order {
            let (w, y) = (self.weights[i], self.targets[i]);
            total_w += w;
            total_wy += w * y;
            total_wyy += w * y * y;
        }

        match mode {
            SplitMode::Best => {
                let mut best: Option<(f64, f64)> = None;
                let mut lw = 0.0;
                let mut lwy = 0.0;
                let mut lwyy = 0.0;
                for k in 0..order.len() - 1 {
                    let i = order[k];
                    let (w, y) = (self.weights[i], self.targets[i]);
                    lw += w;
                    lwy += w * y;
                    lwyy += w * y * y;
                    let v = self.x.at(i, feature);
                    let v_next = self.x.at(order[k + 1], feature);
                    if v == v_next {
                        continue;
                    }
                    if k + 1 < self.cfg.min_leaf || order.len() - k - 1 < self.cfg.min_leaf {
                        continue;
                    }
                    let score = impurity(lw, lwy, lwyy)
                        + impurity(total_w - lw, total_wy - lwy, total_wyy - lwyy);
                    let threshold = v + (v_next - v) / 2.0;
                    if best.map_or(true, |(s, _)| score < s) {
                        best = Some((score, threshold));
                    }
                }
                best.map(|(s, t)| (s, t))
            }
            SplitMode::Random => {
                let threshold = rng.gen_range(lo..hi);
                let mut lw = 0.0;
                let mut lwy = 0.0;
                let mut lwyy = 0.0;
                let mut n_left = 0usize;
                for &i in &order {
                    if self.x.at(i, feature) <= threshold {
                        let (w, y) = (self.weights[i], self.targets[i]);
                        lw += w;
                        lwy += w * y;
                        lwyy += w * y * y;
                        n_left += 1;
                    }
                }
                if n_left < self.cfg.min_leaf || order.len() - n_left < self.cfg.min_leaf {
                    return None;
                }
                let score = impurity(lw, lwy, lwyy)
                    + impurity(total_w - lw, total_wy - lwy, total_wyy - lwyy);
                Some((score, threshold))
            }
        }
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let make_leaf = |b: &mut Builder, idx: &[usize]| {
            b.nodes.push(Node::Leaf { value: b.leaf_value(idx) });
            b.nodes.len() - 1
        };
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_leaf.max(1) {
            return make_leaf(self, &idx);
        }
        // Pure node: nothing to split.
        let first = self.targets[idx[0]];
        if idx.iter().all(|&i| self.targets[i] == first) {
            return make_leaf(self, &idx);
        }

        let d = self.x.cols;
        let candidates: Vec<usize> = match self.cfg.feature_subsample {
            Some(m) if m < d => {
                let mut features: Vec<usize> = (0..d).collect();
                features.shuffle(rng);
                features.truncate(m);
                features.sort_unstable();
                features
            }
            _ => (0..d).collect(),
        };

        let mut best: Option<(f64, usize, f64)> = None;
        for &feature in &candidates {
            if let Some((score, threshold)) =
                self.best_split_on_feature(&idx, feature, self.cfg.split_mode, rng)
            {
                if best.map_or(true, |(s, _, _)| score < s) {
                    best = Some((score, feature, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return make_leaf(self, &idx);
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x.at(i, feature) <= threshold);
        if left_idx.is_empty() || right_idx.is_empty() {
            return make_leaf(self, &idx);
        }

        let node_pos = self.nodes.len();
        self.nodes.push(Node::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let left = self.build(left_idx, depth + 1, rng);
        let right = self.build(right_idx, depth + 1, rng);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[node_pos] {
            *l = left;
            *r = right;
        }
        node_pos
    }
}

/// Grow a tree on the rows in `idx`. Targets are 0/1 for classification
/// (leaves hold the positive fraction) or residuals for regression (leaves
/// hold the mean).
pub fn build_tree(
    x: &Mat,
    targets: &[f64],
    weights: Option<&[f64]>,
    idx: &[usize],
    cfg: &TreeConfig,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let uniform = vec![1.0; targets.len()];
    let weights = weights.unwrap_or(&uniform);
    let mut builder = Builder {
        x,
        targets,
        weights,
        cfg,
        nodes: Vec::new(),
    };
    builder.build(idx.to_vec(), 0, rng);
    Tree { nodes: builder.nodes }
}
