//! Stacking and blending over the base-learner zoo.
//!
//! Stacking trains the logistic-regression meta-model strictly on
//! out-of-fold base scores, then refits the bases on all rows for inference.
//! Blending fits the bases on the complement of a stratified holdout and the
//! meta-model on holdout base scores. Both keep provenance so tests can walk
//! the no-leakage protocol row by row.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linear::LogisticRegression;
use super::{train_base, BaseLearnerSpec, LearnerKind, TabularModel};
use crate::dataset::fold_assignments;
use crate::error::{Error, Result};
use crate::nn::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    Stacking,
    Blending,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub mode: EnsembleMode,
    pub base: Vec<BaseLearnerSpec>,
    pub stacking_folds: usize,
    pub blending_holdout_fraction: f64,
    /// Ridge on the meta logistic regression. Kept tiny so duplicate base
    /// columns stay equivalent to a single column.
    pub meta_ridge: f64,
    pub seed: u64,
}

impl EnsembleConfig {
    /// Default ensemble: the strong tree-based learners under stacking.
    pub fn default_stack(seed: u64) -> Self {
        EnsembleConfig {
            mode: EnsembleMode::Stacking,
            base: [
                LearnerKind::GradientBoosting,
                LearnerKind::RandomForest,
                LearnerKind::AdaBoost,
                LearnerKind::ExtraTrees,
            ]
            .iter()
            .map(|&kind| BaseLearnerSpec::with_defaults(kind, seed))
            .collect(),
            stacking_folds: 5,
            blending_holdout_fraction: 0.2,
            meta_ridge: 1e-10,
            seed,
        }
    }

    pub fn default_blend(seed: u64) -> Self {
        EnsembleConfig {
            mode: EnsembleMode::Blending,
            ..EnsembleConfig::default_stack(seed)
        }
    }
}

fn fit_meta(scores: &Mat, y: &[u8], ridge: f64) -> Result<LogisticRegression> {
    LogisticRegression::fit(scores, y, ridge, 200, 1e-12)
}

fn base_scores(models: &[Box<dyn TabularModel>], x: &Mat) -> Result<Mat> {
    let mut out = Mat::zeros(x.rows, models.len());
    for (b, model) in models.iter().enumerate() {
        for (r, s) in model.predict_proba(x)?.into_iter().enumerate() {
            *out.at_mut(r, b) = s;
        }
    }
    Ok(out)
}

/// Which rows each fold model trained on, and which fold model produced each
/// row's out-of-fold meta-feature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackingProvenance {
    pub fold_of_row: Vec<usize>,
    pub fold_train_rows: Vec<BTreeSet<usize>>,
}

impl StackingProvenance {
    /// True iff no row's meta-feature came from a model trained on it.
    pub fn out_of_fold_everywhere(&self) -> bool {
        self.fold_of_row
            .iter()
            .enumerate()
            .all(|(row, &fold)| !self.fold_train_rows[fold].contains(&row))
    }
}

pub struct StackedModel {
    bases: Vec<Box<dyn TabularModel>>,
    meta: LogisticRegression,
    pub provenance: StackingProvenance,
    pub oof_scores: Mat,
}

impl StackedModel {
    pub fn predict_proba(&self, x: &Mat) -> Result<Vec<f64>> {
        let scores = base_scores(&self.bases, x)?;
        Ok(self.meta.predict_proba_rows(&scores))
    }
}

pub fn train_stacking(cfg: &EnsembleConfig, x: &Mat, y: &[u8]) -> Result<StackedModel> {
    if cfg.mode != EnsembleMode::Stacking {
        return Err(Error::Config("config mode is not stacking".into()));
    }
    if cfg.base.is_empty() {
        return Err(Error::Config("stacking needs at least one base learner".into()));
    }
    let n = x.rows;
    let k = cfg.stacking_folds;
    if n < k {
        return Err(Error::Config(format!(
            "{n} rows cannot be split into {k} stacking folds"
        )));
    }

    let fold_of_row = fold_assignments(y, k, cfg.seed, true);
    let mut fold_train_rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for (row, &fold) in fold_of_row.iter().enumerate() {
        for (f, set) in fold_train_rows.iter_mut().enumerate() {
            if f != fold {
                set.insert(row);
            }
        }
    }

    // One model per (fold, base): train on the fold's complement, score the
    // fold. Jobs are independent, so they parallelize freely.
    let jobs: Vec<(usize, usize)> = (0..k)
        .flat_map(|f| (0..cfg.base.len()).map(move |b| (f, b)))
        .collect();
    let oof_parts: Vec<Result<(usize, usize, Vec<usize>, Vec<f64>)>> = jobs
        .par_iter()
        .map(|&(fold, b)| {
            let train_rows: Vec<usize> = (0..n).filter(|&r| fold_of_row[r] != fold).collect();
            let valid_rows: Vec<usize> = (0..n).filter(|&r| fold_of_row[r] == fold).collect();
            let (xt, yt) = take_rows(x, y, &train_rows);
            let model = train_base(&cfg.base[b], &xt, &yt)?;
            let (xv, _) = take_rows(x, y, &valid_rows);
            let scores = model.predict_proba(&xv)?;
            Ok((fold, b, valid_rows, scores))
        })
        .collect();

    let mut oof = Mat::zeros(n, cfg.base.len());
    for part in oof_parts {
        let (_, b, rows, scores) = part?;
        for (row, score) in rows.into_iter().zip(scores) {
            *oof.at_mut(row, b) = score;
        }
    }

    let meta = fit_meta(&oof, y, cfg.meta_ridge)?;
    let bases: Vec<Result<Box<dyn TabularModel>>> = cfg
        .base
        .par_iter()
        .map(|spec| train_base(spec, x, y))
        .collect();
    let bases: Vec<Box<dyn TabularModel>> = bases.into_iter().collect::<Result<_>>()?;

    Ok(StackedModel {
        bases,
        meta,
        provenance: StackingProvenance {
            fold_of_row,
            fold_train_rows,
        },
        oof_scores: oof,
    })
}

pub struct BlendedModel {
    bases: Vec<Box<dyn TabularModel>>,
    meta: LogisticRegression,
    pub holdout_rows: BTreeSet<usize>,
    pub base_train_rows: BTreeSet<usize>,
}

impl BlendedModel {
    pub fn predict_proba(&self, x: &Mat) -> Result<Vec<f64>> {
        let scores = base_scores(&self.bases, x)?;
        Ok(self.meta.predict_proba_rows(&scores))
    }
}

/// Stratified holdout of round(frac * n) rows, proportional per class via
/// largest remainder.
fn stratified_holdout(y: &[u8], frac: f64, seed: u64) -> Vec<usize> {
    let n = y.len();
    let target = ((frac * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, &l) in y.iter().enumerate() {
        per_class[usize::from(l)].push(i);
    }
    for class in &mut per_class {
        class.shuffle(&mut rng);
    }
    let mut take: Vec<usize> = per_class
        .iter()
        .map(|c| ((frac * c.len() as f64).floor() as usize).min(c.len()))
        .collect();
    let mut remainders: Vec<(f64, usize)> = per_class
        .iter()
        .enumerate()
        .map(|(c, rows)| (frac * rows.len() as f64 - take[c] as f64, c))
        .collect();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut assigned: usize = take.iter().sum();
    for &(_, c) in &remainders {
        if assigned >= target {
            break;
        }
        if take[c] < per_class[c].len() {
            take[c] += 1;
            assigned += 1;
        }
    }
    let mut holdout: Vec<usize> = per_class
        .iter()
        .zip(&take)
        .flat_map(|(rows, &t)| rows[..t].iter().copied())
        .collect();
    holdout.sort_unstable();
    holdout
}

pub fn train_blending(cfg: &EnsembleConfig, x: &Mat, y: &[u8]) -> Result<BlendedModel> {
    if cfg.mode != EnsembleMode::Blending {
        return Err(Error::Config("config mode is not blending".into()));
    }
    if cfg.base.is_empty() {
        return Err(Error::Config("blending needs at least one base learner".into()));
    }
    let n = x.rows;

    // Stratified split; retry with a derived seed if the holdout ends up
    // single-class, then give up.
    let mut holdout = Vec::new();
    let mut ok = false;
    for attempt in 0..3u64 {
        holdout = stratified_holdout(y, cfg.blending_holdout_fraction, cfg.seed + attempt);
        let classes: BTreeSet<u8> = holdout.iter().map(|&i| y[i]).collect();
        if classes.len() == 2 {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::model(
            "blending",
            "holdout is single-class after stratification retries",
        ));
    }

    let holdout_set: BTreeSet<usize> = holdout.iter().copied().collect();
    let train_rows: Vec<usize> = (0..n).filter(|r| !holdout_set.contains(r)).collect();
    let (xt, yt) = take_rows(x, y, &train_rows);
    let bases: Vec<Result<Box<dyn TabularModel>>> = cfg
        .base
        .par_iter()
        .map(|spec| train_base(spec, &xt, &yt))
        .collect();
    let bases: Vec<Box<dyn TabularModel>> = bases.into_iter().collect::<Result<_>>()?;

    let (xh, yh) = take_rows(x, y, &holdout);
    let holdout_scores = base_scores(&bases, &xh)?;
    let meta = fit_meta(&holdout_scores, &yh, cfg.meta_ridge)?;

    Ok(BlendedModel {
        bases,
        meta,
        holdout_rows: holdout_set,
        base_train_rows: train_rows.into_iter().collect(),
    })
}

fn take_rows(x: &Mat, y: &[u8], rows: &[usize]) -> (Mat, Vec<u8>) {
    let mut xm = Mat::zeros(rows.len(), x.cols);
    let mut ym = Vec::with_capacity(rows.len());
    for (i, &r) in rows.iter().enumerate() {
        xm.row_mut(i).copy_from_slice(x.row(r));
        ym.push(y[r]);
    }
    (xm, ym)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{roc_auc, ScoredPredictions};

    /// Noisy 1-D toy set: informative but not separable.
    fn toy(n: usize, seed: u64) -> (Mat, Vec<u8>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let label = rng.gen_range(0..2) as u8;
            let v = rng.gen::<f64>() + if label == 1 { 0.6 } else { 0.0 };
            rows.push(vec![v, rng.gen::<f64>()]);
            y.push(label);
        }
        (Mat::from_rows(&rows), y)
    }

    fn spec(kind: LearnerKind, seed: u64) -> BaseLearnerSpec {
        BaseLearnerSpec::with_defaults(kind, seed)
    }

    #[test]
    fn stacking_is_out_of_fold_for_every_row() {
        let (x, y) = toy(60, 1);
        let cfg = EnsembleConfig {
            base: vec![spec(LearnerKind::DecisionTree, 3), spec(LearnerKind::Knn, 3)],
            ..EnsembleConfig::default_stack(3)
        };
        let model = train_stacking(&cfg, &x, &y).unwrap();
        assert!(model.provenance.out_of_fold_everywhere());
        assert_eq!(model.oof_scores.shape(), (60, 2));
    }

    #[test]
    fn stacking_with_perfect_base_reaches_auc_one() {
        // A base whose OOF scores perfectly rank y: KNN with k=1 on a
        // separable set.
        let x = Mat::from_rows(
            &(0..30)
                .map(|i| vec![if i % 2 == 0 { -1.0 - i as f64 * 0.01 } else { 1.0 + i as f64 * 0.01 }])
                .collect::<Vec<_>>(),
        );
        let y: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
        let mut knn = spec(LearnerKind::Knn, 0);
        knn.params.insert("k".into(), 1.0);
        let cfg = EnsembleConfig {
            base: vec![knn],
            ..EnsembleConfig::default_stack(0)
        };
        let model = train_stacking(&cfg, &x, &y).unwrap();
        let scores = model.predict_proba(&x).unwrap();
        let auc = roc_auc(&ScoredPredictions::new(scores, y).unwrap()).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn duplicate_bases_match_single_base_stacking() {
        let (x, y) = toy(50, 7);
        let single = EnsembleConfig {
            base: vec![spec(LearnerKind::DecisionTree, 5)],
            ..EnsembleConfig::default_stack(11)
        };
        let dup = EnsembleConfig {
            base: vec![spec(LearnerKind::DecisionTree, 5), spec(LearnerKind::DecisionTree, 5)],
            ..EnsembleConfig::default_stack(11)
        };
        let m1 = train_stacking(&single, &x, &y).unwrap();
        let m2 = train_stacking(&dup, &x, &y).unwrap();
        let p1 = m1.predict_proba(&x).unwrap();
        let p2 = m2.predict_proba(&x).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn too_few_rows_for_stacking_is_an_error() {
        let (x, y) = toy(4, 2);
        let cfg = EnsembleConfig {
            base: vec![spec(LearnerKind::DecisionTree, 0)],
            ..EnsembleConfig::default_stack(0)
        };
        assert!(train_stacking(&cfg, &x, &y).is_err());
    }

    #[test]
    fn blending_split_sizes_are_exact() {
        let (x, y) = toy(100, 3);
        let cfg = EnsembleConfig {
            base: vec![spec(LearnerKind::DecisionTree, 1)],
            ..EnsembleConfig::default_blend(9)
        };
        let model = train_blending(&cfg, &x, &y).unwrap();
        assert_eq!(model.holdout_rows.len(), 20);
        assert_eq!(model.base_train_rows.len(), 80);
        assert!(model.holdout_rows.is_disjoint(&model.base_train_rows));
    }

    #[test]
    fn blending_is_deterministic_per_seed() {
        let (x, y) = toy(80, 4);
        let cfg = EnsembleConfig {
            base: vec![spec(LearnerKind::RandomForest, 2)],
            ..EnsembleConfig::default_blend(5)
        };
        let a = train_blending(&cfg, &x, &y).unwrap();
        let b = train_blending(&cfg, &x, &y).unwrap();
        assert_eq!(a.holdout_rows, b.holdout_rows);
        assert_eq!(a.predict_proba(&x).unwrap(), b.predict_proba(&x).unwrap());
    }

    #[test]
    fn blending_perfect_holdout_scores_give_auc_one() {
        let x = Mat::from_rows(
            &(0..40)
                .map(|i| vec![if i % 2 == 0 { -(i as f64) - 1.0 } else { i as f64 + 1.0 }])
                .collect::<Vec<_>>(),
        );
        let y: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let mut knn = spec(LearnerKind::Knn, 0);
        knn.params.insert("k".into(), 1.0);
        let cfg = EnsembleConfig {
            base: vec![knn],
            ..EnsembleConfig::default_blend(1)
        };
        let model = train_blending(&cfg, &x, &y).unwrap();
        let holdout: Vec<usize> = model.holdout_rows.iter().copied().collect();
        let (xh, yh) = take_rows(&x, &y, &holdout);
        let scores = model.predict_proba(&xh).unwrap();
        let auc = roc_auc(&ScoredPredictions::new(scores, yh).unwrap()).unwrap();
        assert_eq!(auc, 1.0);
    }
}
