//! Leakage-free k-fold cross validation over clean records.
//!
//! Each fold's pipeline fits its own feature artifacts (user-score table,
//! standardization statistics) on the training folds only and returns their
//! provenance so tests can prove no held-out row was touched.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_folds, CleanRecord};
use crate::error::Result;
use crate::evaluation::{roc_auc, ScoredPredictions};

/// Row-id provenance of the fitted per-fold artifacts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FoldArtifacts {
    pub user_table_sources: BTreeSet<String>,
    pub standardizer_sources: BTreeSet<String>,
}

/// Fits on training records, scores validation records. `seed` varies per
/// fold for seeded components.
pub trait FoldPipeline: Sync {
    fn name(&self) -> String;
    fn fit_score(
        &self,
        train: &[CleanRecord],
        valid: &[CleanRecord],
        seed: u64,
    ) -> Result<(Vec<f64>, FoldArtifacts)>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub auc: Option<f64>,
    /// True when the fold was skipped (single-class validation split).
    pub skipped: bool,
    pub n_valid: usize,
    pub valid_ids: BTreeSet<String>,
    pub artifacts: FoldArtifacts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub pipeline: String,
    pub k: usize,
    pub seed: u64,
    pub per_fold: Vec<FoldResult>,
    pub mean_auc: f64,
    pub std_auc: f64,
}

impl CvReport {
    /// No per-fold artifact may have read a held-out row.
    pub fn leakage_free(&self) -> bool {
        self.per_fold.iter().all(|f| {
            f.artifacts
                .user_table_sources
                .is_disjoint(&f.valid_ids)
                && f.artifacts.standardizer_sources.is_disjoint(&f.valid_ids)
        })
    }
}

/// Stratified k-fold evaluation of `pipeline` on a labeled corpus.
pub fn cross_validate(
    pipeline: &dyn FoldPipeline,
    corpus: &[CleanRecord],
    k: usize,
    seed: u64,
) -> Result<CvReport> {
    let plan = make_folds(corpus, k, seed)?;
    let per_fold: Vec<Result<FoldResult>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train_idx, valid_idx) = plan.fold_indices(fold);
            let train: Vec<CleanRecord> = train_idx.iter().map(|&i| corpus[i].clone()).collect();
            let valid: Vec<CleanRecord> = valid_idx.iter().map(|&i| corpus[i].clone()).collect();
            let valid_ids: BTreeSet<String> = valid.iter().map(|r| r.id.clone()).collect();
            let labels: Vec<u8> = valid.iter().filter_map(|r| r.label).collect();
            let single_class =
                labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1);
            if single_class {
                return Ok(FoldResult {
                    fold,
                    auc: None,
                    skipped: true,
                    n_valid: valid.len(),
                    valid_ids,
                    artifacts: FoldArtifacts::default(),
                });
            }
            let (scores, artifacts) =
                pipeline.fit_score(&train, &valid, seed.wrapping_add(fold as u64))?;
            let auc = roc_auc(&ScoredPredictions::new(scores, labels)?)?;
            Ok(FoldResult {
                fold,
                auc: Some(auc),
                skipped: false,
                n_valid: valid.len(),
                valid_ids,
                artifacts,
            })
        })
        .collect();
    let per_fold: Vec<FoldResult> = per_fold.into_iter().collect::<Result<_>>()?;

    let aucs: Vec<f64> = per_fold.iter().filter_map(|f| f.auc).collect();
    let mean = if aucs.is_empty() {
        f64::NAN
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    };
    let std = if aucs.len() < 2 {
        0.0
    } else {
        (aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / aucs.len() as f64).sqrt()
    };
    Ok(CvReport {
        pipeline: pipeline.name(),
        k,
        seed,
        per_fold,
        mean_auc: mean,
        std_auc: std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct LabelOracle;
    impl FoldPipeline for LabelOracle {
        fn name(&self) -> String {
            "label-oracle".into()
        }
        fn fit_score(
            &self,
            _train: &[CleanRecord],
            valid: &[CleanRecord],
            _seed: u64,
        ) -> Result<(Vec<f64>, FoldArtifacts)> {
            Ok((
                valid.iter().map(|r| f64::from(r.label.unwrap())).collect(),
                FoldArtifacts::default(),
            ))
        }
    }

    struct ConstantScorer;
    impl FoldPipeline for ConstantScorer {
        fn name(&self) -> String {
            "constant".into()
        }
        fn fit_score(
            &self,
            _train: &[CleanRecord],
            valid: &[CleanRecord],
            _seed: u64,
        ) -> Result<(Vec<f64>, FoldArtifacts)> {
            Ok((vec![0.25; valid.len()], FoldArtifacts::default()))
        }
    }

    fn corpus(n: usize) -> Vec<CleanRecord> {
        (0..n)
            .map(|i| CleanRecord {
                id: format!("r{i}"),
                user_id: format!("u{}", i % 9),
                text: String::new(),
                timestamp: 1_600_000_000,
                likes: i as u64,
                comments: 0,
                shares: 0,
                image_refs: Vec::new(),
                label: Some((i % 3 == 0) as u8),
            })
            .collect()
    }

    #[test]
    fn label_oracle_scores_one_everywhere() {
        let report = cross_validate(&LabelOracle, &corpus(60), 5, 3).unwrap();
        for fold in &report.per_fold {
            assert_eq!(fold.auc, Some(1.0));
        }
        assert_eq!(report.mean_auc, 1.0);
        assert_eq!(report.std_auc, 0.0);
    }

    #[test]
    fn constant_scorer_sits_at_half() {
        let report = cross_validate(&ConstantScorer, &corpus(60), 5, 3).unwrap();
        for fold in &report.per_fold {
            assert_eq!(fold.auc, Some(0.5));
        }
    }

    #[test]
    fn empty_artifacts_are_leakage_free() {
        let report = cross_validate(&LabelOracle, &corpus(40), 4, 0).unwrap();
        assert!(report.leakage_free());
    }
}
