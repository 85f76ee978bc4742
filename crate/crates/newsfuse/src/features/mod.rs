//! Metadata feature engineering and text normalization.
//!
//! The meta feature vector has a fixed 13-column layout: engagement counts
//! (likes, comments, shares), the 7 date-time fields, the user reliability
//! score, and the two image statistics. Columns are z-scored with statistics
//! fit on the training split only; the fitted artifact carries those
//! statistics plus the ids of the rows that produced them so leakage checks
//! can walk provenance.

pub mod images;
pub mod text_norm;
pub mod time;
pub mod user_score;

pub use images::{compute_image_features, ImageResolver, NullResolver, UriDimensionResolver};
pub use text_norm::{normalize_text, NormalizedText, PATTERN_SET_VERSION};
pub use time::{decode_timestamp, TimeFeatures};
pub use user_score::UserScoreTable;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::CleanRecord;
use crate::error::{Error, Result};
use crate::nn::Mat;

/// Fixed meta-feature dimensionality.
pub const D_META: usize = 13;

/// Column names, in matrix order.
pub const META_COLUMNS: [&str; D_META] = [
    "likes",
    "comments",
    "shares",
    "minute",
    "hour",
    "day",
    "month",
    "year",
    "weekday",
    "is_weekend",
    "user_score",
    "image_count",
    "image_aspect_mean",
];

/// Per-column z-score statistics fit on the training split. Zero-variance
/// columns are flagged (std = 0) and standardize to all zeros.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Ids of the rows the statistics were computed from (leakage audits).
    pub source_row_ids: BTreeSet<String>,
}

impl Standardizer {
    pub fn fit(matrix: &Mat, source_row_ids: BTreeSet<String>) -> Self {
        let n = matrix.rows.max(1) as f64;
        let mut means = vec![0.0; matrix.cols];
        let mut stds = vec![0.0; matrix.cols];
        for c in 0..matrix.cols {
            let mut sum = 0.0;
            for r in 0..matrix.rows {
                sum += matrix.at(r, c);
            }
            means[c] = sum / n;
            let mut sq = 0.0;
            for r in 0..matrix.rows {
                let d = matrix.at(r, c) - means[c];
                sq += d * d;
            }
            let std = (sq / n).sqrt();
            // Constant columns can pick up ~1e-16 variance from accumulation
            // error; flag them as zero-variance rather than dividing by it.
            stds[c] = if std <= 1e-12 * (1.0 + means[c].abs()) {
                0.0
            } else {
                std
            };
        }
        Standardizer {
            means,
            stds,
            source_row_ids,
        }
    }

    pub fn transform(&self, matrix: &Mat) -> Result<Mat> {
        if matrix.cols != self.means.len() {
            return Err(Error::dim("Standardizer::transform", self.means.len(), matrix.cols));
        }
        let mut out = matrix.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                let v = if self.stds[c] == 0.0 {
                    0.0
                } else {
                    (out.at(r, c) - self.means[c]) / self.stds[c]
                };
                *out.at_mut(r, c) = v;
            }
        }
        Ok(out)
    }
}

/// One record's raw (pre-standardization) feature row.
fn raw_feature_row(record: &CleanRecord, user_score: f64, resolver: &dyn ImageResolver) -> Result<[f64; D_META]> {
    let time = decode_timestamp(record.timestamp)?;
    let t = time.as_values();
    let (image_count, aspect) = compute_image_features(&record.image_refs, resolver);
    Ok([
        record.likes as f64,
        record.comments as f64,
        record.shares as f64,
        t[0],
        t[1],
        t[2],
        t[3],
        t[4],
        t[5],
        t[6],
        user_score,
        image_count as f64,
        aspect,
    ])
}

fn raw_matrix(
    records: &[CleanRecord],
    table: &UserScoreTable,
    resolver: &dyn ImageResolver,
    leave_one_out: bool,
) -> Result<Mat> {
    let mut out = Mat::zeros(records.len(), D_META);
    for (i, r) in records.iter().enumerate() {
        let score = if leave_one_out && table.source_row_ids.contains(&r.id) {
            let label = r.label.ok_or_else(|| {
                Error::Data(format!("record {} needs a label for leave-one-out scoring", r.id))
            })?;
            table.score_training_row(&r.user_id, label)
        } else {
            table.score_new(&r.user_id)
        };
        let row = raw_feature_row(r, score, resolver)?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

/// Fitted meta featurizer: user score table + standardization statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaFeaturizer {
    pub user_table: UserScoreTable,
    pub standardizer: Standardizer,
}

/// Fit on the training split and return its standardized matrix plus the
/// fitted artifact. Training rows get leave-one-out user scores.
pub fn build_meta_matrix(
    train: &[CleanRecord],
    resolver: &dyn ImageResolver,
) -> Result<(Mat, MetaFeaturizer)> {
    let table = UserScoreTable::from_training(train)?;
    let raw = raw_matrix(train, &table, resolver, true)?;
    let ids: BTreeSet<String> = train.iter().map(|r| r.id.clone()).collect();
    let standardizer = Standardizer::fit(&raw, ids);
    let matrix = standardizer.transform(&raw)?;
    debug_assert!(matrix.all_finite());
    Ok((
        matrix,
        MetaFeaturizer {
            user_table: table,
            standardizer,
        },
    ))
}

impl MetaFeaturizer {
    /// Standardized features for new (held-out or unlabeled) records.
    pub fn transform(&self, records: &[CleanRecord], resolver: &dyn ImageResolver) -> Result<Mat> {
        let raw = raw_matrix(records, &self.user_table, resolver, false)?;
        self.standardizer.transform(&raw)
    }

    /// Standardized features for the training rows themselves (leave-one-out
    /// user scores, matching what `build_meta_matrix` produced).
    pub fn transform_training(
        &self,
        records: &[CleanRecord],
        resolver: &dyn ImageResolver,
    ) -> Result<Mat> {
        let raw = raw_matrix(records, &self.user_table, resolver, true)?;
        self.standardizer.transform(&raw)
    }
}

/// Persist a feature matrix as CSV with a JSON sidecar naming columns and the
/// standardization statistics.
pub fn save_meta_matrix(
    matrix_path: &std::path::Path,
    sidecar_path: &std::path::Path,
    matrix: &Mat,
    standardizer: &Standardizer,
) -> Result<()> {
    let mut w = csv::Writer::from_path(matrix_path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record(META_COLUMNS).map_err(|e| Error::Data(e.to_string()))?;
    for r in 0..matrix.rows {
        let row: Vec<String> = matrix.row(r).iter().map(|v| format!("{v}")).collect();
        w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(matrix_path, e))?;

    let sidecar = serde_json::json!({
        "columns": META_COLUMNS,
        "means": standardizer.means,
        "stds": standardizer.stds,
        "n_source_rows": standardizer.source_row_ids.len(),
        "pattern_set_version": PATTERN_SET_VERSION,
    });
    std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar).expect("sidecar"))
        .map_err(|e| Error::io(sidecar_path, e))
}
