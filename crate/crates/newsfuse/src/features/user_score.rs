use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::CleanRecord;
use crate::error::{Error, Result};

/// Laplace smoothing pseudo-count for the reliability ratio.
pub const SMOOTHING_ALPHA: f64 = 1.0;

/// Per-user reliability counts built from training rows only.
///
/// score = (reliable_count + alpha) / (total_count + 2 alpha); an unseen user
/// gets the prior 0.5. When scoring a row that itself contributed to the
/// table, its own label is excluded (leave-one-out) so the feature never
/// carries the row's own target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserScoreTable {
    counts: BTreeMap<String, (u64, u64)>,
    /// Ids of the records the table was built from (leakage audits).
    pub source_row_ids: BTreeSet<String>,
}

impl UserScoreTable {
    /// Build from labeled training rows.
    pub fn from_training(records: &[CleanRecord]) -> Result<Self> {
        let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        let mut source_row_ids = BTreeSet::new();
        for r in records {
            let label = r.label.ok_or_else(|| {
                Error::Data(format!("record {} is unlabeled; user scores need labels", r.id))
            })?;
            let entry = counts.entry(r.user_id.clone()).or_insert((0, 0));
            if label == 0 {
                entry.0 += 1;
            }
            entry.1 += 1;
            source_row_ids.insert(r.id.clone());
        }
        Ok(UserScoreTable {
            counts,
            source_row_ids,
        })
    }

    fn smoothed(reliable: f64, total: f64) -> f64 {
        (reliable + SMOOTHING_ALPHA) / (total + 2.0 * SMOOTHING_ALPHA)
    }

    /// Score for a new post by `user_id` (full counts).
    pub fn score_new(&self, user_id: &str) -> f64 {
        match self.counts.get(user_id) {
            Some(&(reliable, total)) => Self::smoothed(reliable as f64, total as f64),
            None => 0.5,
        }
    }

    /// Leave-one-out score for a training row: the row's own label is removed
    /// from its user's counts before smoothing.
    pub fn score_training_row(&self, user_id: &str, own_label: u8) -> f64 {
        match self.counts.get(user_id) {
            Some(&(reliable, total)) => {
                let reliable = reliable as f64 - if own_label == 0 { 1.0 } else { 0.0 };
                let total = total as f64 - 1.0;
                Self::smoothed(reliable.max(0.0), total.max(0.0))
            }
            None => 0.5,
        }
    }

    pub fn n_users(&self) -> usize {
        self.counts.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Data(format!("user score table: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, user: &str, label: u8) -> CleanRecord {
        CleanRecord {
            id: id.into(),
            user_id: user.into(),
            text: String::new(),
            timestamp: 0,
            likes: 0,
            comments: 0,
            shares: 0,
            image_refs: Vec::new(),
            label: Some(label),
        }
    }

    #[test]
    fn unseen_user_gets_prior() {
        let table = UserScoreTable::from_training(&[record("a", "u1", 0)]).unwrap();
        assert_eq!(table.score_new("nobody"), 0.5);
    }

    #[test]
    fn smoothed_ratio_for_new_post() {
        // 3 reliable + 1 unreliable -> (3+1)/(4+2).
        let rows = vec![
            record("a", "u1", 0),
            record("b", "u1", 0),
            record("c", "u1", 0),
            record("d", "u1", 1),
        ];
        let table = UserScoreTable::from_training(&rows).unwrap();
        assert!((table.score_new("u1") - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn balanced_user_is_exactly_half() {
        let rows = vec![
            record("a", "u1", 0),
            record("b", "u1", 1),
            record("c", "u1", 0),
            record("d", "u1", 1),
        ];
        let table = UserScoreTable::from_training(&rows).unwrap();
        assert_eq!(table.score_new("u1"), 0.5);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let rows: Vec<CleanRecord> = (0..50)
            .map(|i| record(&format!("r{i}"), &format!("u{}", i % 7), (i % 2) as u8))
            .collect();
        let table = UserScoreTable::from_training(&rows).unwrap();
        for i in 0..7 {
            let s = table.score_new(&format!("u{i}"));
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn leave_one_out_excludes_own_label() {
        let rows = vec![record("a", "u1", 0), record("b", "u1", 1)];
        let table = UserScoreTable::from_training(&rows).unwrap();
        // Row "a" (label 0): counts minus itself = (0 reliable, 1 total).
        assert!((table.score_training_row("u1", 0) - 1.0 / 3.0).abs() < 1e-12);
        // Row "b" (label 1): counts minus itself = (1 reliable, 1 total).
        assert!((table.score_training_row("u1", 1) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn flipping_a_label_leaves_that_rows_loo_score_unchanged() {
        let rows = vec![
            record("a", "u1", 0),
            record("b", "u1", 1),
            record("c", "u1", 0),
        ];
        let table = UserScoreTable::from_training(&rows).unwrap();
        let score_a_before = table.score_training_row("u1", rows[0].label.unwrap());

        let mut flipped = rows.clone();
        flipped[0].label = Some(1);
        let table2 = UserScoreTable::from_training(&flipped).unwrap();
        let score_a_after = table2.score_training_row("u1", flipped[0].label.unwrap());
        assert!((score_a_before - score_a_after).abs() < 1e-15);

        // Sibling rows of the same user do move.
        let score_b_before = table.score_training_row("u1", 1);
        let score_b_after = table2.score_training_row("u1", 1);
        assert!((score_b_before - score_b_after).abs() > 1e-9);
    }

    #[test]
    fn source_ids_record_provenance() {
        let rows = vec![record("a", "u1", 0), record("b", "u2", 1)];
        let table = UserScoreTable::from_training(&rows).unwrap();
        assert!(table.source_row_ids.contains("a"));
        assert!(table.source_row_ids.contains("b"));
        assert_eq!(table.source_row_ids.len(), 2);
    }

    #[test]
    fn json_roundtrip() {
        let rows = vec![record("a", "u1", 0)];
        let table = UserScoreTable::from_training(&rows).unwrap();
        let back = UserScoreTable::from_json(&table.to_json()).unwrap();
        assert_eq!(back.score_new("u1"), table.score_new("u1"));
    }
}
