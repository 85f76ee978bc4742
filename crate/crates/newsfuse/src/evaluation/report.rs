use serde::{Deserialize, Serialize};

use super::{auc_pairwise_oracle, roc_auc, tie_count, ScoredPredictions};
use crate::error::Result;

/// Metrics for one named prediction set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub tie_count: usize,
    /// Hash of the run configuration that produced the scores, so rows in a
    /// comparison table are traceable to their settings.
    pub config_fingerprint: String,
    /// Published benchmark score for the same setting, when one exists.
    pub reference_auc: Option<f64>,
}

impl MetricsReport {
    pub fn from_predictions(
        name: impl Into<String>,
        p: &ScoredPredictions,
        config_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        Ok(MetricsReport {
            name: name.into(),
            auc: roc_auc(p)?,
            n_pos: p.n_pos(),
            n_neg: p.n_neg(),
            tie_count: tie_count(p),
            config_fingerprint: config_fingerprint.into(),
            reference_auc: None,
        })
    }

    pub fn with_reference(mut self, reference: Option<f64>) -> Self {
        self.reference_auc = reference;
        self
    }

    /// Cross-check the headline AUC against the pairwise oracle.
    pub fn audited(p: &ScoredPredictions) -> Result<(f64, f64)> {
        Ok((roc_auc(p)?, auc_pairwise_oracle(p)?))
    }
}

/// A comparison table over named result sets, sorted by AUC descending.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<MetricsReport>,
}

impl ReportTable {
    pub fn new(mut rows: Vec<MetricsReport>) -> Self {
        rows.sort_by(|a, b| b.auc.partial_cmp(&a.auc).expect("AUC is finite"));
        ReportTable { rows }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = format!(
            "{:<name_w$}  {:>8}  {:>6}  {:>6}  {:>6}  {:>9}  config\n",
            "name", "auc", "n_pos", "n_neg", "ties", "reference",
        );
        for r in &self.rows {
            let reference = r
                .reference_auc
                .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!(
                "{:<name_w$}  {:>8.6}  {:>6}  {:>6}  {:>6}  {:>9}  {}\n",
                r.name, r.auc, r.n_pos, r.n_neg, r.tie_count, reference, r.config_fingerprint,
            ));
        }
        out
    }
}

/// Deterministic fingerprint for a serialized configuration.
pub fn fingerprint(config_json: &str) -> String {
    // FNV-1a, enough to tell two configs apart in a table.
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in config_json.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    format!("{hash:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sorted_by_auc_descending() {
        let a = ScoredPredictions::new(vec![0.9, 0.1], vec![1, 0]).unwrap();
        let b = ScoredPredictions::new(vec![0.4, 0.6], vec![1, 0]).unwrap();
        let table = ReportTable::new(vec![
            MetricsReport::from_predictions("weak", &b, "cfgA").unwrap(),
            MetricsReport::from_predictions("strong", &a, "cfgB").unwrap(),
        ]);
        assert_eq!(table.rows[0].name, "strong");
        assert_eq!(table.rows[1].name, "weak");
        let text = table.to_text();
        assert!(text.contains("strong"));
    }

    #[test]
    fn fingerprint_distinguishes_configs() {
        assert_ne!(fingerprint("{\"a\":1}"), fingerprint("{\"a\":2}"));
        assert_eq!(fingerprint("x"), fingerprint("x"));
    }
}
