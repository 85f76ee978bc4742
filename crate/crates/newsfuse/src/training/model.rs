//! The trainable-model contract shared by the meta MLP, the text model, and
//! the fused model.

use crate::error::{Error, Result};
use crate::nn::{GradMap, Mat, ParamSet};

use super::loss::SmoothingLossConfig;

/// Featurized inputs for training or scoring. Models read the channels they
/// use; a missing required channel is an error.
#[derive(Debug, Clone, Default)]
pub struct ModelBatch {
    /// Tokenized, truncated text per row.
    pub token_ids: Option<Vec<Vec<u32>>>,
    /// Standardized meta features, one row per record.
    pub meta: Option<Mat>,
    pub labels: Option<Vec<u8>>,
    /// Record ids for diagnostics (may be empty).
    pub ids: Vec<String>,
}

impl ModelBatch {
    pub fn len(&self) -> usize {
        if let Some(t) = &self.token_ids {
            return t.len();
        }
        if let Some(m) = &self.meta {
            return m.rows;
        }
        0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels_required(&self) -> Result<&[u8]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Data("batch has no labels".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if let (Some(t), Some(m)) = (&self.token_ids, &self.meta) {
            if t.len() != m.rows {
                return Err(Error::dim("ModelBatch text/meta rows", t.len(), m.rows));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::dim("ModelBatch labels", n, l.len()));
            }
        }
        Ok(())
    }

    pub fn id_of(&self, row: usize) -> String {
        self.ids
            .get(row)
            .cloned()
            .unwrap_or_else(|| format!("row{row}"))
    }
}

/// A differentiable classifier with named parameters organized in
/// depth-ordered groups (head first, backbone blocks top-down, embeddings
/// last).
pub trait NeuralModel: Send + Sync {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Group names, head first, in unfreezing order.
    fn group_order(&self) -> Vec<String>;

    /// Depth group of one parameter.
    fn group_of(&self, param_name: &str) -> Result<String>;

    /// Mean loss over `rows` of `data` plus mean gradients. `dropout_seed`
    /// Some = training mode with seeded dropout; None = deterministic
    /// inference-mode forward (used by gradient checks).
    fn loss_and_grads(
        &self,
        data: &ModelBatch,
        rows: &[usize],
        loss: &SmoothingLossConfig,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, GradMap)>;

    /// Per-row probability of the unreliable class, inference mode.
    fn scores(&self, data: &ModelBatch) -> Result<Vec<f64>>;
}
