//! The training loop: seeded shuffling, warmup/decay learning rates,
//! gradual unfreezing, discriminative rates, AdamW, and best-checkpoint
//! selection by validation AUC.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{build_param_groups, AdamW, OptimizerConfig};
use super::loss::SmoothingLossConfig;
use super::model::{ModelBatch, NeuralModel};
use super::schedule::{lr_at, unfreeze_step, DiscriminativeLrMap, UnfreezeSchedule};
use crate::error::{Error, Result};
use crate::evaluation::{roc_auc, ScoredPredictions};
use crate::nn::ParamSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_auc: Option<f64>,
    pub trainable_groups: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
}

impl TrainHistory {
    /// One JSON object per step plus one per epoch, newline separated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch serializes"));
            out.push('\n');
        }
        out
    }
}

/// Train `model` on `data`, validating each epoch on `val` when present.
/// The model ends at the best-validation parameters (or the final ones when
/// no validation set is given).
pub fn train(
    model: &mut dyn NeuralModel,
    data: &ModelBatch,
    val: Option<&ModelBatch>,
    cfg: &OptimizerConfig,
    loss_cfg: &SmoothingLossConfig,
    schedule: &UnfreezeSchedule,
    lr_map: &DiscriminativeLrMap,
) -> Result<TrainHistory> {
    data.validate()?;
    loss_cfg.validate()?;
    let labels = data.labels_required()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Data("empty training data".into()));
    }
    debug_assert_eq!(labels.len(), n);

    let groups = build_param_groups(model, cfg, lr_map)?;
    let mut optimizer = AdamW::new(cfg.weight_decay);
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    if total_steps == 0 {
        return Err(Error::Config("no training steps (epochs = 0?)".into()));
    }

    let mut history = TrainHistory {
        steps: Vec::with_capacity(total_steps),
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        best_val_auc: None,
    };
    let mut best_params: Option<ParamSet> = None;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let trainable = unfreeze_step(schedule, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        indices.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let lr = lr_at((global_step + 1).min(total_steps), total_steps, cfg.max_lr)?;
            let dropout_seed = cfg
                .seed
                .wrapping_mul(0x9E37_79B9)
                .wrapping_add(global_step as u64);
            let (loss, grads) = model.loss_and_grads(data, batch, loss_cfg, Some(dropout_seed))?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    step: global_step,
                    lr,
                    message: "non-finite loss".into(),
                    batch_ids: batch.iter().map(|&i| data.id_of(i)).collect(),
                });
            }
            optimizer.step(model.params_mut(), &grads, &groups, lr, &trainable);
            history.steps.push(StepRecord {
                epoch,
                step: global_step,
                lr,
                loss,
            });
            epoch_loss += loss * batch.len() as f64;
            global_step += 1;
        }

        let val_auc = match val {
            Some(v) => {
                let scores = model.scores(v)?;
                let labels = v.labels_required()?.to_vec();
                Some(roc_auc(&ScoredPredictions::new(scores, labels)?)?)
            }
            None => None,
        };
        if let Some(auc) = val_auc {
            if history.best_val_auc.map_or(true, |best| auc > best) {
                history.best_val_auc = Some(auc);
                history.best_epoch = Some(epoch);
                best_params = Some(model.params().clone());
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / n as f64,
            val_auc,
            trainable_groups: trainable.len(),
        });
    }

    if let Some(best) = best_params {
        *model.params_mut() = best;
    }
    Ok(history)
}
