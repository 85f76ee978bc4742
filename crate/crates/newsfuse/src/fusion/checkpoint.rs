//! Checkpoints: a binary tensor payload plus a JSON manifest carrying the
//! producing config, seed, training step, metrics, and (for fused models)
//! the parameter-provenance ledger.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{store, ParamSet};
use crate::tabular::MetaMlp;
use crate::textenc::{BackboneConfig, BlockSelection, TextModel};
use crate::training::NeuralModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// What produced this: "backbone", "text", "meta_mlp", or "fusion".
    pub model_kind: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    #[serde(default)]
    pub metrics: serde_json::Value,
    /// name -> "checkpoint:<path>" or "random:<seed>".
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub manifest: CheckpointManifest,
}

pub fn save_checkpoint(dir: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let meta = serde_json::to_value(&checkpoint.manifest).expect("manifest serializes");
    store::save_params(dir, &checkpoint.params, meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let (params, meta) = store::load_params(dir)?;
    let manifest: CheckpointManifest =
        serde_json::from_value(meta).map_err(|e| Error::Checkpoint {
            message: format!("bad checkpoint manifest: {e}"),
            names: Vec::new(),
        })?;
    // Every model parameter name appears exactly once by ParamSet
    // construction; an empty set is still suspicious enough to flag.
    if params.is_empty() {
        return Err(Error::Checkpoint {
            message: "checkpoint holds no tensors".into(),
            names: Vec::new(),
        });
    }
    Ok(Checkpoint { params, manifest })
}

/// Persist only the backbone tensors of a text model, as a pretrained
/// language-model checkpoint.
pub fn save_backbone_checkpoint(dir: &Path, model: &TextModel, seed: u64) -> Result<()> {
    let params: ParamSet = model
        .params()
        .iter()
        .filter(|(k, _)| k.starts_with("backbone."))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let manifest = CheckpointManifest {
        model_kind: "backbone".into(),
        config: serde_json::to_value(&model.config).expect("config serializes"),
        seed,
        step: 0,
        metrics: serde_json::Value::Null,
        provenance: BTreeMap::new(),
    };
    save_checkpoint(dir, &Checkpoint { params, manifest })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextCheckpointConfig {
    pub backbone: BackboneConfig,
    pub selection: BlockSelection,
}

/// Persist a (fine-tuned) text model: backbone + head + its configs.
pub fn save_text_checkpoint(
    dir: &Path,
    model: &TextModel,
    seed: u64,
    step: u64,
    metrics: serde_json::Value,
) -> Result<()> {
    let config = TextCheckpointConfig {
        backbone: model.config.clone(),
        selection: model.selection.clone(),
    };
    let manifest = CheckpointManifest {
        model_kind: "text".into(),
        config: serde_json::to_value(&config).expect("config serializes"),
        seed,
        step,
        metrics,
        provenance: BTreeMap::new(),
    };
    save_checkpoint(
        dir,
        &Checkpoint {
            params: model.params().clone(),
            manifest,
        },
    )
}

pub fn load_text_checkpoint(dir: &Path) -> Result<(TextModel, CheckpointManifest)> {
    let ckpt = load_checkpoint(dir)?;
    let config: TextCheckpointConfig =
        serde_json::from_value(ckpt.manifest.config.clone()).map_err(|e| Error::Checkpoint {
            message: format!("text checkpoint config: {e}"),
            names: Vec::new(),
        })?;
    let model = TextModel::from_params(config.backbone, config.selection, ckpt.params.clone())?;
    Ok((model, ckpt.manifest))
}

/// Persist a trained meta MLP.
pub fn save_meta_checkpoint(
    dir: &Path,
    model: &MetaMlp,
    seed: u64,
    step: u64,
    metrics: serde_json::Value,
) -> Result<()> {
    let manifest = CheckpointManifest {
        model_kind: "meta_mlp".into(),
        config: serde_json::json!({ "in_dim": model.in_dim }),
        seed,
        step,
        metrics,
        provenance: BTreeMap::new(),
    };
    save_checkpoint(
        dir,
        &Checkpoint {
            params: model.params().clone(),
            manifest,
        },
    )
}

pub fn load_meta_checkpoint(dir: &Path) -> Result<(MetaMlp, CheckpointManifest)> {
    let ckpt = load_checkpoint(dir)?;
    let in_dim = ckpt.manifest.config["in_dim"]
        .as_u64()
        .ok_or_else(|| Error::Checkpoint {
            message: "meta checkpoint missing in_dim".into(),
            names: Vec::new(),
        })? as usize;
    let model = MetaMlp::from_params(in_dim, ckpt.params.clone())?;
    Ok((model, ckpt.manifest))
}
