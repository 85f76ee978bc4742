//! The deep multi-input model: a text submodel (backbone + feature head) and
//! a meta submodel (MLP feature extractor) combined by concatenation or
//! addition and classified by a fused head.
//!
//! Assembly follows one of four initialization strategies. Every parameter's
//! origin is recorded in a provenance ledger ("checkpoint:<path>" or
//! "random:<seed>") so the strategy definitions are machine-checkable, not
//! just documented.

pub mod checkpoint;

pub use checkpoint::{
    load_checkpoint, load_meta_checkpoint, load_text_checkpoint, save_backbone_checkpoint,
    save_checkpoint, save_meta_checkpoint, save_text_checkpoint, Checkpoint, CheckpointManifest,
};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    dropout_mask, example_rng, softmax_rows, Graph, GradMap, Mat, ParamBinder, ParamSet, VarId,
};
use crate::tabular::mlp::{init_meta_extractor, meta_extractor_graph, META_FEATURE_DIM};
use crate::textenc::{
    encoder, text_param_group, BackboneConfig, BlockSelection, HashTokenizer,
};
use crate::training::{ModelBatch, NeuralModel, SmoothingLossConfig};

pub const FUSED_DROPOUT: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Concat,
    Add,
}

impl FromStr for CombineMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concat" => Ok(CombineMode::Concat),
            "add" => Ok(CombineMode::Add),
            other => Err(Error::Config(format!("unknown combine mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    pub combine: CombineMode,
    /// Text penultimate width (the text head's hidden size).
    pub d_text: usize,
    /// Meta extractor output width.
    pub d_meta_feat: usize,
    /// Common width both features are projected to in add mode.
    pub projection_dim: usize,
    /// Fused head hidden width.
    pub fused_hidden: usize,
    /// Meta feature count entering the extractor.
    pub meta_in_dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            combine: CombineMode::Concat,
            d_text: 256,
            d_meta_feat: META_FEATURE_DIM,
            projection_dim: 128,
            fused_hidden: 128,
            meta_in_dim: crate::features::D_META,
        }
    }
}

impl FusionConfig {
    /// Input width of the fused head.
    pub fn fused_input_dim(&self) -> usize {
        match self.combine {
            CombineMode::Concat => self.d_text + self.d_meta_feat,
            CombineMode::Add => self.projection_dim,
        }
    }
}

/// Elementwise or concatenating feature combination.
pub fn combine_features(a: &[f64], b: &[f64], mode: CombineMode) -> Result<Vec<f64>> {
    match mode {
        CombineMode::Concat => {
            let mut out = Vec::with_capacity(a.len() + b.len());
            out.extend_from_slice(a);
            out.extend_from_slice(b);
            Ok(out)
        }
        CombineMode::Add => {
            if a.len() != b.len() {
                return Err(Error::dim("combine_features add", a.len(), b.len()));
            }
            Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyId {
    S1,
    S2,
    S3,
    S4,
}

impl StrategyId {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyId::S1 => "s1",
            StrategyId::S2 => "s2",
            StrategyId::S3 => "s3",
            StrategyId::S4 => "s4",
        }
    }

    /// Text submodel (backbone + feature head) comes from a task-fine-tuned
    /// checkpoint.
    pub fn text_from_checkpoint(&self) -> bool {
        matches!(self, StrategyId::S3 | StrategyId::S4)
    }

    /// Meta extractor comes from a task-trained checkpoint.
    pub fn meta_from_checkpoint(&self) -> bool {
        matches!(self, StrategyId::S2 | StrategyId::S4)
    }
}

impl FromStr for StrategyId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(StrategyId::S1),
            "s2" => Ok(StrategyId::S2),
            "s3" => Ok(StrategyId::S3),
            "s4" => Ok(StrategyId::S4),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Where each submodel's parameters come from at assembly time. The encoder
/// backbone always starts from pretrained weights: directly for S1/S2, and
/// through the fine-tuned text checkpoint for S3/S4.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyPlan {
    pub id: StrategyId,
    pub seed: u64,
    /// Pretrained language-model backbone; required for S1 and S2.
    pub backbone_checkpoint: Option<PathBuf>,
    /// Task-fine-tuned text model; required for S3 and S4.
    pub text_checkpoint: Option<PathBuf>,
    /// Task-trained meta MLP; required for S2 and S4.
    pub meta_checkpoint: Option<PathBuf>,
    /// Block selection when the text head is freshly initialized (S1/S2);
    /// a text checkpoint carries its own.
    pub selection: Option<BlockSelection>,
}

impl StrategyPlan {
    pub fn new(id: StrategyId, seed: u64) -> Self {
        StrategyPlan {
            id,
            seed,
            backbone_checkpoint: None,
            text_checkpoint: None,
            meta_checkpoint: None,
            selection: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionModelConfig {
    pub backbone: BackboneConfig,
    pub selection: BlockSelection,
    pub fusion: FusionConfig,
    pub strategy: StrategyId,
}

/// The assembled multi-input model.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: FusionModelConfig,
    tokenizer: HashTokenizer,
    params: ParamSet,
    provenance: BTreeMap<String, String>,
}

fn random_origin(seed: u64) -> String {
    format!("random:{seed}")
}

fn checkpoint_origin(path: &std::path::Path) -> String {
    format!("checkpoint:{}", path.display())
}

/// Build a fused model whose parameter provenance matches the plan exactly.
pub fn assemble(plan: &StrategyPlan, cfg: &FusionConfig) -> Result<FusionModel> {
    let mut params = ParamSet::new();
    let mut provenance: BTreeMap<String, String> = BTreeMap::new();
    // Each freshly initialized component draws from its own derived seed, so
    // two plans with the same seed share identical fused-head (and text-head)
    // initializations regardless of which submodels load from checkpoints.
    let mut text_head_rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x7e37_0001);
    let mut meta_rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0x11e7_0002);
    let mut fused_rng = ChaCha8Rng::seed_from_u64(plan.seed ^ 0xf05e_0003);

    // Text submodel: backbone plus the feature layer of the text head.
    let (backbone_cfg, selection) = if plan.id.text_from_checkpoint() {
        let dir = plan.text_checkpoint.as_ref().ok_or_else(|| Error::Checkpoint {
            message: format!(
                "strategy {} needs a fine-tuned text checkpoint",
                plan.id.name()
            ),
            names: vec!["text_checkpoint".into()],
        })?;
        let (text_model, _) = load_text_checkpoint(dir)?;
        if text_model.head.hidden != cfg.d_text {
            return Err(Error::Checkpoint {
                message: format!(
                    "text head hidden {} does not match fusion d_text {}",
                    text_model.head.hidden, cfg.d_text
                ),
                names: vec!["head.fc1.weight".into()],
            });
        }
        let origin = checkpoint_origin(dir);
        for (name, tensor) in text_model.params() {
            if name.starts_with("backbone.") || name.starts_with("head.fc1.") {
                params.insert(name.clone(), tensor.clone());
                provenance.insert(name.clone(), origin.clone());
            }
        }
        (text_model.config.clone(), text_model.selection.clone())
    } else {
        let dir = plan
            .backbone_checkpoint
            .as_ref()
            .ok_or_else(|| Error::Checkpoint {
                message: format!(
                    "strategy {} needs a pretrained backbone checkpoint",
                    plan.id.name()
                ),
                names: vec!["backbone_checkpoint".into()],
            })?;
        let ckpt = load_checkpoint(dir)?;
        let backbone_cfg: BackboneConfig = serde_json::from_value(ckpt.manifest.config.clone())
            .map_err(|e| Error::Checkpoint {
                message: format!("backbone checkpoint config: {e}"),
                names: Vec::new(),
            })?;
        crate::textenc::validate_backbone_params(
            &ckpt.params,
            backbone_cfg.layers,
            backbone_cfg.hidden,
        )?;
        let origin = checkpoint_origin(dir);
        for name in crate::textenc::backbone_param_names(backbone_cfg.layers) {
            params.insert(name.clone(), ckpt.params[&name].clone());
            provenance.insert(name, origin.clone());
        }
        let selection = plan
            .selection
            .clone()
            .unwrap_or_else(|| BlockSelection::all(backbone_cfg.layers));
        selection.validate(backbone_cfg.layers)?;
        // Fresh text feature layer.
        let input_dim = selection.dim(backbone_cfg.hidden);
        params.insert(
            "head.fc1.weight".into(),
            Mat::he_normal(input_dim, cfg.d_text, &mut text_head_rng),
        );
        params.insert("head.fc1.bias".into(), Mat::zeros(1, cfg.d_text));
        provenance.insert("head.fc1.weight".into(), random_origin(plan.seed));
        provenance.insert("head.fc1.bias".into(), random_origin(plan.seed));
        (backbone_cfg, selection)
    };

    // Meta submodel: the extractor only. Its classification output layer is
    // never part of the fused model.
    if plan.id.meta_from_checkpoint() {
        let dir = plan.meta_checkpoint.as_ref().ok_or_else(|| Error::Checkpoint {
            message: format!(
                "strategy {} needs a trained meta checkpoint",
                plan.id.name()
            ),
            names: vec!["meta_checkpoint".into()],
        })?;
        let (meta_model, _) = load_meta_checkpoint(dir)?;
        if meta_model.in_dim != cfg.meta_in_dim {
            return Err(Error::Checkpoint {
                message: format!(
                    "meta checkpoint in_dim {} does not match fusion meta_in_dim {}",
                    meta_model.in_dim, cfg.meta_in_dim
                ),
                names: vec!["meta.fc1.weight".into()],
            });
        }
        let origin = checkpoint_origin(dir);
        for name in crate::tabular::mlp::meta_extractor_param_names() {
            params.insert(name.clone(), meta_model.params()[&name].clone());
            provenance.insert(name, origin.clone());
        }
    } else {
        init_meta_extractor(&mut params, cfg.meta_in_dim, &mut meta_rng);
        for name in crate::tabular::mlp::meta_extractor_param_names() {
            provenance.insert(name, random_origin(plan.seed));
        }
    }

    // Add-mode projections, then the fused head: always fresh.
    if cfg.combine == CombineMode::Add {
        params.insert(
            "proj.text.weight".into(),
            Mat::he_normal(cfg.d_text, cfg.projection_dim, &mut fused_rng),
        );
        params.insert("proj.text.bias".into(), Mat::zeros(1, cfg.projection_dim));
        params.insert(
            "proj.meta.weight".into(),
            Mat::he_normal(cfg.d_meta_feat, cfg.projection_dim, &mut fused_rng),
        );
        params.insert("proj.meta.bias".into(), Mat::zeros(1, cfg.projection_dim));
        for name in ["proj.text.weight", "proj.text.bias", "proj.meta.weight", "proj.meta.bias"] {
            provenance.insert(name.into(), random_origin(plan.seed));
        }
    }
    params.insert(
        "fused.fc1.weight".into(),
        Mat::he_normal(cfg.fused_input_dim(), cfg.fused_hidden, &mut fused_rng),
    );
    params.insert("fused.fc1.bias".into(), Mat::zeros(1, cfg.fused_hidden));
    params.insert(
        "fused.out.weight".into(),
        Mat::he_normal(cfg.fused_hidden, 2, &mut fused_rng),
    );
    params.insert("fused.out.bias".into(), Mat::zeros(1, 2));
    for name in ["fused.fc1.weight", "fused.fc1.bias", "fused.out.weight", "fused.out.bias"] {
        provenance.insert(name.into(), random_origin(plan.seed));
    }

    let tokenizer = HashTokenizer::new(backbone_cfg.vocab_size, backbone_cfg.max_seq_len);
    Ok(FusionModel {
        config: FusionModelConfig {
            backbone: backbone_cfg,
            selection,
            fusion: cfg.clone(),
            strategy: plan.id,
        },
        tokenizer,
        params,
        provenance,
    })
}

impl FusionModel {
    pub fn tokenizer(&self) -> &HashTokenizer {
        &self.tokenizer
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    /// Rebuild from a saved fusion checkpoint.
    pub fn from_checkpoint(dir: &std::path::Path) -> Result<Self> {
        let ckpt = load_checkpoint(dir)?;
        let config: FusionModelConfig = serde_json::from_value(ckpt.manifest.config.clone())
            .map_err(|e| Error::Checkpoint {
                message: format!("fusion checkpoint config: {e}"),
                names: Vec::new(),
            })?;
        let tokenizer =
            HashTokenizer::new(config.backbone.vocab_size, config.backbone.max_seq_len);
        Ok(FusionModel {
            config,
            tokenizer,
            params: ckpt.params,
            provenance: ckpt.manifest.provenance,
        })
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64, metrics: serde_json::Value) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            manifest: CheckpointManifest {
                model_kind: "fusion".into(),
                config: serde_json::to_value(&self.config).expect("config serializes"),
                seed,
                step,
                metrics,
                provenance: self.provenance.clone(),
            },
        }
    }

    fn fused_dropout(&self, g: &mut Graph, x: VarId, rng: &mut Option<ChaCha8Rng>) -> VarId {
        match rng {
            Some(r) => {
                let mask = dropout_mask(g.value(x).len(), FUSED_DROPOUT, Some(r));
                g.mul_mask(x, mask)
            }
            None => x,
        }
    }

    /// One example through both submodels and the fused head.
    fn example_graph<'a>(
        &'a self,
        g: &mut Graph,
        ids: &[u32],
        meta_row: Mat,
        dropout_rng: &mut Option<ChaCha8Rng>,
    ) -> (ParamBinder<'a>, VarId) {
        let mut binder = ParamBinder::new(&self.params);

        // Text feature path: backbone -> concat of selected [CLS] states ->
        // feature layer.
        let cls = encoder::backbone_graph(
            g,
            &mut binder,
            ids,
            self.config.backbone.layers,
            self.config.backbone.hidden,
        );
        let selected: Vec<VarId> = self
            .config
            .selection
            .indices
            .iter()
            .map(|&block| cls[block - 1])
            .collect();
        let concat = g.concat_cols(&selected);
        let concat = self.fused_dropout(g, concat, dropout_rng);
        let w = binder.bind(g, "head.fc1.weight");
        let b = binder.bind(g, "head.fc1.bias");
        let z = g.matmul(concat, w);
        let z = g.add_row(z, b);
        let text_feat = g.relu(z);

        // Meta feature path.
        let meta_var = g.leaf(meta_row);
        let mut meta_rng = dropout_rng
            .as_mut()
            .map(|r| ChaCha8Rng::seed_from_u64(rand::Rng::gen(r)));
        let meta_feat = meta_extractor_graph(g, &mut binder, meta_var, &mut meta_rng);

        let combined = match self.config.fusion.combine {
            CombineMode::Concat => g.concat_cols(&[text_feat, meta_feat]),
            CombineMode::Add => {
                let wt = binder.bind(g, "proj.text.weight");
                let bt = binder.bind(g, "proj.text.bias");
                let wm = binder.bind(g, "proj.meta.weight");
                let bm = binder.bind(g, "proj.meta.bias");
                let t = g.matmul(text_feat, wt);
                let t = g.add_row(t, bt);
                let m = g.matmul(meta_feat, wm);
                let m = g.add_row(m, bm);
                g.add(t, m)
            }
        };

        let dropped = self.fused_dropout(g, combined, dropout_rng);
        let w1 = binder.bind(g, "fused.fc1.weight");
        let b1 = binder.bind(g, "fused.fc1.bias");
        let z1 = g.matmul(dropped, w1);
        let z1 = g.add_row(z1, b1);
        let h = g.relu(z1);
        let h = self.fused_dropout(g, h, dropout_rng);
        let w2 = binder.bind(g, "fused.out.weight");
        let b2 = binder.bind(g, "fused.out.bias");
        let z2 = g.matmul(h, w2);
        let logits = g.add_row(z2, b2);
        (binder, logits)
    }

    fn batch_inputs<'d>(&self, data: &'d ModelBatch) -> Result<(&'d [Vec<u32>], &'d Mat)> {
        let token_ids = data
            .token_ids
            .as_deref()
            .ok_or_else(|| Error::Data("text channel missing from batch".into()))?;
        let meta = data
            .meta
            .as_ref()
            .ok_or_else(|| Error::Data("meta channel missing from batch".into()))?;
        if token_ids.len() != meta.rows {
            return Err(Error::dim("fuse_forward batch", token_ids.len(), meta.rows));
        }
        if meta.cols != self.config.fusion.meta_in_dim {
            return Err(Error::dim(
                "fuse_forward meta width",
                self.config.fusion.meta_in_dim,
                meta.cols,
            ));
        }
        Ok((token_ids, meta))
    }

    /// Inference-mode logits for a batch of texts plus meta rows.
    pub fn fuse_forward(&self, data: &ModelBatch) -> Result<Mat> {
        let (token_ids, meta) = self.batch_inputs(data)?;
        let rows: Vec<Result<Vec<f64>>> = (0..token_ids.len())
            .into_par_iter()
            .map(|i| {
                let mut g = Graph::new();
                let meta_row = Mat::row_vec(meta.row(i));
                let mut no_dropout = None;
                let (_, logits) =
                    self.example_graph(&mut g, &token_ids[i], meta_row, &mut no_dropout);
                Ok(g.value(logits).row(0).to_vec())
            })
            .collect();
        let mut out = Mat::zeros(token_ids.len(), 2);
        for (i, row) in rows.into_iter().enumerate() {
            out.row_mut(i).copy_from_slice(&row?);
        }
        Ok(out)
    }
}

impl NeuralModel for FusionModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn group_order(&self) -> Vec<String> {
        let mut order = vec!["fused".to_string()];
        if self.config.fusion.combine == CombineMode::Add {
            order.push("proj".to_string());
        }
        order.push("text_head".to_string());
        order.push("meta".to_string());
        for i in (1..=self.config.backbone.layers).rev() {
            order.push(format!("block{i}"));
        }
        order.push("embed".to_string());
        order
    }

    fn group_of(&self, param_name: &str) -> Result<String> {
        if param_name.starts_with("fused.") {
            return Ok("fused".into());
        }
        if param_name.starts_with("proj.") {
            return Ok("proj".into());
        }
        if param_name.starts_with("head.") {
            return Ok("text_head".into());
        }
        if param_name.starts_with("meta.") {
            return Ok("meta".into());
        }
        text_param_group(param_name)
    }

    fn loss_and_grads(
        &self,
        data: &ModelBatch,
        rows: &[usize],
        loss: &SmoothingLossConfig,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, GradMap)> {
        loss.validate()?;
        let (token_ids, meta) = self.batch_inputs(data)?;
        let labels = data.labels_required()?;
        crate::textenc::batch_mean_grads(rows, |row| {
            let mut g = Graph::new();
            let mut rng = dropout_seed.map(|s| example_rng(s, 2, row as u64));
            let meta_row = Mat::row_vec(meta.row(row));
            let (binder, logits) = self.example_graph(&mut g, &token_ids[row], meta_row, &mut rng);
            let loss_var = g.smoothed_ce(logits, &[usize::from(labels[row])], loss.eps);
            let value = g.value(loss_var).at(0, 0);
            let node_grads = g.backward(loss_var);
            Ok((value, binder.grads(&g, &node_grads)))
        })
    }

    fn scores(&self, data: &ModelBatch) -> Result<Vec<f64>> {
        let logits = self.fuse_forward(data)?;
        let p = softmax_rows(&logits);
        Ok((0..p.rows).map(|r| p.at(r, 1)).collect())
    }
}

/// Paths to the three checkpoints a strategy sweep needs.
#[derive(Debug, Clone)]
pub struct StrategyFixtures {
    pub backbone_dir: PathBuf,
    pub text_dir: PathBuf,
    pub meta_dir: PathBuf,
}

impl StrategyFixtures {
    pub fn plan(&self, id: StrategyId, seed: u64) -> StrategyPlan {
        let mut plan = StrategyPlan::new(id, seed);
        plan.backbone_checkpoint = Some(self.backbone_dir.clone());
        plan.text_checkpoint = Some(self.text_dir.clone());
        plan.meta_checkpoint = Some(self.meta_dir.clone());
        plan
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::MetaMlp;
    use crate::textenc::TextModel;
    use crate::textenc::BackboneKind;

    fn fixtures(dir: &std::path::Path, layers: usize, seed: u64) -> StrategyFixtures {
        let mut cfg = BackboneConfig::toy(seed);
        cfg.layers = layers;
        let text = TextModel::new(cfg, BlockSelection::all(layers), seed + 1).unwrap();
        let backbone_dir = dir.join("backbone");
        let text_dir = dir.join("text");
        let meta_dir = dir.join("meta");
        save_backbone_checkpoint(&backbone_dir, &text, seed).unwrap();
        save_text_checkpoint(&text_dir, &text, seed, 10, serde_json::Value::Null).unwrap();
        let meta = MetaMlp::new(13, seed + 2);
        save_meta_checkpoint(&meta_dir, &meta, seed + 2, 5, serde_json::Value::Null).unwrap();
        StrategyFixtures {
            backbone_dir,
            text_dir,
            meta_dir,
        }
    }

    fn small_cfg() -> FusionConfig {
        FusionConfig::default()
    }

    fn toy_batch(model: &FusionModel, n: usize, seed: u64) -> ModelBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let texts: Vec<Vec<u32>> = (0..n)
            .map(|i| model.tokenizer().tokenize(&format!("tin {i} sốc lắm nhé")))
            .collect();
        let meta = Mat::gaussian(n, model.config.fusion.meta_in_dim, 0.0, 1.0, &mut rng);
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        ModelBatch {
            token_ids: Some(texts),
            meta: Some(meta),
            labels: Some(labels),
            ids: Vec::new(),
        }
    }

    #[test]
    fn s2_transfers_extractor_and_never_carries_meta_output() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 30);
        let model = assemble(&fx.plan(StrategyId::S2, 7), &small_cfg()).unwrap();
        let (meta_model, _) = load_meta_checkpoint(&fx.meta_dir).unwrap();
        for name in crate::tabular::mlp::meta_extractor_param_names() {
            assert_eq!(model.params()[&name], meta_model.params()[&name], "{name}");
            assert!(model.provenance()[&name].starts_with("checkpoint:"));
        }
        assert!(!model.params().contains_key("meta.out.weight"));
        assert!(!model.params().contains_key("meta.out.bias"));
        // Text head is fresh under S2.
        assert!(model.provenance()["head.fc1.weight"].starts_with("random:"));
    }

    #[test]
    fn s4_transfers_both_submodels_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 31);
        let model = assemble(&fx.plan(StrategyId::S4, 8), &small_cfg()).unwrap();
        let (text_model, _) = load_text_checkpoint(&fx.text_dir).unwrap();
        let (meta_model, _) = load_meta_checkpoint(&fx.meta_dir).unwrap();
        let mut max_diff = 0.0f64;
        for (name, tensor) in model.params() {
            let source = if name.starts_with("backbone.") || name.starts_with("head.fc1.") {
                Some(&text_model.params()[name])
            } else if name.starts_with("meta.") {
                Some(&meta_model.params()[name])
            } else {
                None
            };
            if let Some(src) = source {
                for (a, b) in tensor.data.iter().zip(&src.data) {
                    max_diff = max_diff.max((a - b).abs());
                }
            }
        }
        assert_eq!(max_diff, 0.0);
    }

    #[test]
    fn s1_seeds_differ_but_backbone_is_shared() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 32);
        let a = assemble(&fx.plan(StrategyId::S1, 1), &small_cfg()).unwrap();
        let b = assemble(&fx.plan(StrategyId::S1, 2), &small_cfg()).unwrap();
        assert_ne!(a.params()["head.fc1.weight"], b.params()["head.fc1.weight"]);
        assert_ne!(a.params()["meta.fc1.weight"], b.params()["meta.fc1.weight"]);
        assert_eq!(
            a.params()["backbone.block1.attn.query.weight"],
            b.params()["backbone.block1.attn.query.weight"]
        );
    }

    #[test]
    fn missing_checkpoints_are_named_errors() {
        let cfg = small_cfg();
        let plan = StrategyPlan::new(StrategyId::S2, 0);
        match assemble(&plan, &cfg) {
            // S2 without a backbone checkpoint fails on the backbone first.
            Err(Error::Checkpoint { names, .. }) => {
                assert!(names.contains(&"backbone_checkpoint".to_string()));
            }
            other => panic!("expected checkpoint error, got {:?}", other.is_ok()),
        }
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 33);
        let mut plan = StrategyPlan::new(StrategyId::S2, 0);
        plan.backbone_checkpoint = Some(fx.backbone_dir.clone());
        match assemble(&plan, &cfg) {
            Err(Error::Checkpoint { names, .. }) => {
                assert!(names.contains(&"meta_checkpoint".to_string()));
            }
            other => panic!("expected checkpoint error, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn provenance_covers_every_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 34);
        for id in [StrategyId::S1, StrategyId::S2, StrategyId::S3, StrategyId::S4] {
            let model = assemble(&fx.plan(id, 3), &small_cfg()).unwrap();
            for name in model.params().keys() {
                assert!(
                    model.provenance().contains_key(name),
                    "{id:?}: no provenance for {name}"
                );
            }
            assert_eq!(model.provenance().len(), model.params().len());
        }
    }

    #[test]
    fn concat_input_dim_is_288() {
        let cfg = small_cfg();
        assert_eq!(cfg.fused_input_dim(), 288);
        let add = FusionConfig {
            combine: CombineMode::Add,
            ..small_cfg()
        };
        assert_eq!(add.fused_input_dim(), 128);
    }

    #[test]
    fn combine_features_modes() {
        assert_eq!(
            combine_features(&[1.0, 2.0], &[3.0], CombineMode::Concat).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            combine_features(&[1.0, 2.0], &[3.0, 4.0], CombineMode::Add).unwrap(),
            vec![4.0, 6.0]
        );
        assert!(combine_features(&[1.0], &[1.0, 2.0], CombineMode::Add).is_err());
    }

    #[test]
    fn fuse_forward_shapes_and_batch_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 35);
        let model = assemble(&fx.plan(StrategyId::S4, 4), &small_cfg()).unwrap();
        let batch = toy_batch(&model, 3, 0);
        let logits = model.fuse_forward(&batch).unwrap();
        assert_eq!(logits.shape(), (3, 2));

        let mut bad = batch.clone();
        bad.meta = Some(Mat::zeros(2, model.config.fusion.meta_in_dim));
        assert!(model.fuse_forward(&bad).is_err());
    }

    #[test]
    fn add_mode_assembles_and_runs() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 36);
        let cfg = FusionConfig {
            combine: CombineMode::Add,
            ..small_cfg()
        };
        let model = assemble(&fx.plan(StrategyId::S1, 5), &cfg).unwrap();
        assert!(model.params().contains_key("proj.text.weight"));
        let batch = toy_batch(&model, 2, 1);
        let logits = model.fuse_forward(&batch).unwrap();
        assert_eq!(logits.shape(), (2, 2));
    }

    #[test]
    fn zeroed_meta_path_makes_logits_text_only() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 37);
        let mut model = assemble(&fx.plan(StrategyId::S1, 6), &small_cfg()).unwrap();
        // Zero the meta extractor: its features become relu(bias) = 0.
        for name in crate::tabular::mlp::meta_extractor_param_names() {
            model.params_mut().get_mut(&name).unwrap().scale_assign(0.0);
        }
        let batch_a = toy_batch(&model, 3, 2);
        let mut batch_b = batch_a.clone();
        batch_b.meta = Some(Mat::gaussian(
            3,
            model.config.fusion.meta_in_dim,
            0.0,
            5.0,
            &mut ChaCha8Rng::seed_from_u64(99),
        ));
        let la = model.fuse_forward(&batch_a).unwrap();
        let lb = model.fuse_forward(&batch_b).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn gradients_reach_both_submodels() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 38);
        let model = assemble(&fx.plan(StrategyId::S1, 7), &small_cfg()).unwrap();
        let batch = toy_batch(&model, 8, 3);
        let rows: Vec<usize> = (0..8).collect();
        let (_, grads) = model
            .loss_and_grads(&batch, &rows, &SmoothingLossConfig::default(), Some(1))
            .unwrap();
        let mut group_norms: BTreeMap<String, f64> = BTreeMap::new();
        for (name, grad) in &grads {
            let group = model.group_of(name).unwrap();
            let norm: f64 = grad.data.iter().map(|g| g * g).sum();
            *group_norms.entry(group).or_default() += norm;
        }
        for group in model.group_order() {
            let norm = group_norms.get(&group).copied().unwrap_or(0.0);
            assert!(norm > 0.0, "group {group} has zero gradient norm");
        }
    }

    #[test]
    fn fusion_checkpoint_roundtrip_preserves_ledger() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 39);
        let model = assemble(&fx.plan(StrategyId::S3, 8), &small_cfg()).unwrap();
        let ckpt_dir = dir.path().join("fused");
        save_checkpoint(&ckpt_dir, &model.to_checkpoint(8, 0, serde_json::Value::Null)).unwrap();
        let loaded = FusionModel::from_checkpoint(&ckpt_dir).unwrap();
        assert_eq!(loaded.params(), model.params());
        assert_eq!(loaded.provenance(), model.provenance());
        assert_eq!(loaded.config.strategy, StrategyId::S3);
    }

    #[test]
    fn deterministic_inference() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 40);
        let model = assemble(&fx.plan(StrategyId::S4, 9), &small_cfg()).unwrap();
        let batch = toy_batch(&model, 4, 4);
        assert_eq!(
            model.fuse_forward(&batch).unwrap(),
            model.fuse_forward(&batch).unwrap()
        );
        // Batch-order equivariance.
        let scores = model.scores(&batch).unwrap();
        let mut rev = batch.clone();
        rev.token_ids = Some(batch.token_ids.clone().unwrap().into_iter().rev().collect());
        let meta = batch.meta.clone().unwrap();
        let mut rev_meta = Mat::zeros(meta.rows, meta.cols);
        for r in 0..meta.rows {
            rev_meta
                .row_mut(meta.rows - 1 - r)
                .copy_from_slice(meta.row(r));
        }
        rev.meta = Some(rev_meta);
        let rev_scores = model.scores(&rev).unwrap();
        for (i, s) in scores.iter().enumerate() {
            assert_eq!(*s, rev_scores[scores.len() - 1 - i]);
        }
    }

    #[test]
    fn toy_backbone_kind_survives_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixtures(dir.path(), 2, 41);
        let model = assemble(&fx.plan(StrategyId::S1, 0), &small_cfg()).unwrap();
        assert!(matches!(model.config.backbone.kind, BackboneKind::Toy { .. }));
    }
}
