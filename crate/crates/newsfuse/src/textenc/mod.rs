//! Text-side model: an L-block transformer encoder wrapped behind a uniform
//! interface, per-block [CLS] extraction, concatenation of a configurable
//! block subset, and a classification head whose 256-dim penultimate
//! activation feeds the fused model.

pub mod encoder;
pub mod tokenizer;

pub use encoder::{backbone_param_names, validate_backbone_params};
pub use tokenizer::{HashTokenizer, CLS_ID};

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    dropout_mask, example_rng, softmax_rows, store, Graph, GradMap, Mat, ParamBinder, ParamSet,
    VarId,
};
use crate::training::{ModelBatch, NeuralModel, SmoothingLossConfig};

pub const HEAD_HIDDEN: usize = 256;
pub const HEAD_DROPOUT: f64 = 0.3;
pub const TOY_VOCAB: usize = 1024;

/// Fixed chunk count for parallel gradient accumulation; summation order is
/// chunk-major and independent of thread scheduling.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackboneKind {
    /// Randomly initialized small encoder; exists so every downstream
    /// contract runs without GPUs or pretrained weights.
    Toy { seed: u64 },
    /// Weights loaded from a local checkpoint directory; never downloaded.
    Pretrained { checkpoint: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Block count L (12 for the base pretrained encoder).
    pub layers: usize,
    /// Hidden size H (768 pretrained, 32 toy default).
    pub hidden: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Feed-forward widening factor inside each block.
    pub ffn_factor: usize,
    pub tokenizer_id: String,
}

impl BackboneConfig {
    pub fn toy(seed: u64) -> Self {
        BackboneConfig {
            kind: BackboneKind::Toy { seed },
            layers: 6,
            hidden: 32,
            vocab_size: TOY_VOCAB,
            max_seq_len: 16,
            ffn_factor: encoder::FFN_FACTOR,
            tokenizer_id: "hash-v1".into(),
        }
    }

    pub fn pretrained(checkpoint: PathBuf) -> Self {
        BackboneConfig {
            kind: BackboneKind::Pretrained { checkpoint },
            layers: 12,
            hidden: 768,
            vocab_size: 64_000,
            max_seq_len: 256,
            ffn_factor: encoder::FFN_FACTOR,
            tokenizer_id: "hash-v1".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.hidden < 1 {
            return Err(Error::Config(format!(
                "backbone needs layers >= 1 and hidden >= 1, got {} and {}",
                self.layers, self.hidden
            )));
        }
        Ok(())
    }
}

/// 1-based indices of the blocks whose [CLS] states are concatenated.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct BlockSelection {
    pub indices: BTreeSet<usize>,
}

impl BlockSelection {
    pub fn range(from: usize, to: usize) -> Self {
        BlockSelection {
            indices: (from..=to).collect(),
        }
    }

    pub fn all(layers: usize) -> Self {
        Self::range(1, layers)
    }

    /// Grammar: comma-separated items, each `a-b` (inclusive) or a single
    /// index, e.g. "1-6", "6-12", "9,10,11,12", "1,3-5".
    pub fn parse(spec: &str) -> Result<Self> {
        let mut indices = BTreeSet::new();
        for item in spec.split(',') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            if let Some((a, b)) = item.split_once('-') {
                let a: usize = a.trim().parse().map_err(|_| bad_selection(spec))?;
                let b: usize = b.trim().parse().map_err(|_| bad_selection(spec))?;
                if a == 0 || b < a {
                    return Err(bad_selection(spec));
                }
                indices.extend(a..=b);
            } else {
                let v: usize = item.parse().map_err(|_| bad_selection(spec))?;
                if v == 0 {
                    return Err(bad_selection(spec));
                }
                indices.insert(v);
            }
        }
        if indices.is_empty() {
            return Err(bad_selection(spec));
        }
        Ok(BlockSelection { indices })
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::Config("block selection is empty".into()));
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i == 0 || i > layers) {
            return Err(Error::Config(format!(
                "block index {bad} outside [1, {layers}]"
            )));
        }
        Ok(())
    }

    pub fn dim(&self, hidden: usize) -> usize {
        self.indices.len() * hidden
    }

    pub fn to_spec_string(&self) -> String {
        self.indices
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn bad_selection(spec: &str) -> Error {
    Error::Config(format!(
        "cannot parse block selection {spec:?} (expected forms like \"1-6\" or \"9,10,11,12\")"
    ))
}

/// Per-input [CLS] hidden state after each of the L blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub cls_states: Mat,
}

impl EncoderOutput {
    pub fn layers(&self) -> usize {
        self.cls_states.rows
    }

    pub fn hidden(&self) -> usize {
        self.cls_states.cols
    }
}

/// Concatenate the selected blocks' [CLS] states in ascending block order.
pub fn concat_cls(out: &EncoderOutput, sel: &BlockSelection) -> Result<Vec<f64>> {
    sel.validate(out.layers())?;
    let mut v = Vec::with_capacity(sel.dim(out.hidden()));
    for &block in &sel.indices {
        v.extend_from_slice(out.cls_states.row(block - 1));
    }
    Ok(v)
}

/// Classification head over concatenated [CLS] features.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub output: usize,
}

impl HeadConfig {
    pub fn new(input_dim: usize) -> Self {
        HeadConfig {
            input_dim,
            hidden: HEAD_HIDDEN,
            output: 2,
        }
    }
}

pub fn init_head_params(params: &mut ParamSet, cfg: &HeadConfig, rng: &mut ChaCha8Rng) {
    params.insert(
        "head.fc1.weight".into(),
        Mat::he_normal(cfg.input_dim, cfg.hidden, rng),
    );
    params.insert("head.fc1.bias".into(), Mat::zeros(1, cfg.hidden));
    params.insert(
        "head.out.weight".into(),
        Mat::he_normal(cfg.hidden, cfg.output, rng),
    );
    params.insert("head.out.bias".into(), Mat::zeros(1, cfg.output));
}

/// Head graph: dropout(x) -> fc1 -> relu -> dropout -> out. Returns the
/// penultimate (pre-dropout relu) node and the logits node.
pub fn head_graph(
    g: &mut Graph,
    binder: &mut ParamBinder,
    x: VarId,
    dropout_rng: &mut Option<ChaCha8Rng>,
) -> (VarId, VarId) {
    let x = head_dropout(g, x, dropout_rng);
    let w1 = binder.bind(g, "head.fc1.weight");
    let b1 = binder.bind(g, "head.fc1.bias");
    let z = g.matmul(x, w1);
    let z = g.add_row(z, b1);
    let penultimate = g.relu(z);
    let dropped = head_dropout(g, penultimate, dropout_rng);
    let w2 = binder.bind(g, "head.out.weight");
    let b2 = binder.bind(g, "head.out.bias");
    let z2 = g.matmul(dropped, w2);
    let logits = g.add_row(z2, b2);
    (penultimate, logits)
}

fn head_dropout(g: &mut Graph, x: VarId, rng: &mut Option<ChaCha8Rng>) -> VarId {
    match rng {
        Some(r) => {
            let mask = dropout_mask(g.value(x).len(), HEAD_DROPOUT, Some(r));
            g.mul_mask(x, mask)
        }
        None => x,
    }
}

/// Inference-mode head pass over a feature matrix: (penultimate n x 256,
/// logits n x 2). Errors name the expected and actual feature dims.
pub fn head_forward(params: &ParamSet, features: &Mat) -> Result<(Mat, Mat)> {
    let expected = params
        .get("head.fc1.weight")
        .ok_or_else(|| Error::Checkpoint {
            message: "head parameters missing".into(),
            names: vec!["head.fc1.weight".into()],
        })?
        .rows;
    if features.cols != expected {
        return Err(Error::dim("head_forward features", expected, features.cols));
    }
    let mut g = Graph::new();
    let mut binder = ParamBinder::new(params);
    let x = g.leaf(features.clone());
    let mut no_dropout = None;
    let (pen, logits) = head_graph(&mut g, &mut binder, x, &mut no_dropout);
    Ok((g.value(pen).clone(), g.value(logits).clone()))
}

/// The full text classifier: backbone + block selection + head.
#[derive(Debug, Clone)]
pub struct TextModel {
    pub config: BackboneConfig,
    pub selection: BlockSelection,
    pub head: HeadConfig,
    tokenizer: HashTokenizer,
    params: ParamSet,
}

impl TextModel {
    /// Build with a toy (random) or pretrained (checkpoint-loaded) backbone;
    /// the head is always freshly initialized from `head_seed`.
    pub fn new(config: BackboneConfig, selection: BlockSelection, head_seed: u64) -> Result<Self> {
        config.validate()?;
        selection.validate(config.layers)?;
        let mut params = ParamSet::new();
        match &config.kind {
            BackboneKind::Toy { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                encoder::init_backbone_params(
                    &mut params,
                    config.layers,
                    config.hidden,
                    config.ffn_factor,
                    config.vocab_size,
                    config.max_seq_len,
                    &mut rng,
                );
            }
            BackboneKind::Pretrained { checkpoint } => {
                let (loaded, _) = store::load_params(checkpoint)?;
                validate_backbone_params(&loaded, config.layers, config.hidden)?;
                for name in backbone_param_names(config.layers) {
                    params.insert(name.clone(), loaded[&name].clone());
                }
            }
        }
        let head = HeadConfig::new(selection.dim(config.hidden));
        let mut head_rng = ChaCha8Rng::seed_from_u64(head_seed);
        init_head_params(&mut params, &head, &mut head_rng);
        let tokenizer = HashTokenizer::new(config.vocab_size, config.max_seq_len);
        Ok(TextModel {
            config,
            selection,
            head,
            tokenizer,
            params,
        })
    }

    /// Rebuild a fine-tuned model from a saved parameter set.
    pub fn from_params(
        config: BackboneConfig,
        selection: BlockSelection,
        params: ParamSet,
    ) -> Result<Self> {
        config.validate()?;
        selection.validate(config.layers)?;
        validate_backbone_params(&params, config.layers, config.hidden)?;
        let head = HeadConfig::new(selection.dim(config.hidden));
        let mut offenders = Vec::new();
        for (name, rows, cols) in [
            ("head.fc1.weight", head.input_dim, head.hidden),
            ("head.fc1.bias", 1, head.hidden),
            ("head.out.weight", head.hidden, head.output),
            ("head.out.bias", 1, head.output),
        ] {
            match params.get(name) {
                Some(m) if m.shape() == (rows, cols) => {}
                Some(m) => offenders.push(format!("{name} (shape {:?})", m.shape())),
                None => offenders.push(format!("{name} (missing)")),
            }
        }
        if !offenders.is_empty() {
            return Err(Error::Checkpoint {
                message: "head parameters do not match config".into(),
                names: offenders,
            });
        }
        let tokenizer = HashTokenizer::new(config.vocab_size, config.max_seq_len);
        Ok(TextModel {
            config,
            selection,
            head,
            tokenizer,
            params,
        })
    }

    pub fn tokenizer(&self) -> &HashTokenizer {
        &self.tokenizer
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.config.max_seq_len {
            return Err(Error::dim(
                "token sequence",
                self.config.max_seq_len,
                ids.len(),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::Data(format!("token id {bad} outside vocab")));
        }
        Ok(())
    }

    /// Per-text L x H [CLS] trajectories, inference mode.
    pub fn encode(&self, token_ids: &[Vec<u32>]) -> Result<Vec<EncoderOutput>> {
        token_ids
            .par_iter()
            .map(|ids| {
                self.check_ids(ids)?;
                let mut g = Graph::new();
                let mut binder = ParamBinder::new(&self.params);
                let cls = encoder::backbone_graph(
                    &mut g,
                    &mut binder,
                    ids,
                    self.config.layers,
                    self.config.hidden,
                );
                let mut states = Mat::zeros(self.config.layers, self.config.hidden);
                for (row, node) in cls.iter().enumerate() {
                    states.row_mut(row).copy_from_slice(g.value(*node).row(0));
                }
                if !states.all_finite() {
                    return Err(Error::Data("non-finite encoder state".into()));
                }
                Ok(EncoderOutput { cls_states: states })
            })
            .collect()
    }

    /// Forward graph for one example through backbone, selection concat, and
    /// head. Returns (binder, logits node).
    fn example_graph<'a>(
        &'a self,
        g: &mut Graph,
        ids: &[u32],
        dropout_rng: &mut Option<ChaCha8Rng>,
    ) -> (ParamBinder<'a>, VarId) {
        let mut binder = ParamBinder::new(&self.params);
        let cls =
            encoder::backbone_graph(g, &mut binder, ids, self.config.layers, self.config.hidden);
        let selected: Vec<VarId> = self
            .selection
            .indices
            .iter()
            .map(|&block| cls[block - 1])
            .collect();
        let features = g.concat_cols(&selected);
        let (_, logits) = head_graph(g, &mut binder, features, dropout_rng);
        (binder, logits)
    }

    fn example_loss(
        &self,
        data: &ModelBatch,
        row: usize,
        loss: &SmoothingLossConfig,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, GradMap)> {
        let token_ids = data
            .token_ids
            .as_ref()
            .ok_or_else(|| Error::Data("text channel missing from batch".into()))?;
        let labels = data.labels_required()?;
        let ids = &token_ids[row];
        self.check_ids(ids)?;
        let mut g = Graph::new();
        let mut rng = dropout_seed.map(|s| example_rng(s, 1, row as u64));
        let (binder, logits) = self.example_graph(&mut g, ids, &mut rng);
        let loss_var = g.smoothed_ce(logits, &[usize::from(labels[row])], loss.eps);
        let value = g.value(loss_var).at(0, 0);
        let node_grads = g.backward(loss_var);
        Ok((value, binder.grads(&g, &node_grads)))
    }

    pub fn score_one(&self, ids: &[u32]) -> Result<f64> {
        self.check_ids(ids)?;
        let mut g = Graph::new();
        let mut no_dropout = None;
        let (_, logits) = self.example_graph(&mut g, ids, &mut no_dropout);
        let p = softmax_rows(g.value(logits));
        Ok(p.at(0, 1))
    }
}

impl NeuralModel for TextModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn group_order(&self) -> Vec<String> {
        let mut order = vec!["head".to_string()];
        for i in (1..=self.config.layers).rev() {
            order.push(format!("block{i}"));
        }
        order.push("embed".to_string());
        order
    }

    fn group_of(&self, param_name: &str) -> Result<String> {
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
        batch_mean_grads(rows, |row| self.example_loss(data, row, loss, dropout_seed))
    }

    fn scores(&self, data: &ModelBatch) -> Result<Vec<f64>> {
        let token_ids = data
            .token_ids
            .as_ref()
            .ok_or_else(|| Error::Data("text channel missing from batch".into()))?;
        token_ids.par_iter().map(|ids| self.score_one(ids)).collect()
    }
}

/// Depth group of a text-model parameter name.
pub fn text_param_group(param_name: &str) -> Result<String> {
    if param_name.starts_with("head.") {
        return Ok("head".into());
    }
    if param_name.starts_with("backbone.embed.") {
        return Ok("embed".into());
    }
    if let Some(rest) = param_name.strip_prefix("backbone.") {
        if let Some(block) = rest.split('.').next() {
            if block.starts_with("block") {
                return Ok(block.to_string());
            }
        }
    }
    Err(Error::Config(format!("unknown parameter {param_name}")))
}

/// Mean loss and gradients over `rows`, accumulated in fixed chunk order so
/// results do not depend on thread scheduling.
pub fn batch_mean_grads(
    rows: &[usize],
    per_example: impl Fn(usize) -> Result<(f64, GradMap)> + Sync,
) -> Result<(f64, GradMap)> {
    if rows.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let chunk_size = rows.len().div_ceil(GRAD_CHUNKS);
    let chunks: Vec<&[usize]> = rows.chunks(chunk_size).collect();
    let partials: Vec<Result<(f64, GradMap)>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut loss_sum = 0.0;
            let mut grad_sum = GradMap::new();
            for &row in *chunk {
                let (loss, grads) = per_example(row)?;
                loss_sum += loss;
                crate::nn::accumulate_grads(&mut grad_sum, &grads);
            }
            Ok((loss_sum, grad_sum))
        })
        .collect();
    let mut loss_sum = 0.0;
    let mut grad_sum = GradMap::new();
    for partial in partials {
        let (l, g) = partial?;
        loss_sum += l;
        crate::nn::accumulate_grads(&mut grad_sum, &g);
    }
    let n = rows.len() as f64;
    crate::nn::scale_grads(&mut grad_sum, 1.0 / n);
    Ok((loss_sum / n, grad_sum))
}

/// Unweighted mean of per-model unreliable-class probabilities.
pub fn ensemble_block_variants(models: &[TextModel], data: &ModelBatch) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(Error::Config("ensemble needs at least one model".into()));
    }
    let mut sums: Option<Vec<f64>> = None;
    for model in models {
        let scores = model.scores(data)?;
        match &mut sums {
            Some(acc) => {
                for (a, s) in acc.iter_mut().zip(&scores) {
                    *a += s;
                }
            }
            None => sums = Some(scores),
        }
    }
    let mut out = sums.expect("at least one model");
    for v in &mut out {
        *v /= models.len() as f64;
    }
    Ok(out)
}
