//! End-to-end glue: record cleaning, batch featurization, fold pipelines for
//! cross validation, and the strategy benchmark that pretrains both
//! submodels, assembles S1-S4, and compares them on a held-out split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{drop_invalid, fill_missing, fold_assignments, min_timestamp, CleanRecord, DropReport, RawRecord};
use crate::error::{Error, Result};
use crate::evaluation::{roc_auc, ScoredPredictions};
use crate::features::{build_meta_matrix, normalize_text, ImageResolver, MetaFeaturizer, UriDimensionResolver};
use crate::fusion::{
    assemble, save_backbone_checkpoint, save_meta_checkpoint, save_text_checkpoint, FusionConfig,
    FusionModel, StrategyFixtures, StrategyId,
};
use crate::tabular::{train_base, train_blending, train_meta_mlp, train_stacking, BaseLearnerSpec, EnsembleConfig, LearnerKind};
use crate::textenc::{BackboneConfig, BlockSelection, HashTokenizer, TextModel};
use crate::training::{
    train, DiscriminativeLrMap, FoldArtifacts, FoldPipeline, ModelBatch, NeuralModel,
    OptimizerConfig, SmoothingLossConfig, TrainHistory, UnfreezeSchedule, LR_DECAY_XI,
};

/// Validate, fill, and return the cleaned corpus plus the drop report. The
/// timestamp floor is the minimum present timestamp of these records (the
/// caller must pass the training split only).
pub fn clean_records(raw: &[RawRecord]) -> Result<(Vec<CleanRecord>, DropReport)> {
    let (kept, report) = drop_invalid(raw);
    let floor = min_timestamp(&kept)?;
    Ok((fill_missing(&kept, floor), report))
}

fn labels_of(records: &[CleanRecord]) -> Result<Vec<u8>> {
    records
        .iter()
        .map(|r| {
            r.label
                .ok_or_else(|| Error::Data(format!("record {} is unlabeled", r.id)))
        })
        .collect()
}

fn tokenize_all(records: &[CleanRecord], tokenizer: &HashTokenizer) -> Vec<Vec<u32>> {
    records
        .iter()
        .map(|r| tokenizer.tokenize(&normalize_text(&r.text).text))
        .collect()
}

/// Featurize the training split: fits the user-score table and the
/// standardizer on it, applies leave-one-out scores to its own rows.
pub fn featurize_training(
    records: &[CleanRecord],
    tokenizer: &HashTokenizer,
    resolver: &dyn ImageResolver,
) -> Result<(ModelBatch, MetaFeaturizer)> {
    let (meta, featurizer) = build_meta_matrix(records, resolver)?;
    Ok((
        ModelBatch {
            token_ids: Some(tokenize_all(records, tokenizer)),
            meta: Some(meta),
            labels: Some(labels_of(records)?),
            ids: records.iter().map(|r| r.id.clone()).collect(),
        },
        featurizer,
    ))
}

/// Featurize held-out or unlabeled records with an already-fitted featurizer.
pub fn featurize_eval(
    records: &[CleanRecord],
    tokenizer: &HashTokenizer,
    featurizer: &MetaFeaturizer,
    resolver: &dyn ImageResolver,
) -> Result<ModelBatch> {
    let meta = featurizer.transform(records, resolver)?;
    let labels = if records.iter().all(|r| r.label.is_some()) {
        Some(labels_of(records)?)
    } else {
        None
    };
    Ok(ModelBatch {
        token_ids: Some(tokenize_all(records, tokenizer)),
        meta: Some(meta),
        labels,
        ids: records.iter().map(|r| r.id.clone()).collect(),
    })
}

/// Stratified single split: fold 0 of a k-fold assignment is the holdout.
pub fn train_valid_split(
    records: &[CleanRecord],
    k: usize,
    seed: u64,
) -> Result<(Vec<CleanRecord>, Vec<CleanRecord>)> {
    let labels = labels_of(records)?;
    let assignments = fold_assignments(&labels, k, seed, true);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if assignments[i] == 0 {
            valid.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, valid))
}

fn artifacts_of(featurizer: &MetaFeaturizer) -> FoldArtifacts {
    FoldArtifacts {
        user_table_sources: featurizer.user_table.source_row_ids.clone(),
        standardizer_sources: featurizer.standardizer.source_row_ids.clone(),
    }
}

/// Which tabular model a fold trains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TabularLearner {
    Single(BaseLearnerSpec),
    Stack(EnsembleConfig),
    Blend(EnsembleConfig),
}

impl TabularLearner {
    pub fn name(&self) -> String {
        match self {
            TabularLearner::Single(spec) => spec.kind.name().to_string(),
            TabularLearner::Stack(_) => "stacking".to_string(),
            TabularLearner::Blend(_) => "blending".to_string(),
        }
    }
}

/// Metadata-only fold pipeline: features and model are fit strictly on the
/// training fold.
pub struct TabularFoldPipeline {
    pub learner: TabularLearner,
}

impl FoldPipeline for TabularFoldPipeline {
    fn name(&self) -> String {
        format!("tabular:{}", self.learner.name())
    }

    fn fit_score(
        &self,
        train: &[CleanRecord],
        valid: &[CleanRecord],
        seed: u64,
    ) -> Result<(Vec<f64>, FoldArtifacts)> {
        let resolver = UriDimensionResolver;
        let (x, featurizer) = build_meta_matrix(train, &resolver)?;
        let y = labels_of(train)?;
        let xv = featurizer.transform(valid, &resolver)?;
        let scores = match &self.learner {
            TabularLearner::Single(spec) => {
                let mut spec = spec.clone();
                spec.seed = seed;
                train_base(&spec, &x, &y)?.predict_proba(&xv)?
            }
            TabularLearner::Stack(cfg) => {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                train_stacking(&cfg, &x, &y)?.predict_proba(&xv)?
            }
            TabularLearner::Blend(cfg) => {
                let mut cfg = cfg.clone();
                cfg.seed = seed;
                train_blending(&cfg, &x, &y)?.predict_proba(&xv)?
            }
        };
        Ok((scores, artifacts_of(&featurizer)))
    }
}

/// Settings for gradient-trained models at desk scale. The §-style defaults
/// (max_lr 2e-5, 20 epochs, batch 32) live in `OptimizerConfig::default`;
/// these override rate and length for the tiny backbone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuralTrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub weight_decay: f64,
    pub gradual_unfreezing: bool,
    pub discriminative_lr: bool,
    pub seed: u64,
}

impl NeuralTrainSettings {
    /// Text fine-tuning at desk scale: the full §-regimen shape (warmup,
    /// unfreezing, discriminative rates) with a rate sized for the toy net.
    pub fn desk_text(seed: u64) -> Self {
        NeuralTrainSettings {
            epochs: 6,
            batch_size: 32,
            max_lr: 2e-3,
            weight_decay: 0.01,
            gradual_unfreezing: true,
            discriminative_lr: true,
            seed,
        }
    }

    /// Fused training: short, everything trainable from the start.
    pub fn desk_fusion(seed: u64) -> Self {
        NeuralTrainSettings {
            epochs: 2,
            batch_size: 32,
            max_lr: 1e-3,
            weight_decay: 0.01,
            gradual_unfreezing: false,
            discriminative_lr: true,
            seed,
        }
    }

    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_lr: self.max_lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            weight_decay: self.weight_decay,
            seed: self.seed,
            ..OptimizerConfig::default()
        }
    }
}

/// Train any NeuralModel under the configured regimen.
pub fn train_neural(
    model: &mut dyn NeuralModel,
    data: &ModelBatch,
    valid: Option<&ModelBatch>,
    settings: &NeuralTrainSettings,
) -> Result<TrainHistory> {
    let groups = model.group_order();
    let schedule = if settings.gradual_unfreezing {
        UnfreezeSchedule::new(groups.clone())
    } else {
        UnfreezeSchedule::all_at_once(groups.clone())
    };
    let lr_map = if settings.discriminative_lr {
        DiscriminativeLrMap::from_group_order(&groups, LR_DECAY_XI)
    } else {
        DiscriminativeLrMap::uniform(&groups)
    };
    train(
        model,
        data,
        valid,
        &settings.optimizer(),
        &SmoothingLossConfig::default(),
        &schedule,
        &lr_map,
    )
}

/// Text-only fold pipeline over a toy backbone.
pub struct TextFoldPipeline {
    pub backbone: BackboneConfig,
    pub selection: BlockSelection,
    pub settings: NeuralTrainSettings,
}

impl FoldPipeline for TextFoldPipeline {
    fn name(&self) -> String {
        format!("text:blocks={}", self.selection.to_spec_string())
    }

    fn fit_score(
        &self,
        train: &[CleanRecord],
        valid: &[CleanRecord],
        seed: u64,
    ) -> Result<(Vec<f64>, FoldArtifacts)> {
        let mut backbone = self.backbone.clone();
        if let crate::textenc::BackboneKind::Toy { seed: s } = &mut backbone.kind {
            *s = seed;
        }
        let mut model = TextModel::new(backbone, self.selection.clone(), seed ^ 0x5EED)?;
        let tokenizer = model.tokenizer().clone();
        let (batch, featurizer) = featurize_training(train, &tokenizer, &UriDimensionResolver)?;
        let mut settings = self.settings.clone();
        settings.seed = seed;
        train_neural(&mut model, &batch, None, &settings)?;
        let eval = featurize_eval(valid, &tokenizer, &featurizer, &UriDimensionResolver)?;
        let scores = model.scores(&eval)?;
        Ok((scores, artifacts_of(&featurizer)))
    }
}

/// Per-strategy outcome on the held-out split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyBenchReport {
    pub seed: u64,
    pub n_train: usize,
    pub n_valid: usize,
    pub meta_mlp_auc: f64,
    pub text_auc: f64,
    pub strategy_auc: BTreeMap<String, f64>,
    pub checkpoints: BTreeMap<String, PathBuf>,
}

/// Everything criterion-style strategy comparisons need: pretrain the meta
/// MLP, fine-tune the text model (saving its pre-fine-tuning backbone as the
/// pretrained stand-in), assemble the requested strategies, train each fused
/// model briefly, and report held-out AUCs.
#[allow(clippy::too_many_arguments)]
pub fn run_strategy_bench(
    corpus: &[CleanRecord],
    seed: u64,
    work_dir: &Path,
    backbone: &BackboneConfig,
    selection: &BlockSelection,
    fusion_cfg: &FusionConfig,
    text_settings: &NeuralTrainSettings,
    fusion_settings: &NeuralTrainSettings,
    which: &[StrategyId],
) -> Result<StrategyBenchReport> {
    std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
    let (train_recs, valid_recs) = train_valid_split(corpus, 5, seed)?;

    // The text model starts from toy-random weights; that initialization IS
    // the pretrained-LM stand-in, so save it before fine-tuning.
    let mut backbone_cfg = backbone.clone();
    if let crate::textenc::BackboneKind::Toy { seed: s } = &mut backbone_cfg.kind {
        *s = seed;
    }
    let mut text_model = TextModel::new(backbone_cfg, selection.clone(), seed ^ 0xAB)?;
    let tokenizer = text_model.tokenizer().clone();
    let backbone_dir = work_dir.join("backbone");
    save_backbone_checkpoint(&backbone_dir, &text_model, seed)?;

    let resolver = UriDimensionResolver;
    let (train_batch, featurizer) = featurize_training(&train_recs, &tokenizer, &resolver)?;
    let valid_batch = featurize_eval(&valid_recs, &tokenizer, &featurizer, &resolver)?;
    let valid_labels = valid_batch
        .labels
        .clone()
        .ok_or_else(|| Error::Data("validation split must be labeled".into()))?;
    let auc_of = |scores: Vec<f64>| -> Result<f64> {
        roc_auc(&ScoredPredictions::new(scores, valid_labels.clone())?)
    };

    // Meta submodel pretraining.
    let meta_spec = BaseLearnerSpec::with_defaults(LearnerKind::Mlp, seed);
    let meta_model = train_meta_mlp(
        &meta_spec,
        train_batch.meta.as_ref().expect("meta present"),
        train_batch.labels.as_ref().expect("labels present"),
    )?;
    let meta_dir = work_dir.join("meta");
    save_meta_checkpoint(&meta_dir, &meta_model, seed, 0, serde_json::Value::Null)?;
    let meta_mlp_auc = auc_of(
        crate::tabular::TabularModel::predict_proba(
            &meta_model,
            valid_batch.meta.as_ref().expect("meta present"),
        )?,
    )?;

    // Text fine-tuning.
    let mut text_settings = text_settings.clone();
    text_settings.seed = seed;
    let history = train_neural(&mut text_model, &train_batch, Some(&valid_batch), &text_settings)?;
    let text_auc = auc_of(text_model.scores(&valid_batch)?)?;
    let text_dir = work_dir.join("text");
    save_text_checkpoint(
        &text_dir,
        &text_model,
        seed,
        history.steps.len() as u64,
        serde_json::json!({ "val_auc": text_auc }),
    )?;

    let fixtures = StrategyFixtures {
        backbone_dir: backbone_dir.clone(),
        text_dir: text_dir.clone(),
        meta_dir: meta_dir.clone(),
    };

    let mut strategy_auc = BTreeMap::new();
    let mut checkpoints: BTreeMap<String, PathBuf> = BTreeMap::new();
    checkpoints.insert("backbone".into(), backbone_dir);
    checkpoints.insert("text".into(), text_dir);
    checkpoints.insert("meta".into(), meta_dir);
    for &id in which {
        let plan = fixtures.plan(id, seed);
        let mut fused = assemble(&plan, fusion_cfg)?;
        let mut fusion_settings = fusion_settings.clone();
        fusion_settings.seed = seed;
        train_neural(&mut fused, &train_batch, Some(&valid_batch), &fusion_settings)?;
        let auc = auc_of(fused.scores(&valid_batch)?)?;
        strategy_auc.insert(id.name().to_string(), auc);

        let fused_dir = work_dir.join(format!("fused_{}", id.name()));
        crate::fusion::save_checkpoint(
            &fused_dir,
            &fused.to_checkpoint(seed, 0, serde_json::json!({ "val_auc": auc })),
        )?;
        checkpoints.insert(format!("fused_{}", id.name()), fused_dir);
    }

    Ok(StrategyBenchReport {
        seed,
        n_train: train_recs.len(),
        n_valid: valid_recs.len(),
        meta_mlp_auc,
        text_auc,
        strategy_auc,
        checkpoints,
    })
}

/// Fused-model fold pipeline: per fold it pretrains both submodels, runs the
/// given strategy, and scores the held-out fold.
pub struct FusionFoldPipeline {
    pub backbone: BackboneConfig,
    pub selection: BlockSelection,
    pub fusion_cfg: FusionConfig,
    pub strategy: StrategyId,
    pub text_settings: NeuralTrainSettings,
    pub fusion_settings: NeuralTrainSettings,
    pub scratch_dir: PathBuf,
}

impl FoldPipeline for FusionFoldPipeline {
    fn name(&self) -> String {
        format!("fusion:{}", self.strategy.name())
    }

    fn fit_score(
        &self,
        train: &[CleanRecord],
        valid: &[CleanRecord],
        seed: u64,
    ) -> Result<(Vec<f64>, FoldArtifacts)> {
        let work = self.scratch_dir.join(format!("fold_seed{seed}"));
        std::fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;
        let mut backbone_cfg = self.backbone.clone();
        if let crate::textenc::BackboneKind::Toy { seed: s } = &mut backbone_cfg.kind {
            *s = seed;
        }
        let mut text_model = TextModel::new(backbone_cfg, self.selection.clone(), seed ^ 0xAB)?;
        let tokenizer = text_model.tokenizer().clone();
        let resolver = UriDimensionResolver;
        let (train_batch, featurizer) = featurize_training(train, &tokenizer, &resolver)?;

        let backbone_dir = work.join("backbone");
        save_backbone_checkpoint(&backbone_dir, &text_model, seed)?;
        let meta_spec = BaseLearnerSpec::with_defaults(LearnerKind::Mlp, seed);
        let meta_model = train_meta_mlp(
            &meta_spec,
            train_batch.meta.as_ref().expect("meta present"),
            train_batch.labels.as_ref().expect("labels present"),
        )?;
        let meta_dir = work.join("meta");
        save_meta_checkpoint(&meta_dir, &meta_model, seed, 0, serde_json::Value::Null)?;
        let mut ts = self.text_settings.clone();
        ts.seed = seed;
        train_neural(&mut text_model, &train_batch, None, &ts)?;
        let text_dir = work.join("text");
        save_text_checkpoint(&text_dir, &text_model, seed, 0, serde_json::Value::Null)?;

        let fixtures = StrategyFixtures {
            backbone_dir,
            text_dir,
            meta_dir,
        };
        let mut fused = assemble(&fixtures.plan(self.strategy, seed), &self.fusion_cfg)?;
        let mut fs = self.fusion_settings.clone();
        fs.seed = seed;
        train_neural(&mut fused, &train_batch, None, &fs)?;

        let eval = featurize_eval(valid, &tokenizer, &featurizer, &resolver)?;
        let scores = fused.scores(&eval)?;
        Ok((scores, artifacts_of(&featurizer)))
    }
}

/// Score an already-assembled fused model (no training); used by `evaluate`
/// style flows.
pub fn score_fusion(
    model: &FusionModel,
    records: &[CleanRecord],
    featurizer: &MetaFeaturizer,
) -> Result<Vec<f64>> {
    let batch = featurize_eval(
        records,
        model.tokenizer(),
        featurizer,
        &UriDimensionResolver,
    )?;
    model.scores(&batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_corpus, SignalSpec};

    fn desk_corpus(n: usize, seed: u64) -> Vec<CleanRecord> {
        let raw = synthesize_corpus(n, seed, &SignalSpec::default());
        clean_records(&raw).unwrap().0
    }

    #[test]
    fn clean_records_pipeline_fills_and_reports() {
        let mut raw = synthesize_corpus(50, 3, &SignalSpec::default());
        raw[0].label = Some(7);
        let (clean, report) = clean_records(&raw).unwrap();
        assert_eq!(clean.len() + report.len(), 50);
        assert_eq!(report.len(), 1);
        assert!(clean.iter().all(|r| r.label.map_or(true, |l| l <= 1)));
    }

    #[test]
    fn featurize_training_produces_aligned_channels() {
        let corpus = desk_corpus(40, 4);
        let tokenizer = HashTokenizer::new(512, 12);
        let (batch, featurizer) =
            featurize_training(&corpus, &tokenizer, &UriDimensionResolver).unwrap();
        assert_eq!(batch.len(), 40);
        batch.validate().unwrap();
        assert_eq!(featurizer.standardizer.source_row_ids.len(), 40);
        let eval = featurize_eval(&corpus[..5], &tokenizer, &featurizer, &UriDimensionResolver)
            .unwrap();
        assert_eq!(eval.len(), 5);
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let corpus = desk_corpus(100, 5);
        let (train, valid) = train_valid_split(&corpus, 5, 1).unwrap();
        assert_eq!(train.len() + valid.len(), 100);
        assert_eq!(valid.len(), 20);
        let train_ids: std::collections::BTreeSet<&str> =
            train.iter().map(|r| r.id.as_str()).collect();
        assert!(valid.iter().all(|r| !train_ids.contains(r.id.as_str())));
        assert!(valid.iter().any(|r| r.label == Some(1)));
    }

    #[test]
    fn tabular_fold_pipeline_runs_and_tracks_provenance() {
        let corpus = desk_corpus(120, 6);
        let pipeline = TabularFoldPipeline {
            learner: TabularLearner::Single(BaseLearnerSpec::with_defaults(
                LearnerKind::DecisionTree,
                0,
            )),
        };
        let report = crate::training::cross_validate(&pipeline, &corpus, 4, 2).unwrap();
        assert!(report.leakage_free());
        assert!(report.mean_auc > 0.5, "mean {}", report.mean_auc);
    }
}
