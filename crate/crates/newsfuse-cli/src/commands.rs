//! Subcommand implementations. Every command writes its fully resolved
//! configuration and artifacts into the run's output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use newsfuse::dataset::{load_corpus, make_folds_with, save_corpus, save_drop_report, synthesize_corpus, CleanRecord, SignalSpec};
use newsfuse::evaluation::{fingerprint, reference, MetricsReport, ReportTable, ScoredPredictions};
use newsfuse::features::UriDimensionResolver;
use newsfuse::fusion::{assemble, load_checkpoint, save_checkpoint, CombineMode, FusionConfig, StrategyId, StrategyPlan};
use newsfuse::pipeline::{
    clean_records, featurize_eval, featurize_training, train_neural, train_valid_split,
    NeuralTrainSettings, TabularFoldPipeline, TabularLearner, TextFoldPipeline,
};
use newsfuse::tabular::{train_base, train_blending, train_meta_mlp, train_stacking, BaseLearnerSpec, EnsembleConfig, LearnerKind, ALL_LEARNERS};
use newsfuse::textenc::{BlockSelection, TextModel};
use newsfuse::training::{cross_validate, NeuralModel};
use newsfuse::{Error, Result};

use crate::config::RunConfig;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("json"))
        .map_err(|e| Error::io(path, e))
}

fn write_resolved_config(out_dir: &Path, resolved: serde_json::Value) -> Result<()> {
    write_json(&out_dir.join("run_config.json"), &resolved)
}

fn load_clean(cfg: &RunConfig, corpus: &Path) -> Result<Vec<CleanRecord>> {
    let raw = load_corpus(corpus, &cfg.dataset.schema)?;
    let (clean, report) = clean_records(&raw)?;
    if !report.is_empty() {
        eprintln!("dropped {} invalid rows", report.len());
    }
    Ok(clean)
}

fn write_predictions(out_dir: &Path, ids: &[String], scores: &[f64]) -> Result<()> {
    let path = out_dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record(["id", "score"]).map_err(|e| Error::Data(e.to_string()))?;
    for (id, s) in ids.iter().zip(scores) {
        w.write_record([id.as_str(), &format!("{s}")])
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn write_labels(out_dir: &Path, records: &[CleanRecord]) -> Result<()> {
    let path = out_dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record(["id", "label"]).map_err(|e| Error::Data(e.to_string()))?;
    for r in records {
        if let Some(l) = r.label {
            w.write_record([r.id.as_str(), &l.to_string()])
                .map_err(|e| Error::Data(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn write_metrics(out_dir: &Path, name: &str, scores: &[f64], labels: &[u8], config_json: &serde_json::Value) -> Result<f64> {
    let preds = ScoredPredictions::new(scores.to_vec(), labels.to_vec())?;
    let fp = fingerprint(&config_json.to_string());
    let report = MetricsReport::from_predictions(name, &preds, fp)?;
    let auc = report.auc;
    write_json(&out_dir.join("metrics.json"), &serde_json::to_value(&report).expect("metrics"))?;
    println!("{name}: AUC {auc:.6} (n_pos {}, n_neg {})", report.n_pos, report.n_neg);
    Ok(auc)
}

pub fn cmd_synth(cfg: &RunConfig, n: usize, seed: u64, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let spec = SignalSpec {
        reliable_share: cfg.synth.reliable_share,
        strength: cfg.synth.strength,
        missing_rate: cfg.synth.missing_rate,
        ..SignalSpec::default()
    };
    let raw = synthesize_corpus(n, seed, &spec);
    let (clean, _) = clean_records(&raw)?;
    let corpus_path = out_dir.join("corpus.csv");
    save_corpus(&corpus_path, &clean, &cfg.dataset.schema)?;
    let resolved = serde_json::json!({
        "command": "synth", "n": n, "seed": seed,
        "signal": { "reliable_share": spec.reliable_share, "strength": spec.strength,
                    "missing_rate": spec.missing_rate },
        "corpus": corpus_path,
    });
    write_resolved_config(out_dir, resolved)?;
    println!("wrote {} records to {}", clean.len(), corpus_path.display());
    Ok(())
}

pub fn cmd_preprocess(cfg: &RunConfig, corpus: &Path, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let raw = load_corpus(corpus, &cfg.dataset.schema)?;
    let (clean, report) = clean_records(&raw)?;
    save_corpus(&out_dir.join("cleaned.csv"), &clean, &cfg.dataset.schema)?;
    save_drop_report(&out_dir.join("drop_report.json"), &report)?;
    // Fold plan over the labeled subset.
    let labeled: Vec<CleanRecord> = clean.iter().filter(|r| r.label.is_some()).cloned().collect();
    if labeled.len() >= cfg.dataset.folds {
        let plan = make_folds_with(&labeled, cfg.dataset.folds, cfg.dataset.seed, cfg.dataset.stratified)?;
        write_json(&out_dir.join("fold_plan.json"), &serde_json::to_value(&plan).expect("plan"))?;
    }
    let resolved = serde_json::json!({
        "command": "preprocess", "corpus": corpus, "seed": cfg.dataset.seed,
        "folds": cfg.dataset.folds, "stratified": cfg.dataset.stratified,
        "schema": cfg.dataset.schema,
        "kept": clean.len(), "dropped": report.len(),
    });
    write_resolved_config(out_dir, resolved)?;
    println!("kept {} rows, dropped {}", clean.len(), report.len());
    Ok(())
}

fn parse_tabular_learner(cfg: &RunConfig, model: &str, seed: u64) -> Result<TabularLearner> {
    Ok(match model {
        "stack" | "stacking" => TabularLearner::Stack(EnsembleConfig::default_stack(seed)),
        "blend" | "blending" => TabularLearner::Blend(EnsembleConfig::default_blend(seed)),
        kind => {
            let _ = cfg;
            TabularLearner::Single(BaseLearnerSpec::with_defaults(kind.parse()?, seed))
        }
    })
}

pub fn cmd_train_tabular(
    cfg: &RunConfig,
    corpus: &Path,
    model: &str,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let clean = load_clean(cfg, corpus)?;
    let (train_recs, valid_recs) = train_valid_split(&clean, 5, seed)?;
    let resolver = UriDimensionResolver;
    let (x, featurizer) = newsfuse::features::build_meta_matrix(&train_recs, &resolver)?;
    let y: Vec<u8> = train_recs.iter().map(|r| r.label.unwrap_or(0)).collect();
    let xv = featurizer.transform(&valid_recs, &resolver)?;

    let learner = parse_tabular_learner(cfg, model, seed)?;
    let resolved = serde_json::json!({
        "command": "train-tabular", "corpus": corpus, "model": model, "seed": seed,
        "n_train": train_recs.len(), "n_valid": valid_recs.len(),
        "learner": serde_json::to_value(&learner).expect("learner"),
    });
    write_resolved_config(out_dir, resolved.clone())?;

    let scores = match &learner {
        TabularLearner::Single(spec) => {
            let fitted = train_base(spec, &x, &y)?;
            if spec.kind == LearnerKind::Mlp {
                // Re-train through the dedicated path so the checkpoint the
                // fusion stage consumes is the same artifact we score with.
                let mlp = train_meta_mlp(spec, &x, &y)?;
                newsfuse::fusion::save_meta_checkpoint(
                    &out_dir.join("meta_checkpoint"),
                    &mlp,
                    seed,
                    0,
                    serde_json::Value::Null,
                )?;
            }
            fitted.predict_proba(&xv)?
        }
        TabularLearner::Stack(ecfg) => train_stacking(ecfg, &x, &y)?.predict_proba(&xv)?,
        TabularLearner::Blend(ecfg) => train_blending(ecfg, &x, &y)?.predict_proba(&xv)?,
    };
    let valid_ids: Vec<String> = valid_recs.iter().map(|r| r.id.clone()).collect();
    let valid_labels: Vec<u8> = valid_recs.iter().map(|r| r.label.unwrap_or(0)).collect();
    write_predictions(out_dir, &valid_ids, &scores)?;
    write_labels(out_dir, &valid_recs)?;
    write_metrics(out_dir, &format!("tabular:{model}"), &scores, &valid_labels, &resolved)?;
    std::fs::write(
        out_dir.join("user_scores.json"),
        featurizer.user_table.to_json(),
    )
    .map_err(|e| Error::io(out_dir, e))?;
    Ok(())
}

pub fn cmd_tabular_report(
    cfg: &RunConfig,
    corpus: &Path,
    folds: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let clean = load_clean(cfg, corpus)?;
    let mut rows = Vec::new();
    for kind in ALL_LEARNERS {
        let pipeline = TabularFoldPipeline {
            learner: TabularLearner::Single(BaseLearnerSpec::with_defaults(kind, seed)),
        };
        let report = cross_validate(&pipeline, &clean, folds, seed)?;
        let reference = reference::META_ONLY_ZOO
            .iter()
            .find(|(name, _)| *name == kind.name())
            .map(|(_, auc)| *auc);
        let preds_placeholder = format!("cv mean over {folds} folds");
        rows.push(MetricsReport {
            name: kind.name().to_string(),
            auc: report.mean_auc,
            n_pos: 0,
            n_neg: 0,
            tie_count: 0,
            config_fingerprint: preds_placeholder,
            reference_auc: reference,
        });
        println!("{:<22} cv mean AUC {:.6}", kind.name(), report.mean_auc);
    }
    let table = ReportTable::new(rows);
    std::fs::write(out_dir.join("tabular_report.txt"), table.to_text())
        .map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(out_dir.join("tabular_report.json"), table.to_json())
        .map_err(|e| Error::io(out_dir, e))?;
    let resolved = serde_json::json!({
        "command": "tabular-report", "corpus": corpus, "folds": folds, "seed": seed,
    });
    write_resolved_config(out_dir, resolved)?;
    Ok(())
}

pub fn cmd_train_text(
    cfg: &RunConfig,
    corpus: &Path,
    blocks: &str,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let backbone = cfg.to_backbone_config(seed)?;
    let selection = if blocks.is_empty() {
        BlockSelection::all(backbone.layers)
    } else {
        BlockSelection::parse(blocks)?
    };
    selection.validate(backbone.layers)?;
    let head_input_dim = selection.dim(backbone.hidden);
    // The resolved run manifest (including derived dims) is written before
    // any weights load, so config arithmetic is auditable even when a
    // checkpoint path is missing.
    let resolved = serde_json::json!({
        "command": "train-text", "corpus": corpus, "seed": seed,
        "blocks": selection.to_spec_string(),
        "backbone": serde_json::to_value(&backbone).expect("backbone"),
        "head_input_dim": head_input_dim,
        "epochs": cfg.text.epochs, "batch_size": cfg.text.batch_size,
        "max_lr": cfg.text.max_lr,
        "gradual_unfreezing": cfg.text.gradual_unfreezing,
        "discriminative_lr": cfg.text.discriminative_lr,
    });
    write_resolved_config(out_dir, resolved.clone())?;

    let clean = load_clean(cfg, corpus)?;
    let (train_recs, valid_recs) = train_valid_split(&clean, 5, seed)?;
    let mut model = TextModel::new(backbone, selection, seed ^ 0xAB)?;
    let tokenizer = model.tokenizer().clone();
    // Save the pre-fine-tuning backbone: the initialization S1/S2 plans load.
    newsfuse::fusion::save_backbone_checkpoint(&out_dir.join("backbone_checkpoint"), &model, seed)?;

    let resolver = UriDimensionResolver;
    let (train_batch, featurizer) = featurize_training(&train_recs, &tokenizer, &resolver)?;
    let valid_batch = featurize_eval(&valid_recs, &tokenizer, &featurizer, &resolver)?;
    let settings = NeuralTrainSettings {
        epochs: cfg.text.epochs,
        batch_size: cfg.text.batch_size,
        max_lr: cfg.text.max_lr,
        weight_decay: 0.01,
        gradual_unfreezing: cfg.text.gradual_unfreezing,
        discriminative_lr: cfg.text.discriminative_lr,
        seed,
    };
    let history = train_neural(&mut model, &train_batch, Some(&valid_batch), &settings)?;
    std::fs::write(out_dir.join("history.jsonl"), history.to_jsonl())
        .map_err(|e| Error::io(out_dir, e))?;

    let scores = model.scores(&valid_batch)?;
    let valid_ids: Vec<String> = valid_recs.iter().map(|r| r.id.clone()).collect();
    let valid_labels: Vec<u8> = valid_recs.iter().map(|r| r.label.unwrap_or(0)).collect();
    write_predictions(out_dir, &valid_ids, &scores)?;
    write_labels(out_dir, &valid_recs)?;
    let auc = write_metrics(out_dir, "text", &scores, &valid_labels, &resolved)?;
    newsfuse::fusion::save_text_checkpoint(
        &out_dir.join("text_checkpoint"),
        &model,
        seed,
        history.steps.len() as u64,
        serde_json::json!({ "val_auc": auc }),
    )?;
    Ok(())
}

pub fn cmd_train_fusion(
    cfg: &RunConfig,
    corpus: &Path,
    strategy: &str,
    combine: &str,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let id: StrategyId = strategy.parse()?;
    let combine: CombineMode = combine.parse()?;
    let fusion_cfg = FusionConfig {
        combine,
        ..FusionConfig::default()
    };
    let mut plan = StrategyPlan::new(id, seed);
    plan.backbone_checkpoint = cfg.paths.backbone_checkpoint.clone();
    plan.text_checkpoint = cfg.paths.text_checkpoint.clone();
    plan.meta_checkpoint = cfg.paths.meta_checkpoint.clone();
    let resolved = serde_json::json!({
        "command": "train-fusion", "corpus": corpus, "seed": seed,
        "strategy": id.name(), "combine": combine,
        "fused_input_dim": fusion_cfg.fused_input_dim(),
        "plan": serde_json::to_value(&plan).expect("plan"),
        "epochs": cfg.fusion.epochs, "batch_size": cfg.fusion.batch_size,
        "max_lr": cfg.fusion.max_lr,
    });
    write_resolved_config(out_dir, resolved.clone())?;

    let mut model = assemble(&plan, &fusion_cfg)?;
    let clean = load_clean(cfg, corpus)?;
    let (train_recs, valid_recs) = train_valid_split(&clean, 5, seed)?;
    let tokenizer = model.tokenizer().clone();
    let resolver = UriDimensionResolver;
    let (train_batch, featurizer) = featurize_training(&train_recs, &tokenizer, &resolver)?;
    let valid_batch = featurize_eval(&valid_recs, &tokenizer, &featurizer, &resolver)?;
    let settings = NeuralTrainSettings {
        epochs: cfg.fusion.epochs,
        batch_size: cfg.fusion.batch_size,
        max_lr: cfg.fusion.max_lr,
        weight_decay: 0.01,
        gradual_unfreezing: false,
        discriminative_lr: true,
        seed,
    };
    let history = train_neural(&mut model, &train_batch, Some(&valid_batch), &settings)?;
    std::fs::write(out_dir.join("history.jsonl"), history.to_jsonl())
        .map_err(|e| Error::io(out_dir, e))?;

    let scores = model.scores(&valid_batch)?;
    let valid_ids: Vec<String> = valid_recs.iter().map(|r| r.id.clone()).collect();
    let valid_labels: Vec<u8> = valid_recs.iter().map(|r| r.label.unwrap_or(0)).collect();
    write_predictions(out_dir, &valid_ids, &scores)?;
    write_labels(out_dir, &valid_recs)?;
    let auc = write_metrics(out_dir, &format!("fusion:{}", id.name()), &scores, &valid_labels, &resolved)?;
    if let Some(reference) = reference::strategy_reference(id.name()) {
        println!("published reference for {}: {reference:.4}", id.name());
    }
    save_checkpoint(
        &out_dir.join("fusion_checkpoint"),
        &model.to_checkpoint(seed, history.steps.len() as u64, serde_json::json!({ "val_auc": auc })),
    )?;
    Ok(())
}

pub fn cmd_cv(
    cfg: &RunConfig,
    corpus: &Path,
    pipeline_spec: &str,
    folds: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let clean = load_clean(cfg, corpus)?;
    let report = match pipeline_spec.split_once(':') {
        Some(("tabular", model)) => {
            let pipeline = TabularFoldPipeline {
                learner: parse_tabular_learner(cfg, model, seed)?,
            };
            cross_validate(&pipeline, &clean, folds, seed)?
        }
        None if pipeline_spec == "text" => {
            let backbone = cfg.to_backbone_config(seed)?;
            let selection = if cfg.text.blocks.is_empty() {
                BlockSelection::all(backbone.layers)
            } else {
                BlockSelection::parse(&cfg.text.blocks)?
            };
            let pipeline = TextFoldPipeline {
                backbone,
                selection,
                settings: NeuralTrainSettings {
                    epochs: cfg.text.epochs,
                    batch_size: cfg.text.batch_size,
                    max_lr: cfg.text.max_lr,
                    weight_decay: 0.01,
                    gradual_unfreezing: cfg.text.gradual_unfreezing,
                    discriminative_lr: cfg.text.discriminative_lr,
                    seed,
                },
            };
            cross_validate(&pipeline, &clean, folds, seed)?
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown cv pipeline {pipeline_spec:?} (expected tabular:<model>, text)"
            )))
        }
    };
    println!(
        "{}: {folds}-fold mean AUC {:.6} (std {:.6})",
        report.pipeline, report.mean_auc, report.std_auc
    );
    for fold in &report.per_fold {
        match fold.auc {
            Some(auc) => println!("  fold {}: AUC {auc:.6} (n={})", fold.fold, fold.n_valid),
            None => println!("  fold {}: skipped (single-class validation split)", fold.fold),
        }
    }
    write_json(
        &out_dir.join("cv_report.json"),
        &serde_json::to_value(&report).expect("report"),
    )?;
    let resolved = serde_json::json!({
        "command": "cv", "corpus": corpus, "pipeline": pipeline_spec,
        "folds": folds, "seed": seed, "leakage_free": report.leakage_free(),
    });
    write_resolved_config(out_dir, resolved)?;
    Ok(())
}

fn read_two_column_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
        ),
        _ => Error::Data(e.to_string()),
    })?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Data(e.to_string()))?;
        let id = row.get(0).unwrap_or("").to_string();
        let value = row.get(1).unwrap_or("").to_string();
        out.push((id, value));
    }
    Ok(out)
}

pub fn cmd_evaluate(
    predictions: &Path,
    labels: &Path,
    name: &str,
    out_dir: &Path,
) -> Result<()> {
    ensure_dir(out_dir)?;
    let pred_rows = read_two_column_csv(predictions)?;
    let label_rows = read_two_column_csv(labels)?;
    let label_map: BTreeMap<&str, &str> = label_rows
        .iter()
        .map(|(id, l)| (id.as_str(), l.as_str()))
        .collect();
    let mut scores = Vec::new();
    let mut y = Vec::new();
    for (id, score) in &pred_rows {
        let Some(label) = label_map.get(id.as_str()) else {
            return Err(Error::Data(format!("no label for prediction id {id}")));
        };
        scores.push(
            score
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("bad score {score:?} for id {id}")))?,
        );
        y.push(
            label
                .parse::<u8>()
                .map_err(|_| Error::Data(format!("bad label {label:?} for id {id}")))?,
        );
    }
    let resolved = serde_json::json!({
        "command": "evaluate", "predictions": predictions, "labels": labels, "name": name,
        "n": scores.len(),
    });
    write_resolved_config(out_dir, resolved.clone())?;
    write_metrics(out_dir, name, &scores, &y, &resolved)?;
    Ok(())
}

/// Unweighted mean of per-model probabilities across prediction files.
pub fn cmd_ensemble(score_files: &[PathBuf], out_dir: &Path) -> Result<()> {
    if score_files.is_empty() {
        return Err(Error::Config("ensemble needs at least one predictions file".into()));
    }
    ensure_dir(out_dir)?;
    let mut ids: Vec<String> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    for (i, file) in score_files.iter().enumerate() {
        let rows = read_two_column_csv(file)?;
        if i == 0 {
            ids = rows.iter().map(|(id, _)| id.clone()).collect();
            sums = vec![0.0; rows.len()];
        } else if rows.len() != ids.len() {
            return Err(Error::dim("ensemble predictions", ids.len(), rows.len()));
        }
        for (j, (id, score)) in rows.iter().enumerate() {
            if *id != ids[j] {
                return Err(Error::Data(format!(
                    "prediction files disagree on row {j}: {id} vs {}",
                    ids[j]
                )));
            }
            sums[j] += score
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("bad score {score:?} in {}", file.display())))?;
        }
    }
    for s in &mut sums {
        *s /= score_files.len() as f64;
    }
    write_predictions(out_dir, &ids, &sums)?;
    let resolved = serde_json::json!({
        "command": "ensemble",
        "inputs": score_files,
        "rule": "unweighted mean of per-model probabilities",
    });
    write_resolved_config(out_dir, resolved)?;
    println!("averaged {} files over {} rows", score_files.len(), ids.len());
    Ok(())
}

pub fn cmd_fusion_inspect(checkpoint: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    println!("model_kind: {}", ckpt.manifest.model_kind);
    println!("seed: {}  step: {}", ckpt.manifest.seed, ckpt.manifest.step);
    if !ckpt.manifest.metrics.is_null() {
        println!("metrics: {}", ckpt.manifest.metrics);
    }
    if ckpt.manifest.provenance.is_empty() {
        println!("(no provenance ledger)");
    } else {
        println!("provenance ledger ({} parameters):", ckpt.manifest.provenance.len());
        for (name, origin) in &ckpt.manifest.provenance {
            println!("  {name:<40} {origin}");
        }
    }
    Ok(())
}
