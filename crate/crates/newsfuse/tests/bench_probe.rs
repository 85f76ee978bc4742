// Scratch probe for sizing the desk benchmark; replaced by the acceptance
// suite once numbers are pinned.

use std::time::Instant;

use newsfuse::dataset::{synthesize_corpus, SignalSpec};
use newsfuse::fusion::{FusionConfig, StrategyId};
use newsfuse::pipeline::*;
use newsfuse::tabular::{BaseLearnerSpec, LearnerKind};
use newsfuse::textenc::{BackboneConfig, BlockSelection};
use newsfuse::training::cross_validate;

fn desk_backbone(seed: u64) -> BackboneConfig {
    let mut cfg = BackboneConfig::toy(seed);
    cfg.layers = 3;
    cfg.ffn_factor = 2;
    cfg.max_seq_len = 16;
    cfg
}

#[test]
#[ignore]
fn probe_gb_cv() {
    let raw = synthesize_corpus(2000, 42, &SignalSpec::default());
    let (corpus, _) = clean_records(&raw).unwrap();
    let t = Instant::now();
    let pipeline = TabularFoldPipeline {
        learner: TabularLearner::Single(BaseLearnerSpec::with_defaults(
            LearnerKind::GradientBoosting,
            42,
        )),
    };
    let report = cross_validate(&pipeline, &corpus, 10, 42).unwrap();
    println!(
        "GB 10-fold mean AUC = {:.4} (std {:.4}) in {:.1}s",
        report.mean_auc,
        report.std_auc,
        t.elapsed().as_secs_f64()
    );
}

#[test]
#[ignore]
fn probe_strategy_bench() {
    let raw = synthesize_corpus(2000, 42, &SignalSpec::default());
    let (corpus, _) = clean_records(&raw).unwrap();
    for seed in [41u64, 42, 43, 44, 45] {
        let dir = tempfile::tempdir().unwrap();
        let t = Instant::now();
        let report = run_strategy_bench(
            &corpus,
            seed,
            dir.path(),
            &desk_backbone(seed),
            &BlockSelection::all(3),
            &FusionConfig::default(),
            &NeuralTrainSettings::desk_text(seed),
            &NeuralTrainSettings::desk_fusion(seed),
            &[StrategyId::S1, StrategyId::S2, StrategyId::S3, StrategyId::S4],
        )
        .unwrap();
        let s = &report.strategy_auc;
        println!(
            "seed {seed}: meta {:.4} text {:.4} s1 {:.4} s2 {:.4} s3 {:.4} s4 {:.4} (d21 {:+.4}, d43 {:+.4}) {:.1}s",
            report.meta_mlp_auc,
            report.text_auc,
            s["s1"], s["s2"], s["s3"], s["s4"],
            s["s2"] - s["s1"],
            s["s4"] - s["s3"],
            t.elapsed().as_secs_f64()
        );
    }
}

#[test]
#[ignore]
fn probe_zoo() {
    let raw = synthesize_corpus(1000, 7, &SignalSpec::default());
    let (corpus, _) = clean_records(&raw).unwrap();
    let (train, valid) = train_valid_split(&corpus, 5, 7).unwrap();
    let tok = newsfuse::textenc::HashTokenizer::new(1024, 16);
    let resolver = newsfuse::features::UriDimensionResolver;
    let (tb, fz) = featurize_training(&train, &tok, &resolver).unwrap();
    let vb = featurize_eval(&valid, &tok, &fz, &resolver).unwrap();
    let x = tb.meta.as_ref().unwrap();
    let y = tb.labels.as_ref().unwrap();
    let xv = vb.meta.as_ref().unwrap();
    let yv = vb.labels.clone().unwrap();
    for kind in newsfuse::tabular::ALL_LEARNERS {
        let t = Instant::now();
        let spec = BaseLearnerSpec::with_defaults(kind, 7);
        let model = newsfuse::tabular::train_base(&spec, x, y).unwrap();
        let scores = model.predict_proba(xv).unwrap();
        let auc = newsfuse::evaluation::roc_auc(
            &newsfuse::evaluation::ScoredPredictions::new(scores, yv.clone()).unwrap(),
        )
        .unwrap();
        println!("{:<22} AUC {:.4} ({:.2}s)", kind.name(), auc, t.elapsed().as_secs_f64());
    }
}
