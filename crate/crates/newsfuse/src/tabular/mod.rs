//! Metadata-only classifiers: the eleven-learner zoo, stacking and blending
//! ensembles, and the differentiable MLP that doubles as the fused model's
//! meta submodel.
//!
//! Default hyperparameters for all learners live in [`default_params`], in
//! one place.

pub mod boost;
pub mod ensemble;
pub mod forest;
pub mod linear;
pub mod mlp;
pub mod simple;
mod tree;

pub use ensemble::{
    train_blending, train_stacking, BlendedModel, EnsembleConfig, EnsembleMode, StackedModel,
    StackingProvenance,
};
pub use linear::{LinearDiscriminant, LogisticRegression};
pub use mlp::{MetaMlp, META_DROPOUT, META_FEATURE_DIM, META_HIDDEN_1};

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::training::{
    train, DiscriminativeLrMap, ModelBatch, NeuralModel, OptimizerConfig, SmoothingLossConfig,
    UnfreezeSchedule,
};

/// Exactly the eleven learner families of the metadata comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    LogisticRegression,
    Lda,
    Knn,
    DecisionTree,
    GaussianNb,
    Svm,
    AdaBoost,
    GradientBoosting,
    RandomForest,
    ExtraTrees,
    Mlp,
}

pub const ALL_LEARNERS: [LearnerKind; 11] = [
    LearnerKind::LogisticRegression,
    LearnerKind::Lda,
    LearnerKind::Knn,
    LearnerKind::DecisionTree,
    LearnerKind::GaussianNb,
    LearnerKind::Svm,
    LearnerKind::AdaBoost,
    LearnerKind::GradientBoosting,
    LearnerKind::RandomForest,
    LearnerKind::ExtraTrees,
    LearnerKind::Mlp,
];

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::LogisticRegression => "logistic_regression",
            LearnerKind::Lda => "lda",
            LearnerKind::Knn => "knn",
            LearnerKind::DecisionTree => "decision_tree",
            LearnerKind::GaussianNb => "gaussian_nb",
            LearnerKind::Svm => "svm",
            LearnerKind::AdaBoost => "adaboost",
            LearnerKind::GradientBoosting => "gradient_boosting",
            LearnerKind::RandomForest => "random_forest",
            LearnerKind::ExtraTrees => "extra_trees",
            LearnerKind::Mlp => "mlp",
        }
    }
}

impl FromStr for LearnerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ALL_LEARNERS
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown learner kind {s:?}")))
    }
}

/// Widely used default settings, one entry per learner.
pub fn default_params(kind: LearnerKind) -> BTreeMap<String, f64> {
    let pairs: &[(&str, f64)] = match kind {
        LearnerKind::LogisticRegression => &[("ridge", 1e-6), ("max_iter", 100.0)],
        LearnerKind::Lda => &[("ridge", 1e-6)],
        LearnerKind::Knn => &[("k", 5.0)],
        LearnerKind::DecisionTree => &[("max_depth", 10.0), ("min_leaf", 1.0)],
        LearnerKind::GaussianNb => &[("var_smoothing", 1e-9)],
        LearnerKind::Svm => &[("c", 1.0), ("epochs", 30.0)],
        LearnerKind::AdaBoost => &[("n_estimators", 50.0)],
        LearnerKind::GradientBoosting => &[
            ("n_estimators", 100.0),
            ("max_depth", 3.0),
            ("learning_rate", 0.1),
        ],
        LearnerKind::RandomForest => {
            &[("n_estimators", 100.0), ("max_depth", 12.0), ("min_leaf", 1.0)]
        }
        LearnerKind::ExtraTrees => {
            &[("n_estimators", 100.0), ("max_depth", 12.0), ("min_leaf", 1.0)]
        }
        // Desk-scale MLP settings; the tiny net needs a far larger rate than
        // the encoder fine-tuning default.
        LearnerKind::Mlp => &[("lr", 1e-2), ("epochs", 30.0), ("batch", 32.0)],
    };
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseLearnerSpec {
    pub kind: LearnerKind,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl BaseLearnerSpec {
    pub fn with_defaults(kind: LearnerKind, seed: u64) -> Self {
        BaseLearnerSpec {
            kind,
            params: default_params(kind),
            seed,
        }
    }

    pub fn param(&self, key: &str) -> f64 {
        self.params
            .get(key)
            .copied()
            .or_else(|| default_params(self.kind).get(key).copied())
            .unwrap_or_else(|| panic!("no default for {key} on {:?}", self.kind))
    }
}

/// A fitted metadata classifier: per-row unreliable-class probability.
pub trait TabularModel: Send + Sync {
    fn predict_proba(&self, x: &Mat) -> Result<Vec<f64>>;
}

macro_rules! impl_tabular {
    ($ty:ty) => {
        impl TabularModel for $ty {
            fn predict_proba(&self, x: &Mat) -> Result<Vec<f64>> {
                Ok(self.predict_proba_rows(x))
            }
        }
    };
}

impl_tabular!(linear::LogisticRegression);
impl_tabular!(linear::LinearDiscriminant);
impl_tabular!(simple::Knn);
impl_tabular!(simple::GaussianNb);
impl_tabular!(simple::LinearSvm);
impl_tabular!(boost::AdaBoost);
impl_tabular!(boost::GradientBoosting);
impl_tabular!(forest::Forest);

struct SingleTree(tree::Tree);
impl TabularModel for SingleTree {
    fn predict_proba(&self, x: &Mat) -> Result<Vec<f64>> {
        Ok((0..x.rows).map(|i| self.0.predict_row(x.row(i))).collect())
    }
}

impl TabularModel for MetaMlp {
    fn predict_proba(&self, x: &Mat) -> Result<Vec<f64>> {
        self.predict_proba_rows(x)
    }
}

fn attach_spec(spec: &BaseLearnerSpec) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Model { kind, message } => Error::Model {
            kind,
            message: format!("{message} (spec: {spec:?})"),
        },
        other => other,
    }
}

/// Fit one zoo member. Deterministic given `spec.seed`.
pub fn train_base(spec: &BaseLearnerSpec, x: &Mat, y: &[u8]) -> Result<Box<dyn TabularModel>> {
    if x.rows != y.len() {
        return Err(Error::dim("train_base labels", x.rows, y.len()));
    }
    if x.rows == 0 {
        return Err(Error::model(spec.kind.name(), "empty training data"));
    }
    let wrap = attach_spec(spec);
    let model: Box<dyn TabularModel> = match spec.kind {
        LearnerKind::LogisticRegression => Box::new(
            linear::LogisticRegression::fit(
                x,
                y,
                spec.param("ridge"),
                spec.param("max_iter") as usize,
                1e-10,
            )
            .map_err(wrap)?,
        ),
        LearnerKind::Lda => {
            Box::new(linear::LinearDiscriminant::fit(x, y, spec.param("ridge")).map_err(wrap)?)
        }
        LearnerKind::Knn => {
            Box::new(simple::Knn::fit(x, y, spec.param("k") as usize).map_err(wrap)?)
        }
        LearnerKind::DecisionTree => {
            let cfg = tree::TreeConfig {
                max_depth: spec.param("max_depth") as usize,
                min_leaf: spec.param("min_leaf") as usize,
                split_mode: tree::SplitMode::Best,
                feature_subsample: None,
            };
            let targets: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
            let idx: Vec<usize> = (0..x.rows).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            Box::new(SingleTree(tree::build_tree(x, &targets, None, &idx, &cfg, &mut rng)))
        }
        LearnerKind::GaussianNb => {
            Box::new(simple::GaussianNb::fit(x, y, spec.param("var_smoothing")).map_err(wrap)?)
        }
        LearnerKind::Svm => Box::new(
            simple::LinearSvm::fit(x, y, spec.param("c"), spec.param("epochs") as usize, spec.seed)
                .map_err(wrap)?,
        ),
        LearnerKind::AdaBoost => Box::new(
            boost::AdaBoost::fit(x, y, spec.param("n_estimators") as usize, spec.seed)
                .map_err(wrap)?,
        ),
        LearnerKind::GradientBoosting => Box::new(
            boost::GradientBoosting::fit(
                x,
                y,
                spec.param("n_estimators") as usize,
                spec.param("max_depth") as usize,
                spec.param("learning_rate"),
                spec.seed,
            )
            .map_err(wrap)?,
        ),
        LearnerKind::RandomForest => Box::new(forest::fit_forest(
            x,
            y,
            &forest::ForestConfig {
                n_trees: spec.param("n_estimators") as usize,
                max_depth: spec.param("max_depth") as usize,
                min_leaf: spec.param("min_leaf") as usize,
                bootstrap: true,
                split_mode: tree::SplitMode::Best,
            },
            spec.seed,
        )),
        LearnerKind::ExtraTrees => Box::new(forest::fit_forest(
            x,
            y,
            &forest::ForestConfig {
                n_trees: spec.param("n_estimators") as usize,
                max_depth: spec.param("max_depth") as usize,
                min_leaf: spec.param("min_leaf") as usize,
                bootstrap: false,
                split_mode: tree::SplitMode::Random,
            },
            spec.seed,
        )),
        LearnerKind::Mlp => Box::new(train_meta_mlp(spec, x, y).map_err(wrap)?),
    };
    Ok(model)
}

/// Train the MetaMLP on a feature matrix with flat (no-schedule-extras)
/// settings; the full fine-tuning regimen is exercised by the text and fused
/// models.
pub fn train_meta_mlp(spec: &BaseLearnerSpec, x: &Mat, y: &[u8]) -> Result<MetaMlp> {
    let mut model = MetaMlp::new(x.cols, spec.seed);
    let batch = ModelBatch {
        token_ids: None,
        meta: Some(x.clone()),
        labels: Some(y.to_vec()),
        ids: Vec::new(),
    };
    let cfg = OptimizerConfig {
        max_lr: spec.param("lr"),
        batch_size: spec.param("batch") as usize,
        epochs: spec.param("epochs") as usize,
        seed: spec.seed,
        ..OptimizerConfig::default()
    };
    let groups = model.group_order();
    let schedule = UnfreezeSchedule::all_at_once(groups.clone());
    let lr_map = DiscriminativeLrMap::uniform(&groups);
    train(
        &mut model,
        &batch,
        None,
        &cfg,
        &SmoothingLossConfig::default(),
        &schedule,
        &lr_map,
    )?;
    Ok(model)
}

/// Train every zoo member on the same matrix; returns (kind, fitted model).
pub fn train_zoo(
    x: &Mat,
    y: &[u8],
    seed: u64,
) -> Result<Vec<(LearnerKind, Box<dyn TabularModel>)>> {
    use rayon::prelude::*;
    let fitted: Vec<Result<(LearnerKind, Box<dyn TabularModel>)>> = ALL_LEARNERS
        .par_iter()
        .map(|&kind| {
            let spec = BaseLearnerSpec::with_defaults(kind, seed);
            Ok((kind, train_base(&spec, x, y)?))
        })
        .collect();
    fitted.into_iter().collect()
}
