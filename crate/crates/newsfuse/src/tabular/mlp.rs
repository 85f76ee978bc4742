//! The differentiable meta-feature MLP: 13 -> 64 -> 32 with a 32 -> 2
//! classification head and dropout 0.2. Its 32-dim penultimate activation is
//! the feature the fused model consumes; the extractor graph is shared with
//! the fusion module so both paths stay identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{dropout_mask, example_rng, Graph, GradMap, Mat, ParamBinder, ParamSet, VarId};
use crate::training::{ModelBatch, NeuralModel, SmoothingLossConfig};

pub const META_HIDDEN_1: usize = 64;
pub const META_FEATURE_DIM: usize = 32;
pub const META_DROPOUT: f64 = 0.2;

/// Initialize extractor parameters (fc1 + fc2) under the shared names.
pub fn init_meta_extractor(params: &mut ParamSet, in_dim: usize, rng: &mut ChaCha8Rng) {
    params.insert("meta.fc1.weight".into(), Mat::he_normal(in_dim, META_HIDDEN_1, rng));
    params.insert("meta.fc1.bias".into(), Mat::zeros(1, META_HIDDEN_1));
    params.insert(
        "meta.fc2.weight".into(),
        Mat::he_normal(META_HIDDEN_1, META_FEATURE_DIM, rng),
    );
    params.insert("meta.fc2.bias".into(), Mat::zeros(1, META_FEATURE_DIM));
}

/// Names of the extractor parameters ("all layers except the output one").
pub fn meta_extractor_param_names() -> Vec<String> {
    vec![
        "meta.fc1.weight".into(),
        "meta.fc1.bias".into(),
        "meta.fc2.weight".into(),
        "meta.fc2.bias".into(),
    ]
}

/// Build the extractor forward graph: x -> relu(fc1) -> dropout ->
/// relu(fc2). Returns the 32-dim feature node (pre-dropout, so inference is
/// deterministic).
pub fn meta_extractor_graph(
    g: &mut Graph,
    binder: &mut ParamBinder,
    x: VarId,
    dropout_rng: &mut Option<ChaCha8Rng>,
) -> VarId {
    let w1 = binder.bind(g, "meta.fc1.weight");
    let b1 = binder.bind(g, "meta.fc1.bias");
    let w2 = binder.bind(g, "meta.fc2.weight");
    let b2 = binder.bind(g, "meta.fc2.bias");
    let z1 = g.matmul(x, w1);
    let z1 = g.add_row(z1, b1);
    let h1 = g.relu(z1);
    let h1 = apply_dropout(g, h1, dropout_rng);
    let z2 = g.matmul(h1, w2);
    let z2 = g.add_row(z2, b2);
    g.relu(z2)
}

fn apply_dropout(g: &mut Graph, x: VarId, rng: &mut Option<ChaCha8Rng>) -> VarId {
    let len = g.value(x).len();
    let mask = dropout_mask(len, META_DROPOUT, rng.as_mut());
    match rng {
        Some(_) => g.mul_mask(x, mask),
        None => x,
    }
}

/// The standalone meta classifier (extractor + 32 -> 2 output layer).
#[derive(Debug, Clone)]
pub struct MetaMlp {
    pub in_dim: usize,
    params: ParamSet,
}

impl MetaMlp {
    pub fn new(in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        init_meta_extractor(&mut params, in_dim, &mut rng);
        params.insert("meta.out.weight".into(), Mat::he_normal(META_FEATURE_DIM, 2, &mut rng));
        params.insert("meta.out.bias".into(), Mat::zeros(1, 2));
        MetaMlp { in_dim, params }
    }

    pub fn from_params(in_dim: usize, params: ParamSet) -> Result<Self> {
        for name in meta_extractor_param_names()
            .iter()
            .chain([&"meta.out.weight".to_string(), &"meta.out.bias".to_string()])
        {
            if !params.contains_key(name.as_str()) {
                return Err(Error::Checkpoint {
                    message: "missing meta parameter".into(),
                    names: vec![name.clone()],
                });
            }
        }
        Ok(MetaMlp { in_dim, params })
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols != self.in_dim {
            return Err(Error::dim("MetaMlp input", self.in_dim, x.cols));
        }
        Ok(())
    }

    fn forward_graph(
        &self,
        g: &mut Graph,
        x: Mat,
        dropout_rng: &mut Option<ChaCha8Rng>,
    ) -> (ParamBinder<'_>, VarId, VarId) {
        let mut binder = ParamBinder::new(&self.params);
        let x = g.leaf(x);
        let feat = meta_extractor_graph(g, &mut binder, x, dropout_rng);
        let fed = apply_dropout(g, feat, dropout_rng);
        let w = binder.bind(g, "meta.out.weight");
        let b = binder.bind(g, "meta.out.bias");
        let z = g.matmul(fed, w);
        let logits = g.add_row(z, b);
        (binder, feat, logits)
    }

    /// Inference-mode forward: 32-dim features and 2-class logits.
    pub fn mlp_forward(&self, x: &Mat) -> Result<(Mat, Mat)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let mut no_dropout = None;
        let (_, feat, logits) = self.forward_graph(&mut g, x.clone(), &mut no_dropout);
        Ok((g.value(feat).clone(), g.value(logits).clone()))
    }

    /// Probability of the unreliable class per row.
    pub fn predict_proba_rows(&self, x: &Mat) -> Result<Vec<f64>> {
        let (_, logits) = self.mlp_forward(x)?;
        let p = crate::nn::softmax_rows(&logits);
        Ok((0..p.rows).map(|r| p.at(r, 1)).collect())
    }
}

fn batch_meta<'a>(data: &'a ModelBatch, rows: &[usize]) -> Result<(Mat, Vec<usize>)> {
    let meta = data
        .meta
        .as_ref()
        .ok_or_else(|| Error::Data("meta channel missing from batch".into()))?;
    let labels = data.labels_required()?;
    let mut x = Mat::zeros(rows.len(), meta.cols);
    let mut y = Vec::with_capacity(rows.len());
    for (i, &r) in rows.iter().enumerate() {
        x.row_mut(i).copy_from_slice(meta.row(r));
        y.push(usize::from(labels[r]));
    }
    Ok((x, y))
}

impl NeuralModel for MetaMlp {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn group_order(&self) -> Vec<String> {
        vec!["head".into(), "meta_fc2".into(), "meta_fc1".into()]
    }

    fn group_of(&self, param_name: &str) -> Result<String> {
        match param_name {
            n if n.starts_with("meta.out.") => Ok("head".into()),
            n if n.starts_with("meta.fc2.") => Ok("meta_fc2".into()),
            n if n.starts_with("meta.fc1.") => Ok("meta_fc1".into()),
            other => Err(Error::Config(format!("unknown parameter {other}"))),
        }
    }

    fn loss_and_grads(
        &self,
        data: &ModelBatch,
        rows: &[usize],
        loss: &SmoothingLossConfig,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, GradMap)> {
        loss.validate()?;
        let (x, y) = batch_meta(data, rows)?;
        self.check_input(&x)?;
        let mut g = Graph::new();
        let mut rng = dropout_seed.map(|s| example_rng(s, 0, 0));
        let (binder, _, logits) = self.forward_graph(&mut g, x, &mut rng);
        let loss_var = g.smoothed_ce(logits, &y, loss.eps);
        let value = g.value(loss_var).at(0, 0);
        let node_grads = g.backward(loss_var);
        Ok((value, binder.grads(&g, &node_grads)))
    }

    fn scores(&self, data: &ModelBatch) -> Result<Vec<f64>> {
        let meta = data
            .meta
            .as_ref()
            .ok_or_else(|| Error::Data("meta channel missing from batch".into()))?;
        self.predict_proba_rows(meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize, d: usize, seed: u64) -> ModelBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let meta = Mat::gaussian(n, d, 0.0, 1.0, &mut rng);
        let labels: Vec<u8> = (0..n).map(|i| (meta.at(i, 0) > 0.0) as u8).collect();
        ModelBatch {
            token_ids: None,
            meta: Some(meta),
            labels: Some(labels),
            ids: Vec::new(),
        }
    }

    #[test]
    fn shapes_match_the_contract() {
        let m = MetaMlp::new(13, 1);
        let x = Mat::zeros(7, 13);
        let (feat, logits) = m.mlp_forward(&x).unwrap();
        assert_eq!(feat.shape(), (7, 32));
        assert_eq!(logits.shape(), (7, 2));
    }

    #[test]
    fn inference_is_deterministic() {
        let m = MetaMlp::new(13, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Mat::gaussian(5, 13, 0.0, 1.0, &mut rng);
        let (f1, l1) = m.mlp_forward(&x).unwrap();
        let (f2, l2) = m.mlp_forward(&x).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut m = MetaMlp::new(13, 3);
        for p in m.params.values_mut() {
            p.scale_assign(0.0);
        }
        let x = Mat::zeros(4, 13);
        let p = m.predict_proba_rows(&x).unwrap();
        for v in p {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_dim_is_an_error() {
        let m = MetaMlp::new(13, 4);
        assert!(m.mlp_forward(&Mat::zeros(2, 5)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = MetaMlp::new(6, 5);
        let data = batch(8, 6, 11);
        let rows: Vec<usize> = (0..8).collect();
        let loss_cfg = SmoothingLossConfig::default();
        let (_, grads) = m.loss_and_grads(&data, &rows, &loss_cfg, None).unwrap();
        let loss_fn = |p: &ParamSet| {
            let probe = MetaMlp {
                in_dim: 6,
                params: p.clone(),
            };
            probe
                .loss_and_grads(&data, &rows, &loss_cfg, None)
                .unwrap()
                .0
        };
        let checks = crate::nn::gradient_check(&m.params, &loss_fn, &grads, 20, 77);
        for c in &checks {
            assert!(
                c.rel_err <= 1e-4,
                "{}[{}]: analytic {} numeric {} rel {}",
                c.name,
                c.index,
                c.analytic,
                c.numeric,
                c.rel_err
            );
        }
    }

    #[test]
    fn training_mode_dropout_is_seeded() {
        let m = MetaMlp::new(6, 6);
        let data = batch(16, 6, 12);
        let rows: Vec<usize> = (0..16).collect();
        let cfg = SmoothingLossConfig::default();
        let (l1, g1) = m.loss_and_grads(&data, &rows, &cfg, Some(5)).unwrap();
        let (l2, g2) = m.loss_and_grads(&data, &rows, &cfg, Some(5)).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        let (l3, _) = m.loss_and_grads(&data, &rows, &cfg, Some(6)).unwrap();
        assert_ne!(l1, l3);
    }
}
