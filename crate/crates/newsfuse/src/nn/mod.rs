//! Minimal f64 neural-network substrate: matrices, a reverse-mode autodiff
//! tape, named parameter sets, and a finite-difference gradient checker.

pub mod graph;
pub mod mat;
pub mod store;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use graph::{Graph, VarId};
pub use mat::{softmax_rows, Mat};

/// Named parameters. BTreeMap keeps iteration order deterministic.
pub type ParamSet = BTreeMap<String, Mat>;
/// Gradients keyed like the owning [`ParamSet`].
pub type GradMap = BTreeMap<String, Mat>;

/// Binds parameter tensors into a graph as leaves, remembering VarIds so
/// gradients can be read back by name after `backward`.
pub struct ParamBinder<'a> {
    params: &'a ParamSet,
    bound: Vec<(String, VarId)>,
}

impl<'a> ParamBinder<'a> {
    pub fn new(params: &'a ParamSet) -> Self {
        ParamBinder {
            params,
            bound: Vec::new(),
        }
    }

    pub fn bind(&mut self, g: &mut Graph, name: &str) -> VarId {
        let tensor = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        let id = g.leaf(tensor.clone());
        self.bound.push((name.to_string(), id));
        id
    }

    pub fn grads(&self, g: &Graph, node_grads: &[Option<Mat>]) -> GradMap {
        let mut out = GradMap::new();
        for (name, id) in &self.bound {
            let grad = node_grads[id.0]
                .clone()
                .unwrap_or_else(|| Mat::zeros(g.value(*id).rows, g.value(*id).cols));
            match out.get_mut(name) {
                Some(existing) => existing.add_assign(&grad),
                None => {
                    out.insert(name.clone(), grad);
                }
            }
        }
        out
    }
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else
/// 1/(1-rate). `None` phase (inference) yields an identity mask.
pub fn dropout_mask(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 - rate;
            (0..len)
                .map(|_| {
                    if rng.gen::<f64>() < rate {
                        0.0
                    } else {
                        1.0 / keep
                    }
                })
                .collect()
        }
        _ => vec![1.0; len],
    }
}

/// Merge `src` gradients into `dst` (sum).
pub fn accumulate_grads(dst: &mut GradMap, src: &GradMap) {
    for (name, grad) in src {
        match dst.get_mut(name) {
            Some(g) => g.add_assign(grad),
            None => {
                dst.insert(name.clone(), grad.clone());
            }
        }
    }
}

pub fn scale_grads(grads: &mut GradMap, s: f64) {
    for g in grads.values_mut() {
        g.scale_assign(s);
    }
}

/// Derive a per-example RNG that is stable across thread schedules.
pub fn example_rng(seed: u64, step: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(step.wrapping_mul(0xBF58_476D_1CE4_E5B9))
            .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB)),
    )
}

/// Result of one finite-difference probe.
#[derive(Debug)]
pub struct GradCheckPoint {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compare analytic gradients against central finite differences at randomly
/// sampled parameter coordinates. `loss_fn` must be a deterministic function
/// of the parameter set; `grad_fn` returns the analytic gradients at a point.
pub fn gradient_check(
    params: &ParamSet,
    loss_fn: &dyn Fn(&ParamSet) -> f64,
    grads: &GradMap,
    n_points: usize,
    seed: u64,
) -> Vec<GradCheckPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<&String> = params.keys().collect();
    let h = 1e-5;
    let mut out = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let name = names[rng.gen_range(0..names.len())].clone();
        let len = params[&name].len();
        let index = rng.gen_range(0..len);
        let mut plus = params.clone();
        plus.get_mut(&name).unwrap().data[index] += h;
        let mut minus = params.clone();
        minus.get_mut(&name).unwrap().data[index] -= h;
        let numeric = (loss_fn(&plus) - loss_fn(&minus)) / (2.0 * h);
        let analytic = grads
            .get(&name)
            .map(|g| g.data[index])
            .unwrap_or(0.0);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        out.push(GradCheckPoint {
            name,
            index,
            analytic,
            numeric,
            rel_err: (analytic - numeric).abs() / denom,
        });
    }
    out
}
