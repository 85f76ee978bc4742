//! Optimizer configuration, decay/no-decay parameter grouping, and the
//! decoupled-weight-decay Adam update.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::model::NeuralModel;
use super::schedule::DiscriminativeLrMap;
use crate::error::{Error, Result};
use crate::nn::{GradMap, Mat, ParamSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Rate used where no schedule applies (e.g. plain fine-tune stages).
    pub base_lr: f64,
    /// Peak of the warmup schedule.
    pub max_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Decoupled weight-decay coefficient for the decay group.
    pub weight_decay: f64,
    /// Name suffixes exempt from weight decay (biases, layer-norm gains and
    /// offsets).
    pub no_decay_patterns: Vec<String>,
    /// Name suffixes that do receive decay. A parameter matching neither
    /// list is a configuration error: the partition must be explicit.
    pub decay_patterns: Vec<String>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 1e-5,
            max_lr: 2e-5,
            batch_size: 32,
            epochs: 20,
            weight_decay: 0.01,
            no_decay_patterns: vec![".bias".into(), ".gain".into(), ".offset".into()],
            decay_patterns: vec![".weight".into(), ".token".into(), ".pos".into()],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayClass {
    Decay,
    NoDecay,
}

impl OptimizerConfig {
    pub fn classify(&self, name: &str) -> Result<DecayClass> {
        if self.no_decay_patterns.iter().any(|p| name.ends_with(p.as_str())) {
            return Ok(DecayClass::NoDecay);
        }
        if self.decay_patterns.iter().any(|p| name.ends_with(p.as_str())) {
            return Ok(DecayClass::Decay);
        }
        Err(Error::Config(format!(
            "parameter {name} matches neither decay nor no-decay patterns"
        )))
    }
}

/// One parameter's optimizer assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamGroupEntry {
    pub name: String,
    pub decay: bool,
    /// Depth group (head, block_i, embed, ...) for unfreezing and
    /// discriminative rates.
    pub group: String,
    pub lr_multiplier: f64,
}

/// Decay/no-decay x depth-group partition over every model parameter.
#[derive(Debug, Clone)]
pub struct ParamGroups {
    pub entries: Vec<ParamGroupEntry>,
}

impl ParamGroups {
    pub fn entry(&self, name: &str) -> Option<&ParamGroupEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// All parameter names, for partition assertions.
    pub fn names(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }
}

/// Assign every parameter of `model` to exactly one (decay-class, depth
/// group) cell. Errors on any name the patterns cannot classify.
pub fn build_param_groups(
    model: &dyn NeuralModel,
    cfg: &OptimizerConfig,
    lr_map: &DiscriminativeLrMap,
) -> Result<ParamGroups> {
    let mut entries = Vec::new();
    for name in model.params().keys() {
        let class = cfg.classify(name)?;
        let group = model.group_of(name)?;
        entries.push(ParamGroupEntry {
            name: name.clone(),
            decay: class == DecayClass::Decay,
            lr_multiplier: lr_map.multiplier(&group),
            group,
        });
    }
    Ok(ParamGroups { entries })
}

struct MomentState {
    m: Mat,
    v: Mat,
    step: u64,
}

/// Adam with decoupled weight decay. Moments are kept per parameter name;
/// bias correction counts each parameter's own updates so late-unfrozen
/// groups start cleanly.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    state: BTreeMap<String, MomentState>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: BTreeMap::new(),
        }
    }

    /// One update at learning rate `lr` restricted to `trainable` groups.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &GradMap,
        groups: &ParamGroups,
        lr: f64,
        trainable: &BTreeSet<String>,
    ) {
        for entry in &groups.entries {
            if !trainable.contains(&entry.group) {
                continue;
            }
            let Some(grad) = grads.get(&entry.name) else { continue };
            let param = params
                .get_mut(&entry.name)
                .expect("grouped parameter exists");
            let state = self.state.entry(entry.name.clone()).or_insert_with(|| {
                MomentState {
                    m: Mat::zeros(param.rows, param.cols),
                    v: Mat::zeros(param.rows, param.cols),
                    step: 0,
                }
            });
            state.step += 1;
            let bc1 = 1.0 - self.beta1.powi(state.step as i32);
            let bc2 = 1.0 - self.beta2.powi(state.step as i32);
            let rate = lr * entry.lr_multiplier;
            let decay = if entry.decay { self.weight_decay } else { 0.0 };
            for i in 0..param.data.len() {
                let g = grad.data[i];
                state.m.data[i] = self.beta1 * state.m.data[i] + (1.0 - self.beta1) * g;
                state.v.data[i] = self.beta2 * state.v.data[i] + (1.0 - self.beta2) * g * g;
                let m_hat = state.m.data[i] / bc1;
                let v_hat = state.v.data[i] / bc2;
                // Decoupled decay: applied to the weight directly, scaled by
                // the scheduled rate, never through the moments.
                param.data[i] -=
                    rate * (m_hat / (v_hat.sqrt() + self.eps) + decay * param.data[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_follows_patterns() {
        let cfg = OptimizerConfig::default();
        assert_eq!(cfg.classify("backbone.block1.norm1.gain").unwrap(), DecayClass::NoDecay);
        assert_eq!(cfg.classify("backbone.block1.norm1.offset").unwrap(), DecayClass::NoDecay);
        assert_eq!(cfg.classify("head.fc1.bias").unwrap(), DecayClass::NoDecay);
        assert_eq!(cfg.classify("head.fc1.weight").unwrap(), DecayClass::Decay);
        assert_eq!(cfg.classify("backbone.embed.token").unwrap(), DecayClass::Decay);
        assert!(cfg.classify("mystery.thing").is_err());
    }

    #[test]
    fn adamw_moves_toward_minimum() {
        // Minimize (w - 3)^2 via its gradient.
        let mut params = ParamSet::new();
        params.insert("m.weight".into(), Mat::from_vec(1, 1, vec![0.0]));
        let groups = ParamGroups {
            entries: vec![ParamGroupEntry {
                name: "m.weight".into(),
                decay: false,
                group: "head".into(),
                lr_multiplier: 1.0,
            }],
        };
        let trainable: BTreeSet<String> = ["head".to_string()].into();
        let mut opt = AdamW::new(0.0);
        for _ in 0..2000 {
            let w = params["m.weight"].data[0];
            let mut grads = GradMap::new();
            grads.insert("m.weight".into(), Mat::from_vec(1, 1, vec![2.0 * (w - 3.0)]));
            opt.step(&mut params, &grads, &groups, 0.01, &trainable);
        }
        let w = params["m.weight"].data[0];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let mut params = ParamSet::new();
        params.insert("a.weight".into(), Mat::from_vec(1, 1, vec![1.0]));
        params.insert("b.weight".into(), Mat::from_vec(1, 1, vec![1.0]));
        let groups = ParamGroups {
            entries: vec![
                ParamGroupEntry {
                    name: "a.weight".into(),
                    decay: true,
                    group: "head".into(),
                    lr_multiplier: 1.0,
                },
                ParamGroupEntry {
                    name: "b.weight".into(),
                    decay: true,
                    group: "block1".into(),
                    lr_multiplier: 1.0,
                },
            ],
        };
        let mut grads = GradMap::new();
        grads.insert("a.weight".into(), Mat::from_vec(1, 1, vec![1.0]));
        grads.insert("b.weight".into(), Mat::from_vec(1, 1, vec![1.0]));
        let mut opt = AdamW::new(0.01);
        let trainable: BTreeSet<String> = ["head".to_string()].into();
        opt.step(&mut params, &grads, &groups, 0.1, &trainable);
        assert!(params["a.weight"].data[0] < 1.0);
        assert_eq!(params["b.weight"].data[0], 1.0);
    }
}
