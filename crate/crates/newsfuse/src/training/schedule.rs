//! Learning-rate schedule, gradual unfreezing, and discriminative per-group
//! multipliers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Warmup fraction of total steps before the peak.
pub const WARMUP_FRACTION: f64 = 0.1;

/// Linear ramp from 0 to `max_lr` over the first 10% of steps, then linear
/// decay back to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, max_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("total_steps must be positive".into()));
    }
    if step > total_steps {
        return Err(Error::Config(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    let warmup = WARMUP_FRACTION * total_steps as f64;
    let s = step as f64;
    Ok(if s <= warmup {
        max_lr * s / warmup
    } else {
        max_lr * (total_steps as f64 - s) / (total_steps as f64 - warmup)
    })
}

/// Ordered parameter groups unfrozen top-down, head first, one more group
/// per `epochs_per_group` epochs until everything trains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnfreezeSchedule {
    pub groups: Vec<String>,
    pub epochs_per_group: usize,
}

impl UnfreezeSchedule {
    pub fn new(groups: Vec<String>) -> Self {
        UnfreezeSchedule {
            groups,
            epochs_per_group: 1,
        }
    }

    /// Everything trainable from the start (epochs_per_group = 0).
    pub fn all_at_once(groups: Vec<String>) -> Self {
        UnfreezeSchedule {
            groups,
            epochs_per_group: 0,
        }
    }
}

/// Trainable group set at `epoch`. Monotone non-decreasing in `epoch`.
pub fn unfreeze_step(schedule: &UnfreezeSchedule, epoch: usize) -> BTreeSet<String> {
    let unlocked = if schedule.epochs_per_group == 0 {
        schedule.groups.len()
    } else {
        (epoch / schedule.epochs_per_group + 1).min(schedule.groups.len())
    };
    schedule.groups[..unlocked].iter().cloned().collect()
}

/// Default depth-decay factor for discriminative learning rates.
pub const LR_DECAY_XI: f64 = 0.95;

/// Per-group learning-rate multipliers xi^depth, depth 0 at the head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscriminativeLrMap {
    pub xi: f64,
    depths: BTreeMap<String, usize>,
}

impl DiscriminativeLrMap {
    /// Build from the head-first group order: group i gets depth i.
    pub fn from_group_order(groups: &[String], xi: f64) -> Self {
        DiscriminativeLrMap {
            xi,
            depths: groups
                .iter()
                .enumerate()
                .map(|(depth, g)| (g.clone(), depth))
                .collect(),
        }
    }

    /// Uniform multipliers (used where the technique is switched off).
    pub fn uniform(groups: &[String]) -> Self {
        Self::from_group_order(groups, 1.0)
    }

    pub fn multiplier(&self, group: &str) -> f64 {
        match self.depths.get(group) {
            Some(&depth) => self.xi.powi(depth as i32),
            None => 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_peak() {
        let max = 2e-5;
        assert_eq!(lr_at(0, 1000, max).unwrap(), 0.0);
        assert_eq!(lr_at(100, 1000, max).unwrap(), max);
        assert_eq!(lr_at(1000, 1000, max).unwrap(), 0.0);
        assert!(lr_at(0, 0, max).is_err());
    }

    #[test]
    fn schedule_is_continuous() {
        let total = 730;
        let max = 2e-5;
        let bound = 2.0 * max / (WARMUP_FRACTION * total as f64);
        for s in 0..total {
            let a = lr_at(s, total, max).unwrap();
            let b = lr_at(s + 1, total, max).unwrap();
            assert!((a - b).abs() <= bound + 1e-18, "step {s}");
            assert!(a >= 0.0 && a <= max + 1e-18);
        }
    }

    #[test]
    fn unfreezing_grows_monotonically_and_saturates() {
        let groups = vec![
            "head".to_string(),
            "block4".to_string(),
            "block3".to_string(),
            "block2".to_string(),
            "block1".to_string(),
            "embed".to_string(),
        ];
        let schedule = UnfreezeSchedule::new(groups.clone());
        let at0 = unfreeze_step(&schedule, 0);
        assert_eq!(at0.len(), 1);
        assert!(at0.contains("head"));
        let mut prev = at0;
        for epoch in 1..12 {
            let now = unfreeze_step(&schedule, epoch);
            assert!(now.is_superset(&prev), "epoch {epoch}");
            prev = now;
        }
        assert_eq!(unfreeze_step(&schedule, groups.len() - 1).len(), groups.len());
        assert_eq!(unfreeze_step(&schedule, 100).len(), groups.len());
    }

    #[test]
    fn multipliers_decay_with_depth() {
        let groups: Vec<String> = ["head", "block2", "block1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let map = DiscriminativeLrMap::from_group_order(&groups, 0.95);
        assert_eq!(map.multiplier("head"), 1.0);
        assert!((map.multiplier("block2") - 0.95).abs() < 1e-12);
        assert!((map.multiplier("block1") - 0.9025).abs() < 1e-12);
        // Non-increasing from the top, all positive.
        let mut last = f64::INFINITY;
        for g in &groups {
            let m = map.multiplier(g);
            assert!(m <= last && m > 0.0);
            last = m;
        }
    }
}
