//! AdamW: Adam with decoupled weight decay.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub schedule: LrSchedule,
}

/// Multiplier on the base learning rate as a function of the update count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from 1 at the first update to 0 after `total_steps`.
    Cosine { total_steps: u64 },
}

impl LrSchedule {
    /// Factor for the update with 1-based index `step`.
    pub fn factor(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { total_steps } => {
                let p = (step.saturating_sub(1) as f64 / total_steps.max(1) as f64).min(1.0);
                0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            schedule: LrSchedule::Constant,
        }
    }
}

/// Optimizer state. With `f32_state` set, parameters and moments are rounded
/// to `f32` after every step so a float32 checkpoint captures the state
/// exactly and training resumes bit-identically.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
    pub f32_state: bool,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            f32_state: true,
        }
    }

    /// Applies one update. Parameters missing from `grads` are left as is.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Array2<f64>>) {
        self.step += 1;
        let c = self.config.clone();
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = grads
                    .values()
                    .map(|g| g.iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let round = self.f32_state;
        let lr = c.lr * c.schedule.factor(self.step);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Array2::zeros(p.dim()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Array2::zeros(p.dim()));
            Zip::from(&mut *p)
                .and(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g * clip;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    if round {
                        *m = *m as f32 as f64;
                        *v = *v as f32 as f64;
                    }
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                    *p -= lr * (update + c.weight_decay * *p);
                    if round {
                        *p = *p as f32 as f64;
                    }
                });
        }
    }
}
