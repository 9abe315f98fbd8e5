//! Low-rank adapters over the frozen base model.
//!
//! Every linear projection `W` gains an additive update
//! `scale · B A` with `A: [r, in]` random and `B: [out, r]` zero, so a fresh
//! adapter set leaves the model exactly unchanged. During alignment only the
//! adapter tensors carry the trainable flag; base tensors stay frozen.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rngutil::rng_from_seed;

use super::model::{lora_target_names, ModelConfig, ParamSet};

/// Rank and scaling of the low-rank update (`scale = alpha / rank`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig { rank: 4, alpha: 4.0 }
    }
}

impl AdapterConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Attach fresh adapters for every linear projection of `cfg`.
///
/// The up-projection is zero-initialized, so the adapted model is
/// numerically identical to the base at step 0.
pub fn attach_lowrank(model_cfg: &ModelConfig, adapter_cfg: &AdapterConfig, seed: u64) -> ParamSet {
    assert!(adapter_cfg.rank >= 1, "adapter rank must be at least 1");
    let mut rng = rng_from_seed(seed);
    let r = adapter_cfg.rank;
    let mut params = ParamSet::default();
    for name in lora_target_names(model_cfg) {
        let (out_dim, in_dim) = projection_dims(model_cfg, &name);
        let a: Vec<f64> = (0..r * in_dim).map(|_| 0.02 * box_muller(&mut rng)).collect();
        params.push(format!("{name}.lora_a"), vec![r, in_dim], a);
        params.push(format!("{name}.lora_b"), vec![out_dim, r], vec![0.0; out_dim * r]);
    }
    params
}

fn projection_dims(cfg: &ModelConfig, name: &str) -> (usize, usize) {
    let d = cfg.d_model;
    if name == "head.w" {
        (cfg.vocab_size, d)
    } else if name.ends_with(".mlp.w1") {
        (4 * d, d)
    } else if name.ends_with(".mlp.w2") {
        (d, 4 * d)
    } else {
        (d, d)
    }
}

fn box_muller(rng: &mut rand_chacha::ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `Σ over adapted maps of rank · (fan_in + fan_out)`.
pub fn expected_adapter_params(cfg: &ModelConfig, adapter_cfg: &AdapterConfig) -> usize {
    lora_target_names(cfg)
        .iter()
        .map(|n| {
            let (out_dim, in_dim) = projection_dims(cfg, n);
            adapter_cfg.rank * (in_dim + out_dim)
        })
        .sum()
}
