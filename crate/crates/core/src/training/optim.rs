//! Adaptive-moment gradient descent with global-norm clipping.

use crate::policy::{Gradients, ParamSet};

/// Adam over the trainable tensors of a base (and optional adapter) set.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(
        base: &ParamSet,
        adapters: Option<&ParamSet>,
        lr: f64,
        beta1: f64,
        beta2: f64,
    ) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(base, adapters),
            v: Gradients::zeros_like(base, adapters),
        }
    }

    /// One update. Clips the global gradient norm to `clip_norm` (when
    /// positive) and applies bias-corrected moment updates to every
    /// trainable tensor. Returns the pre-clip gradient norm.
    pub fn step(
        &mut self,
        base: &mut ParamSet,
        adapters: Option<&mut ParamSet>,
        grads: &Gradients,
        clip_norm: f64,
    ) -> f64 {
        let norm = grads.global_norm();
        let scale = if clip_norm > 0.0 && norm > clip_norm { clip_norm / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);

        let update = |params: &mut ParamSet, gset: &[Vec<f64>], m: &mut [Vec<f64>], v: &mut [Vec<f64>]| {
            for (ti, tensor) in params.tensors.iter_mut().enumerate() {
                if !tensor.trainable {
                    continue;
                }
                let g = &gset[ti];
                let mt = &mut m[ti];
                let vt = &mut v[ti];
                for i in 0..tensor.data.len() {
                    let gi = g[i] * scale;
                    mt[i] = self.beta1 * mt[i] + (1.0 - self.beta1) * gi;
                    vt[i] = self.beta2 * vt[i] + (1.0 - self.beta2) * gi * gi;
                    let mhat = mt[i] / bc1;
                    let vhat = vt[i] / bc2;
                    tensor.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        };
        update(base, &grads.base, &mut self.m.base, &mut self.v.base);
        if let (Some(ad), Some(gads)) = (adapters, grads.adapters.as_ref()) {
            let ma = self.m.adapters.as_mut().expect("adapter moments");
            let va = self.v.adapters.as_mut().expect("adapter moments");
            update(ad, gads, ma, va);
        }
        norm
    }
}
