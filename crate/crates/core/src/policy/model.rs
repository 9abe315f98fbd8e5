//! Compact causal transformer over action tokens, in 64-bit floats with
//! hand-written backprop.
//!
//! The network is deliberately small (two blocks, width 32 by default) and
//! exact: forward, log-likelihood, and gradient computations all run in f64
//! with fixed summation order, so identical inputs give bit-identical
//! results and central finite differences verify every gradient path.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rngutil::rng_from_seed;

use super::adapters::AdapterConfig;

/// Architecture hyperparameters. Shapes are fixed by `(vocab_size, d_model,
/// n_layers, n_heads, context)` alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return Err(ModelError::Config("zero-sized model dimension".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context < 8 {
            return Err(ModelError::Config("context below 8".into()));
        }
        if self.vocab_size < 10 {
            return Err(ModelError::Config("vocab too small".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence length {len} exceeds model context {context}")]
    SequenceTooLong { len: usize, context: usize },
    #[error("token id {0} out of vocabulary range")]
    TokenOutOfRange(u16),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of named tensors with O(1) name lookup.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape mismatch for {name}");
        assert!(!self.index.contains_key(&name), "duplicate tensor {name}");
        self.index.insert(name.clone(), self.tensors.len());
        self.tensors.push(Tensor { name, shape, data, trainable: true });
    }

    pub fn idx(&self, name: &str) -> usize {
        *self.index.get(name).unwrap_or_else(|| panic!("unknown tensor `{name}`"))
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.idx(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.idx(name);
        &mut self.tensors[i]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.tensors.iter().filter(|t| t.trainable).map(Tensor::len).sum()
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for t in &mut self.tensors {
            t.trainable = trainable;
        }
    }

    /// Deep value copy with every tensor frozen; training never touches it.
    pub fn clone_frozen(&self) -> ParamSet {
        let mut out = self.clone();
        out.set_all_trainable(false);
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers aligned index-for-index with a base (and optional
/// adapter) parameter set.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub base: Vec<Vec<f64>>,
    pub adapters: Option<Vec<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(base: &ParamSet, adapters: Option<&ParamSet>) -> Self {
        Gradients {
            base: base.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            adapters: adapters.map(|a| a.tensors.iter().map(|t| vec![0.0; t.len()]).collect()),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.base {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        if let Some(ad) = &mut self.adapters {
            for g in ad {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Frozen tensors report an exactly-zero analytic gradient.
    pub fn clear_frozen(&mut self, base: &ParamSet, adapters: Option<&ParamSet>) {
        for (g, t) in self.base.iter_mut().zip(&base.tensors) {
            if !t.trainable {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        if let (Some(gs), Some(ps)) = (&mut self.adapters, adapters) {
            for (g, t) in gs.iter_mut().zip(&ps.tensors) {
                if !t.trainable {
                    g.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.base.iter_mut().zip(&other.base) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        if let (Some(a), Some(b)) = (&mut self.adapters, &other.adapters) {
            for (ga, gb) in a.iter_mut().zip(b) {
                for (x, y) in ga.iter_mut().zip(gb) {
                    *x += scale * y;
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in &self.base {
            for v in g {
                sq += v * v;
            }
        }
        if let Some(ad) = &self.adapters {
            for g in ad {
                for v in g {
                    sq += v * v;
                }
            }
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.base {
            g.iter_mut().for_each(|v| *v *= factor);
        }
        if let Some(ad) = &mut self.adapters {
            for g in ad {
                g.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }
}

/// Initialize parameters for a config. Weights draw from N(0, 0.02²); the
/// output head starts at zero so a fresh model is exactly uniform.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamSet {
    cfg.validate().expect("valid model config");
    let mut rng = rng_from_seed(seed);
    let d = cfg.d_model;
    let v = cfg.vocab_size;
    let h = 4 * d;
    let mut p = ParamSet::default();
    let gauss = move |n: usize, std: f64, rng: &mut rand_chacha::ChaCha20Rng| -> Vec<f64> {
        (0..n).map(|_| std * box_muller(rng)).collect()
    };
    p.push("wte", vec![v, d], gauss(v * d, 0.02, &mut rng));
    p.push("wpe", vec![cfg.context, d], gauss(cfg.context * d, 0.02, &mut rng));
    for l in 0..cfg.n_layers {
        let pre = format!("l{l}");
        p.push(format!("{pre}.ln1.g"), vec![d], vec![1.0; d]);
        p.push(format!("{pre}.ln1.b"), vec![d], vec![0.0; d]);
        for proj in ["wq", "wk", "wv", "wo"] {
            p.push(format!("{pre}.attn.{proj}"), vec![d, d], gauss(d * d, 0.02, &mut rng));
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            p.push(format!("{pre}.attn.{bias}"), vec![d], vec![0.0; d]);
        }
        p.push(format!("{pre}.ln2.g"), vec![d], vec![1.0; d]);
        p.push(format!("{pre}.ln2.b"), vec![d], vec![0.0; d]);
        p.push(format!("{pre}.mlp.w1"), vec![h, d], gauss(h * d, 0.02, &mut rng));
        p.push(format!("{pre}.mlp.b1"), vec![h], vec![0.0; h]);
        p.push(format!("{pre}.mlp.w2"), vec![d, h], gauss(d * h, 0.02, &mut rng));
        p.push(format!("{pre}.mlp.b2"), vec![d], vec![0.0; d]);
    }
    p.push("lnf.g", vec![d], vec![1.0; d]);
    p.push("lnf.b", vec![d], vec![0.0; d]);
    p.push("head.w", vec![v, d], vec![0.0; v * d]);
    p.push("head.b", vec![v], vec![0.0; v]);
    p
}

fn box_muller(rng: &mut rand_chacha::ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The weight tensors that take low-rank adapters (all linear projections).
pub fn lora_target_names(cfg: &ModelConfig) -> Vec<String> {
    let mut names = Vec::new();
    for l in 0..cfg.n_layers {
        for proj in ["wq", "wk", "wv", "wo"] {
            names.push(format!("l{l}.attn.{proj}"));
        }
        names.push(format!("l{l}.mlp.w1"));
        names.push(format!("l{l}.mlp.w2"));
    }
    names.push("head.w".to_string());
    names
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Per-layer forward activations kept for the backward pass.
struct LayerCache {
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    ln1_out: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctxcat: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    ln2_out: Vec<f64>,
    h_pre: Vec<f64>,
    h_act: Vec<f64>,
    adapter_outs: HashMap<String, Vec<f64>>,
}

/// Full forward activations: token stream, per-layer caches, final norm,
/// and logits at every position.
pub struct ForwardCache {
    pub tokens: Vec<u16>,
    layers: Vec<LayerCache>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    lnf_out: Vec<f64>,
    head_adapter: Option<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn logits_at(&self, pos: usize, vocab: usize) -> &[f64] {
        &self.logits[pos * vocab..(pos + 1) * vocab]
    }
}

/// Read view over base parameters plus optional adapters.
pub struct Model<'a> {
    pub cfg: &'a ModelConfig,
    pub base: &'a ParamSet,
    pub adapters: Option<(&'a ParamSet, &'a AdapterConfig)>,
}

impl<'a> Model<'a> {
    pub fn new(cfg: &'a ModelConfig, base: &'a ParamSet) -> Self {
        Model { cfg, base, adapters: None }
    }

    pub fn with_adapters(
        cfg: &'a ModelConfig,
        base: &'a ParamSet,
        adapters: &'a ParamSet,
        adapter_cfg: &'a AdapterConfig,
    ) -> Self {
        Model { cfg, base, adapters: Some((adapters, adapter_cfg)) }
    }

    fn adapter_for(&self, name: &str) -> Option<(&[f64], &[f64], usize, f64)> {
        let (params, cfg) = self.adapters?;
        let a_name = format!("{name}.lora_a");
        if !params.contains(&a_name) {
            return None;
        }
        let a = params.get(&a_name);
        let b = params.get(&format!("{name}.lora_b"));
        Some((&a.data, &b.data, cfg.rank, cfg.scale()))
    }

    /// Linear map `y = W x + b (+ scale · B (A x))` over all positions.
    /// Returns the adapter intermediate `A x` when adapters apply.
    fn linear_fwd(
        &self,
        w_name: &str,
        b_name: Option<&str>,
        x: &[f64],
        t_len: usize,
        in_dim: usize,
        out_dim: usize,
        y: &mut [f64],
    ) -> Option<Vec<f64>> {
        let w = &self.base.get(w_name).data;
        let b = b_name.map(|n| &self.base.get(n).data);
        for t in 0..t_len {
            let xrow = &x[t * in_dim..(t + 1) * in_dim];
            let yrow = &mut y[t * out_dim..(t + 1) * out_dim];
            for o in 0..out_dim {
                let mut acc = b.map(|bb| bb[o]).unwrap_or(0.0);
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    acc += wrow[i] * xrow[i];
                }
                yrow[o] = acc;
            }
        }
        if let Some((a, bup, rank, scale)) = self.adapter_for(w_name) {
            let mut aout = vec![0.0; t_len * rank];
            for t in 0..t_len {
                let xrow = &x[t * in_dim..(t + 1) * in_dim];
                for j in 0..rank {
                    let arow = &a[j * in_dim..(j + 1) * in_dim];
                    let mut acc = 0.0;
                    for i in 0..in_dim {
                        acc += arow[i] * xrow[i];
                    }
                    aout[t * rank + j] = acc;
                }
                let yrow = &mut y[t * out_dim..(t + 1) * out_dim];
                for o in 0..out_dim {
                    let brow = &bup[o * rank..(o + 1) * rank];
                    let mut acc = 0.0;
                    for j in 0..rank {
                        acc += brow[j] * aout[t * rank + j];
                    }
                    yrow[o] += scale * acc;
                }
            }
            Some(aout)
        } else {
            None
        }
    }

    /// Backward of [`Self::linear_fwd`]: accumulates parameter grads into
    /// `grads` and input grads into `dx`.
    #[allow(clippy::too_many_arguments)]
    fn linear_bwd(
        &self,
        w_name: &str,
        b_name: Option<&str>,
        x: &[f64],
        aout: Option<&Vec<f64>>,
        dy: &[f64],
        t_len: usize,
        in_dim: usize,
        out_dim: usize,
        dx: &mut [f64],
        grads: &mut Gradients,
    ) {
        let w = &self.base.get(w_name).data;
        let widx = self.base.idx(w_name);
        {
            let dw = &mut grads.base[widx];
            for t in 0..t_len {
                let xrow = &x[t * in_dim..(t + 1) * in_dim];
                let dyrow = &dy[t * out_dim..(t + 1) * out_dim];
                for o in 0..out_dim {
                    let g = dyrow[o];
                    if g == 0.0 {
                        continue;
                    }
                    let dwrow = &mut dw[o * in_dim..(o + 1) * in_dim];
                    for i in 0..in_dim {
                        dwrow[i] += g * xrow[i];
                    }
                }
            }
        }
        if let Some(bn) = b_name {
            let bidx = self.base.idx(bn);
            let db = &mut grads.base[bidx];
            for t in 0..t_len {
                let dyrow = &dy[t * out_dim..(t + 1) * out_dim];
                for o in 0..out_dim {
                    db[o] += dyrow[o];
                }
            }
        }
        for t in 0..t_len {
            let dyrow = &dy[t * out_dim..(t + 1) * out_dim];
            let dxrow = &mut dx[t * in_dim..(t + 1) * in_dim];
            for o in 0..out_dim {
                let g = dyrow[o];
                if g == 0.0 {
                    continue;
                }
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    dxrow[i] += wrow[i] * g;
                }
            }
        }
        if let Some((a, bup, rank, scale)) = self.adapter_for(w_name) {
            let aout = aout.expect("adapter cache present for adapted map");
            let (params, _) = self.adapters.expect("adapters present");
            let aidx = params.idx(&format!("{w_name}.lora_a"));
            let bidx = params.idx(&format!("{w_name}.lora_b"));
            let mut daout = vec![0.0; t_len * rank];
            {
                let gset = grads.adapters.as_mut().expect("adapter grads allocated");
                let dbup = &mut gset[bidx];
                for t in 0..t_len {
                    let dyrow = &dy[t * out_dim..(t + 1) * out_dim];
                    let arow = &aout[t * rank..(t + 1) * rank];
                    for o in 0..out_dim {
                        let g = dyrow[o];
                        if g == 0.0 {
                            continue;
                        }
                        let dbrow = &mut dbup[o * rank..(o + 1) * rank];
                        let brow = &bup[o * rank..(o + 1) * rank];
                        for j in 0..rank {
                            dbrow[j] += scale * g * arow[j];
                            daout[t * rank + j] += scale * brow[j] * g;
                        }
                    }
                }
                let da = &mut gset[aidx];
                for t in 0..t_len {
                    let xrow = &x[t * in_dim..(t + 1) * in_dim];
                    for j in 0..rank {
                        let g = daout[t * rank + j];
                        if g == 0.0 {
                            continue;
                        }
                        let darow = &mut da[j * in_dim..(j + 1) * in_dim];
                        for i in 0..in_dim {
                            darow[i] += g * xrow[i];
                        }
                    }
                }
            }
            for t in 0..t_len {
                let dxrow = &mut dx[t * in_dim..(t + 1) * in_dim];
                for j in 0..rank {
                    let g = daout[t * rank + j];
                    if g == 0.0 {
                        continue;
                    }
                    let arow = &a[j * in_dim..(j + 1) * in_dim];
                    for i in 0..in_dim {
                        dxrow[i] += arow[i] * g;
                    }
                }
            }
        }
    }

    /// Full forward pass over a token sequence.
    pub fn forward(&self, tokens: &[u16]) -> Result<ForwardCache, ModelError> {
        let t_len = tokens.len();
        let d = self.cfg.d_model;
        let v = self.cfg.vocab_size;
        if t_len == 0 || t_len > self.cfg.context {
            return Err(ModelError::SequenceTooLong { len: t_len, context: self.cfg.context });
        }
        let wte = &self.base.get("wte").data;
        let wpe = &self.base.get("wpe").data;
        let mut x0 = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            if tok as usize >= v {
                return Err(ModelError::TokenOutOfRange(tok));
            }
            for i in 0..d {
                x0[t * d + i] = wte[tok as usize * d + i] + wpe[t * d + i];
            }
        }

        let mut x = x0;
        let mut layers = Vec::with_capacity(self.cfg.n_layers);
        for l in 0..self.cfg.n_layers {
            let pre = format!("l{l}");
            let x_in = x.clone();
            let (ln1_out, ln1_xhat, ln1_rstd) = layer_norm_fwd(
                &x_in,
                &self.base.get(&format!("{pre}.ln1.g")).data,
                &self.base.get(&format!("{pre}.ln1.b")).data,
                t_len,
                d,
            );
            let mut adapter_outs = HashMap::new();
            let mut q = vec![0.0; t_len * d];
            let mut k = vec![0.0; t_len * d];
            let mut vv = vec![0.0; t_len * d];
            for (proj, buf) in [("wq", &mut q), ("wk", &mut k), ("wv", &mut vv)] {
                let wn = format!("{pre}.attn.{proj}");
                let bn = format!("{pre}.attn.b{}", &proj[1..]);
                if let Some(aout) = self.linear_fwd(&wn, Some(&bn), &ln1_out, t_len, d, d, buf) {
                    adapter_outs.insert(wn, aout);
                }
            }
            let (ctxcat, probs) = attention_fwd(&q, &k, &vv, t_len, d, self.cfg.n_heads);
            let mut attn_proj = vec![0.0; t_len * d];
            let wo = format!("{pre}.attn.wo");
            if let Some(aout) =
                self.linear_fwd(&wo, Some(&format!("{pre}.attn.bo")), &ctxcat, t_len, d, d, &mut attn_proj)
            {
                adapter_outs.insert(wo, aout);
            }
            let mut x_mid = x_in.clone();
            for i in 0..t_len * d {
                x_mid[i] += attn_proj[i];
            }

            let (ln2_out, ln2_xhat, ln2_rstd) = layer_norm_fwd(
                &x_mid,
                &self.base.get(&format!("{pre}.ln2.g")).data,
                &self.base.get(&format!("{pre}.ln2.b")).data,
                t_len,
                d,
            );
            let hdim = 4 * d;
            let mut h_pre = vec![0.0; t_len * hdim];
            let w1 = format!("{pre}.mlp.w1");
            if let Some(aout) =
                self.linear_fwd(&w1, Some(&format!("{pre}.mlp.b1")), &ln2_out, t_len, d, hdim, &mut h_pre)
            {
                adapter_outs.insert(w1, aout);
            }
            let h_act: Vec<f64> = h_pre.iter().map(|&h| gelu(h)).collect();
            let mut mlp_out = vec![0.0; t_len * d];
            let w2 = format!("{pre}.mlp.w2");
            if let Some(aout) =
                self.linear_fwd(&w2, Some(&format!("{pre}.mlp.b2")), &h_act, t_len, hdim, d, &mut mlp_out)
            {
                adapter_outs.insert(w2, aout);
            }
            let mut x_out = x_mid.clone();
            for i in 0..t_len * d {
                x_out[i] += mlp_out[i];
            }

            layers.push(LayerCache {
                ln1_xhat,
                ln1_rstd,
                ln1_out,
                q,
                k,
                v: vv,
                probs,
                ctxcat,
                ln2_xhat,
                ln2_rstd,
                ln2_out,
                h_pre,
                h_act,
                adapter_outs,
            });
            x = x_out;
        }

        let (lnf_out, lnf_xhat, lnf_rstd) = layer_norm_fwd(
            &x,
            &self.base.get("lnf.g").data,
            &self.base.get("lnf.b").data,
            t_len,
            d,
        );
        let mut logits = vec![0.0; t_len * v];
        let head_adapter =
            self.linear_fwd("head.w", Some("head.b"), &lnf_out, t_len, d, v, &mut logits);

        Ok(ForwardCache {
            tokens: tokens.to_vec(),
            layers,
            lnf_xhat,
            lnf_rstd,
            lnf_out,
            head_adapter,
            logits,
        })
    }

    /// Backward pass accumulating into `grads`, given d(loss)/d(logits).
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], grads: &mut Gradients) {
        let t_len = cache.seq_len();
        let d = self.cfg.d_model;
        let v = self.cfg.vocab_size;
        assert_eq!(dlogits.len(), t_len * v);

        let mut d_lnf_out = vec![0.0; t_len * d];
        self.linear_bwd(
            "head.w",
            Some("head.b"),
            &cache.lnf_out,
            cache.head_adapter.as_ref(),
            dlogits,
            t_len,
            d,
            v,
            &mut d_lnf_out,
            grads,
        );
        let mut dx = vec![0.0; t_len * d];
        let (dg, db) = layer_norm_bwd(
            &d_lnf_out,
            &cache.lnf_xhat,
            &cache.lnf_rstd,
            &self.base.get("lnf.g").data,
            t_len,
            d,
            &mut dx,
        );
        acc(&mut grads.base[self.base.idx("lnf.g")], &dg);
        acc(&mut grads.base[self.base.idx("lnf.b")], &db);

        for l in (0..self.cfg.n_layers).rev() {
            let pre = format!("l{l}");
            let lc = &self.layers_cache(cache, l);
            let hdim = 4 * d;

            // dx is d(loss)/d(x_out); x_out = x_mid + mlp_out.
            let mut d_h_act = vec![0.0; t_len * hdim];
            self.linear_bwd(
                &format!("{pre}.mlp.w2"),
                Some(&format!("{pre}.mlp.b2")),
                &lc.h_act,
                lc.adapter_outs.get(&format!("{pre}.mlp.w2")),
                &dx,
                t_len,
                hdim,
                d,
                &mut d_h_act,
                grads,
            );
            let mut d_h_pre = vec![0.0; t_len * hdim];
            for i in 0..t_len * hdim {
                d_h_pre[i] = d_h_act[i] * gelu_grad(lc.h_pre[i]);
            }
            let mut d_ln2_out = vec![0.0; t_len * d];
            self.linear_bwd(
                &format!("{pre}.mlp.w1"),
                Some(&format!("{pre}.mlp.b1")),
                &lc.ln2_out,
                lc.adapter_outs.get(&format!("{pre}.mlp.w1")),
                &d_h_pre,
                t_len,
                d,
                hdim,
                &mut d_ln2_out,
                grads,
            );
            let mut d_x_mid = dx.clone(); // residual branch
            let (dg, db) = layer_norm_bwd(
                &d_ln2_out,
                &lc.ln2_xhat,
                &lc.ln2_rstd,
                &self.base.get(&format!("{pre}.ln2.g")).data,
                t_len,
                d,
                &mut d_x_mid,
            );
            acc(&mut grads.base[self.base.idx(&format!("{pre}.ln2.g"))], &dg);
            acc(&mut grads.base[self.base.idx(&format!("{pre}.ln2.b"))], &db);

            // x_mid = x_in + wo(ctxcat) + bo.
            let mut d_ctxcat = vec![0.0; t_len * d];
            self.linear_bwd(
                &format!("{pre}.attn.wo"),
                Some(&format!("{pre}.attn.bo")),
                &lc.ctxcat,
                lc.adapter_outs.get(&format!("{pre}.attn.wo")),
                &d_x_mid,
                t_len,
                d,
                d,
                &mut d_ctxcat,
                grads,
            );
            let (dq, dk, dv) = attention_bwd(
                &lc.q,
                &lc.k,
                &lc.v,
                &lc.probs,
                &d_ctxcat,
                t_len,
                d,
                self.cfg.n_heads,
            );
            let mut d_ln1_out = vec![0.0; t_len * d];
            for (proj, dbuf) in [("wq", &dq), ("wk", &dk), ("wv", &dv)] {
                let wn = format!("{pre}.attn.{proj}");
                let bn = format!("{pre}.attn.b{}", &proj[1..]);
                self.linear_bwd(
                    &wn,
                    Some(&bn),
                    &lc.ln1_out,
                    lc.adapter_outs.get(&wn),
                    dbuf,
                    t_len,
                    d,
                    d,
                    &mut d_ln1_out,
                    grads,
                );
            }
            let mut d_x_in = d_x_mid.clone(); // residual branch
            let (dg, db) = layer_norm_bwd(
                &d_ln1_out,
                &lc.ln1_xhat,
                &lc.ln1_rstd,
                &self.base.get(&format!("{pre}.ln1.g")).data,
                t_len,
                d,
                &mut d_x_in,
            );
            acc(&mut grads.base[self.base.idx(&format!("{pre}.ln1.g"))], &dg);
            acc(&mut grads.base[self.base.idx(&format!("{pre}.ln1.b"))], &db);
            dx = d_x_in;
        }

        // Embedding gradients.
        let wte_idx = self.base.idx("wte");
        let wpe_idx = self.base.idx("wpe");
        for (t, &tok) in cache.tokens.iter().enumerate() {
            for i in 0..d {
                let g = dx[t * d + i];
                grads.base[wte_idx][tok as usize * d + i] += g;
                grads.base[wpe_idx][t * d + i] += g;
            }
        }
    }

    fn layers_cache<'c>(&self, cache: &'c ForwardCache, l: usize) -> &'c LayerCache {
        &cache.layers[l]
    }
}

fn layer_norm_fwd(
    x: &[f64],
    g: &[f64],
    b: &[f64],
    t_len: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; t_len * d];
    let mut xhat = vec![0.0; t_len * d];
    let mut rstd = vec![0.0; t_len];
    for t in 0..t_len {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[t] = r;
        for i in 0..d {
            let xh = (row[i] - mean) * r;
            xhat[t * d + i] = xh;
            out[t * d + i] = g[i] * xh + b[i];
        }
    }
    (out, xhat, rstd)
}

fn acc(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Returns `(dg, db)` for the caller to accumulate.
fn layer_norm_bwd(
    dout: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    g: &[f64],
    t_len: usize,
    d: usize,
    dx: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    for t in 0..t_len {
        let dorow = &dout[t * d..(t + 1) * d];
        let xhrow = &xhat[t * d..(t + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..d {
            dg[i] += dorow[i] * xhrow[i];
            db[i] += dorow[i];
            let dxh = dorow[i] * g[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhrow[i];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for i in 0..d {
            let dxh = dorow[i] * g[i];
            dx[t * d + i] += rstd[t] * (dxh - mean_dxhat - xhrow[i] * mean_dxhat_xhat);
        }
    }
    (dg, db)
}

/// Causal multi-head attention. Returns the per-position head-concatenated
/// context vectors and the attention probabilities (kept for backward).
fn attention_fwd(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    t_len: usize,
    d: usize,
    n_heads: usize,
) -> (Vec<f64>, Vec<f64>) {
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut ctx = vec![0.0; t_len * d];
    let mut probs = vec![0.0; n_heads * t_len * t_len];
    for h in 0..n_heads {
        let off = h * hd;
        for t in 0..t_len {
            // Scores over positions 0..=t, numerically stabilized.
            let mut row = vec![0.0; t + 1];
            let mut max = f64::NEG_INFINITY;
            for (s, slot) in row.iter_mut().enumerate() {
                let mut dot = 0.0;
                for i in 0..hd {
                    dot += q[t * d + off + i] * k[s * d + off + i];
                }
                *slot = dot * scale;
                if *slot > max {
                    max = *slot;
                }
            }
            let mut denom = 0.0;
            for slot in row.iter_mut() {
                *slot = (*slot - max).exp();
                denom += *slot;
            }
            let pbase = (h * t_len + t) * t_len;
            for (s, slot) in row.iter().enumerate() {
                let p = slot / denom;
                probs[pbase + s] = p;
                for i in 0..hd {
                    ctx[t * d + off + i] += p * v[s * d + off + i];
                }
            }
        }
    }
    (ctx, probs)
}

fn attention_bwd(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dctx: &[f64],
    t_len: usize,
    d: usize,
    n_heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = vec![0.0; t_len * d];
    let mut dk = vec![0.0; t_len * d];
    let mut dv = vec![0.0; t_len * d];
    for h in 0..n_heads {
        let off = h * hd;
        for t in 0..t_len {
            let pbase = (h * t_len + t) * t_len;
            // dp and the softmax Jacobian.
            let mut dp = vec![0.0; t + 1];
            for (s, slot) in dp.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..hd {
                    acc += dctx[t * d + off + i] * v[s * d + off + i];
                }
                *slot = acc;
            }
            let mut inner = 0.0;
            for (s, slot) in dp.iter().enumerate() {
                inner += probs[pbase + s] * slot;
            }
            for (s, slot) in dp.iter().enumerate() {
                let p = probs[pbase + s];
                let ds = p * (slot - inner) * scale;
                for i in 0..hd {
                    dq[t * d + off + i] += ds * k[s * d + off + i];
                    dk[s * d + off + i] += ds * q[t * d + off + i];
                    dv[s * d + off + i] += p * dctx[t * d + off + i];
                }
            }
        }
    }
    (dq, dk, dv)
}

fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[target] - lse
}

/// A forward-evaluated (context, target) pair: log-probabilities plus the
/// cached activations needed to push gradients back later.
pub struct SequenceEval {
    cache: ForwardCache,
    ctx_len: usize,
    target: Vec<u16>,
    pub total: f64,
    pub per_token: Vec<f64>,
}

/// Run the forward pass once and score `target` under `context`.
pub fn evaluate_sequence(
    model: &Model,
    context: &[u16],
    target: &[u16],
) -> Result<SequenceEval, ModelError> {
    if context.is_empty() {
        return Err(ModelError::Config("context must be non-empty".into()));
    }
    let mut seq = Vec::with_capacity(context.len() + target.len());
    seq.extend_from_slice(context);
    seq.extend_from_slice(target);
    let cache = model.forward(&seq)?;
    let v = model.cfg.vocab_size;
    let mut per_token = Vec::with_capacity(target.len());
    for (i, &tok) in target.iter().enumerate() {
        let pos = context.len() + i - 1;
        let lp = log_softmax_at(cache.logits_at(pos, v), tok as usize);
        per_token.push(lp);
    }
    let total = per_token.iter().sum();
    Ok(SequenceEval { cache, ctx_len: context.len(), target: target.to_vec(), total, per_token })
}

/// Backward pass for a scored sequence: accumulates
/// `Σ_i coeffs[i] · ∂lp_i/∂θ` into `grads`.
pub fn backward_sequence(
    model: &Model,
    eval: &SequenceEval,
    coeffs: &[f64],
    grads: &mut Gradients,
) {
    assert_eq!(coeffs.len(), eval.target.len());
    let v = model.cfg.vocab_size;
    let t_len = eval.cache.seq_len();
    let mut dlogits = vec![0.0; t_len * v];
    for (i, &tok) in eval.target.iter().enumerate() {
        let c = coeffs[i];
        if c == 0.0 {
            continue;
        }
        let pos = eval.ctx_len + i - 1;
        let row = eval.cache.logits_at(pos, v);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for z in row {
            denom += (z - max).exp();
        }
        let drow = &mut dlogits[pos * v..(pos + 1) * v];
        for (j, z) in row.iter().enumerate() {
            let p = (z - max).exp() / denom;
            drow[j] += c * (((j == tok as usize) as u8 as f64) - p);
        }
    }
    model.backward(&eval.cache, &dlogits, grads);
}

/// Exact per-token conditional log-probabilities of `target` given `context`.
///
/// Returns `(total, per_token)` with `total = Σ per_token`; every entry is
/// `≤ 0`, all in 64-bit arithmetic.
pub fn sequence_logprob(
    model: &Model,
    context: &[u16],
    target: &[u16],
) -> Result<(f64, Vec<f64>), ModelError> {
    let eval = evaluate_sequence(model, context, target)?;
    Ok((eval.total, eval.per_token))
}

/// As [`sequence_logprob`], also accumulating `Σ_i coeffs[i] · ∂lp_i/∂θ`
/// into `grads`. `coeffs` weights each target token's log-probability in the
/// scalar being differentiated.
pub fn sequence_logprob_with_grad(
    model: &Model,
    context: &[u16],
    target: &[u16],
    coeffs: &[f64],
    grads: &mut Gradients,
) -> Result<(f64, Vec<f64>), ModelError> {
    let eval = evaluate_sequence(model, context, target)?;
    backward_sequence(model, &eval, coeffs, grads);
    Ok((eval.total, eval.per_token))
}
