//! Loss functions for the three training stages.
//!
//! Stages 1 and 2 are negative mean sequence log-likelihoods over supervised
//! samples (history blocked vs. provided). Stage 3 is the bias-weighted
//! preference objective: a chosen-side weight `w` amplifies the margin, an
//! auxiliary SFT term anchors the policy to the expert action, and a hinge
//! unlikelihood penalty fires when the rejected action's per-token-mean
//! log-probability rises above the safety threshold `τ`.
//!
//! Sequence-total log-probabilities feed the log-ratios; the SFT and
//! unlikelihood terms use per-token means so the threshold is
//! length-invariant across two- and three-token actions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expert::SupervisedSample;
use crate::policy::{
    backward_sequence, context_cap, encode_action, encode_context, evaluate_sequence,
    sequence_logprob, ContextTuple, EncodeError, Gradients, Model,
};
use crate::world::{Action, ViolationCategory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("stage-1 samples must not carry history (contract breach)")]
    HistoryForbidden,
    #[error("stage-2 samples must carry history (contract breach)")]
    HistoryMissing,
    #[error("stage-3 training requires an init checkpoint")]
    MissingInit,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at step {step}: loss is non-finite")]
    Diverged { step: usize },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Model(#[from] crate::policy::ModelError),
    #[error("invalid hyperparameters: {0}")]
    BadHyperParams(String),
    #[error("invalid train config: {0}")]
    BadConfig(String),
}

/// Hyperparameters of the bias-weighted preference objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdpoHyperParams {
    /// KL temperature β > 0.
    pub beta: f64,
    /// Chosen-side weight w ≥ 1.
    pub w: f64,
    /// DPO term weight a ≥ 0.
    pub a: f64,
    /// SFT term weight b ≥ 0.
    pub b: f64,
    /// Unlikelihood threshold τ on the rejected per-token-mean log-prob.
    pub tau_threshold: f64,
    /// Label smoothing ε ∈ [0, 0.5).
    pub epsilon: f64,
}

impl Default for BdpoHyperParams {
    fn default() -> Self {
        BdpoHyperParams {
            beta: 0.1,
            w: 1.5,
            a: 1.0,
            b: 0.5,
            tau_threshold: -2.0,
            epsilon: 0.05,
        }
    }
}

impl BdpoHyperParams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::BadHyperParams(m));
        if !(self.beta > 0.0) {
            return fail(format!("beta {} must be positive", self.beta));
        }
        if self.w < 1.0 {
            return fail(format!("w {} must be at least 1", self.w));
        }
        if self.a < 0.0 || self.b < 0.0 {
            return fail("a and b must be non-negative".into());
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return fail(format!("epsilon {} outside [0, 0.5)", self.epsilon));
        }
        if !self.tau_threshold.is_finite() && self.tau_threshold != f64::NEG_INFINITY {
            return fail("tau_threshold must be finite or -inf".into());
        }
        Ok(())
    }
}

/// A mined preference pair: prompt, expert action, violating action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: ContextTuple,
    pub chosen: Action,
    pub rejected: Action,
    pub category: ViolationCategory,
}

/// Every term of one preference-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_dpo: f64,
    pub l_sft: f64,
    pub l_ul: f64,
    pub l_total: f64,
    pub chosen_logratio: f64,
    pub rejected_logratio: f64,
    pub logits: f64,
    pub chosen_logprob_per_token_mean: f64,
    pub rejected_logprob_per_token_mean: f64,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ensure_finite(value: f64, term: &'static str) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFinite(term))
    }
}

/// Scalar core of the preference objective, from precomputed log-ratios and
/// per-token means.
pub fn bdpo_from_logratios(
    chosen_logratio: f64,
    rejected_logratio: f64,
    chosen_mean: f64,
    rejected_mean: f64,
    hp: &BdpoHyperParams,
) -> Result<LossBreakdown, TrainError> {
    let logits = hp.w * chosen_logratio - rejected_logratio;
    // -(1-ε)·log σ(βz) - ε·log σ(-βz), with log σ(x) = -softplus(-x).
    let l_dpo = ensure_finite(
        (1.0 - hp.epsilon) * softplus(-hp.beta * logits) + hp.epsilon * softplus(hp.beta * logits),
        "l_dpo",
    )?;
    let l_sft = ensure_finite(-chosen_mean, "l_sft")?;
    let l_ul = ensure_finite((rejected_mean - hp.tau_threshold).max(0.0), "l_ul")?;
    let l_total = ensure_finite(hp.a * l_dpo + hp.b * l_sft + l_ul, "l_total")?;
    Ok(LossBreakdown {
        l_dpo,
        l_sft,
        l_ul,
        l_total,
        chosen_logratio,
        rejected_logratio,
        logits,
        chosen_logprob_per_token_mean: chosen_mean,
        rejected_logprob_per_token_mean: rejected_mean,
    })
}

/// d(l_dpo)/d(logits): β·(ε·σ(βz) − (1−ε)·σ(−βz)).
fn dpo_grad_wrt_logits(logits: f64, beta: f64, epsilon: f64) -> f64 {
    beta * (epsilon * sigmoid(beta * logits) - (1.0 - epsilon) * sigmoid(-beta * logits))
}

/// Token encodings of a preference pair under a vocabulary.
pub(crate) struct EncodedPair {
    pub context: Vec<u16>,
    pub chosen: Vec<u16>,
    pub rejected: Vec<u16>,
}

pub(crate) fn encode_pair(
    pair: &PreferencePair,
    vocab: &crate::policy::Vocabulary,
    cap: usize,
) -> Result<EncodedPair, TrainError> {
    Ok(EncodedPair {
        context: encode_context(&pair.context, vocab, cap)?,
        chosen: encode_action(&pair.chosen, vocab)?,
        rejected: encode_action(&pair.rejected, vocab)?,
    })
}

/// Reference-policy sequence totals for a pair (no gradients flow here).
pub(crate) fn reference_totals(
    reference: &Model,
    enc: &EncodedPair,
) -> Result<(f64, f64), TrainError> {
    let (ref_chosen, _) = sequence_logprob(reference, &enc.context, &enc.chosen)?;
    let (ref_rejected, _) = sequence_logprob(reference, &enc.context, &enc.rejected)?;
    Ok((ref_chosen, ref_rejected))
}

pub(crate) fn bdpo_core(
    policy: &Model,
    enc: &EncodedPair,
    ref_chosen_total: f64,
    ref_rejected_total: f64,
    hp: &BdpoHyperParams,
    mut grads: Option<&mut Gradients>,
) -> Result<LossBreakdown, TrainError> {
    hp.validate()?;
    let n_w = enc.chosen.len() as f64;
    let n_l = enc.rejected.len() as f64;

    let chosen_eval = evaluate_sequence(policy, &enc.context, &enc.chosen)?;
    let rejected_eval = evaluate_sequence(policy, &enc.context, &enc.rejected)?;
    let breakdown = bdpo_from_logratios(
        chosen_eval.total - ref_chosen_total,
        rejected_eval.total - ref_rejected_total,
        chosen_eval.total / n_w,
        rejected_eval.total / n_l,
        hp,
    )?;

    if let Some(grads) = grads.as_deref_mut() {
        let g = dpo_grad_wrt_logits(breakdown.logits, hp.beta, hp.epsilon);
        let hinge_active = breakdown.rejected_logprob_per_token_mean > hp.tau_threshold;
        // ∂l_total/∂lp_i for chosen tokens: a·g·w − b/n_w; for rejected
        // tokens: −a·g + [hinge]·1/n_l.
        let chosen_coeff = hp.a * g * hp.w - hp.b / n_w;
        let rejected_coeff = -hp.a * g + if hinge_active { 1.0 / n_l } else { 0.0 };
        backward_sequence(policy, &chosen_eval, &vec![chosen_coeff; enc.chosen.len()], grads);
        backward_sequence(policy, &rejected_eval, &vec![rejected_coeff; enc.rejected.len()], grads);
    }
    Ok(breakdown)
}

/// Bias-weighted preference loss for one pair against a frozen reference.
pub fn bdpo_loss(
    policy: &Model,
    reference: &Model,
    pair: &PreferencePair,
    hp: &BdpoHyperParams,
    vocab: &crate::policy::Vocabulary,
) -> Result<LossBreakdown, TrainError> {
    let enc = encode_pair(pair, vocab, context_cap(policy.cfg))?;
    let (ref_c, ref_r) = reference_totals(reference, &enc)?;
    bdpo_core(policy, &enc, ref_c, ref_r, hp, None)
}

/// As [`bdpo_loss`], accumulating parameter gradients.
pub fn bdpo_loss_with_grad(
    policy: &Model,
    reference: &Model,
    pair: &PreferencePair,
    hp: &BdpoHyperParams,
    vocab: &crate::policy::Vocabulary,
    grads: &mut Gradients,
) -> Result<LossBreakdown, TrainError> {
    let enc = encode_pair(pair, vocab, context_cap(policy.cfg))?;
    let (ref_c, ref_r) = reference_totals(reference, &enc)?;
    bdpo_core(policy, &enc, ref_c, ref_r, hp, Some(grads))
}

pub(crate) fn standard_dpo_core(
    policy: &Model,
    enc: &EncodedPair,
    ref_chosen_total: f64,
    ref_rejected_total: f64,
    beta: f64,
    epsilon: f64,
    mut grads: Option<&mut Gradients>,
) -> Result<LossBreakdown, TrainError> {
    if !(beta > 0.0) {
        return Err(TrainError::BadHyperParams(format!("beta {beta} must be positive")));
    }
    if !(0.0..0.5).contains(&epsilon) {
        return Err(TrainError::BadHyperParams(format!("epsilon {epsilon} outside [0, 0.5)")));
    }
    let n_w = enc.chosen.len() as f64;
    let n_l = enc.rejected.len() as f64;
    let chosen_eval = evaluate_sequence(policy, &enc.context, &enc.chosen)?;
    let rejected_eval = evaluate_sequence(policy, &enc.context, &enc.rejected)?;
    let chosen_logratio = chosen_eval.total - ref_chosen_total;
    let rejected_logratio = rejected_eval.total - ref_rejected_total;
    let logits = chosen_logratio - rejected_logratio;
    let l_dpo = ensure_finite(
        (1.0 - epsilon) * softplus(-beta * logits) + epsilon * softplus(beta * logits),
        "l_dpo",
    )?;
    if let Some(grads) = grads.as_deref_mut() {
        let g =
            beta * (epsilon * sigmoid(beta * logits) - (1.0 - epsilon) * sigmoid(-beta * logits));
        backward_sequence(policy, &chosen_eval, &vec![g; enc.chosen.len()], grads);
        backward_sequence(policy, &rejected_eval, &vec![-g; enc.rejected.len()], grads);
    }
    Ok(LossBreakdown {
        l_dpo,
        l_sft: -chosen_eval.total / n_w,
        l_ul: 0.0,
        l_total: l_dpo,
        chosen_logratio,
        rejected_logratio,
        logits,
        chosen_logprob_per_token_mean: chosen_eval.total / n_w,
        rejected_logprob_per_token_mean: rejected_eval.total / n_l,
    })
}

/// Standard preference loss (the alignment baseline): plain logistic loss on
/// the log-ratio margin, no chosen-side weight, no SFT anchor, no hinge.
pub fn standard_dpo_loss(
    policy: &Model,
    reference: &Model,
    pair: &PreferencePair,
    beta: f64,
    epsilon: f64,
    vocab: &crate::policy::Vocabulary,
) -> Result<LossBreakdown, TrainError> {
    let enc = encode_pair(pair, vocab, context_cap(policy.cfg))?;
    let (ref_c, ref_r) = reference_totals(reference, &enc)?;
    standard_dpo_core(policy, &enc, ref_c, ref_r, beta, epsilon, None)
}

/// As [`standard_dpo_loss`], accumulating parameter gradients.
pub fn standard_dpo_loss_with_grad(
    policy: &Model,
    reference: &Model,
    pair: &PreferencePair,
    beta: f64,
    epsilon: f64,
    vocab: &crate::policy::Vocabulary,
    grads: &mut Gradients,
) -> Result<LossBreakdown, TrainError> {
    let enc = encode_pair(pair, vocab, context_cap(policy.cfg))?;
    let (ref_c, ref_r) = reference_totals(reference, &enc)?;
    standard_dpo_core(policy, &enc, ref_c, ref_r, beta, epsilon, Some(grads))
}

fn sft_loss_impl(
    model: &Model,
    batch: &[SupervisedSample],
    vocab: &crate::policy::Vocabulary,
    require_history: bool,
    mut grads: Option<&mut Gradients>,
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    for sample in batch {
        match (require_history, sample.history.is_some()) {
            (false, true) => return Err(TrainError::HistoryForbidden),
            (true, false) => return Err(TrainError::HistoryMissing),
            _ => {}
        }
    }
    let cap = context_cap(model.cfg);
    let batch_size = batch.len() as f64;
    let mut loss = 0.0;
    for sample in batch {
        let ctx = crate::training::sample_context(sample);
        let context = encode_context(&ctx, vocab, cap)?;
        let target = encode_action(&sample.target, vocab)?;
        let total = match grads.as_deref_mut() {
            Some(grads) => {
                // loss = mean_b(−Σ_i lp_i) ⇒ ∂loss/∂lp_i = −1/B.
                let eval = evaluate_sequence(model, &context, &target)?;
                let coeffs = vec![-1.0 / batch_size; target.len()];
                backward_sequence(model, &eval, &coeffs, grads);
                eval.total
            }
            None => sequence_logprob(model, &context, &target)?.0,
        };
        loss -= total / batch_size;
    }
    ensure_finite(loss, "sft loss")
}

/// Stage-1 loss: negative mean log-likelihood with the history channel
/// blocked. Samples carrying history are rejected, not silently dropped.
pub fn stage1_loss(
    model: &Model,
    batch: &[SupervisedSample],
    vocab: &crate::policy::Vocabulary,
) -> Result<f64, TrainError> {
    sft_loss_impl(model, batch, vocab, false, None)
}

pub fn stage1_loss_with_grad(
    model: &Model,
    batch: &[SupervisedSample],
    vocab: &crate::policy::Vocabulary,
    grads: &mut Gradients,
) -> Result<f64, TrainError> {
    sft_loss_impl(model, batch, vocab, false, Some(grads))
}

/// Stage-2 loss: negative mean log-likelihood with the full action history.
pub fn stage2_loss(
    model: &Model,
    batch: &[SupervisedSample],
    vocab: &crate::policy::Vocabulary,
) -> Result<f64, TrainError> {
    sft_loss_impl(model, batch, vocab, true, None)
}

pub fn stage2_loss_with_grad(
    model: &Model,
    batch: &[SupervisedSample],
    vocab: &crate::policy::Vocabulary,
    grads: &mut Gradients,
) -> Result<f64, TrainError> {
    sft_loss_impl(model, batch, vocab, true, Some(grads))
}
