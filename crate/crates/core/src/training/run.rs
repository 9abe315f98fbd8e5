//! The minibatch training loop.
//!
//! Deterministic by construction: shuffling derives from the config seed,
//! per-sample gradients are reduced in batch order regardless of worker
//! count, and checkpoints capture parameters bit-exactly.

use serde::{Deserialize, Serialize};

use crate::expert::SupervisedSample;
use crate::par::map_indexed;
use crate::policy::{
    attach_lowrank, backward_sequence, build_vocabulary, context_cap, encode_action,
    encode_context, evaluate_sequence, AdapterConfig, Checkpoint, ContextTuple, Gradients,
    Model, ModelConfig,
};
use crate::rngutil::{child_seed, rng_from_seed};
use crate::world::SceneConfig;

use super::loss::{
    bdpo_core, encode_pair, reference_totals, standard_dpo_core, BdpoHyperParams, EncodedPair,
    LossBreakdown, PreferencePair, TrainError,
};
use super::optim::Adam;

/// Which of the pipeline's training runs this is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// History-free imitation (spatial grounding).
    Stage1,
    /// Full-context imitation (temporal reasoning).
    Stage2,
    /// Preference alignment with the bias-weighted objective.
    Bdpo,
    /// Preference alignment with the plain DPO baseline.
    BaselineDpo,
}

impl Stage {
    pub fn parse(s: &str) -> Option<Stage> {
        match s {
            "1" | "stage1" => Some(Stage::Stage1),
            "2" | "stage2" => Some(Stage::Stage2),
            "3" | "stage3" | "bdpo" => Some(Stage::Bdpo),
            "3-dpo" | "dpo" => Some(Stage::BaselineDpo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub jobs: usize,
    pub bdpo: BdpoHyperParams,
    pub lora: AdapterConfig,
}

impl TrainConfig {
    /// Stage defaults: Adam(0.9, 0.999), clip 1.0, lr 3e-4 for imitation
    /// and 1e-4 for alignment.
    pub fn for_stage(stage: Stage) -> TrainConfig {
        let lr = match stage {
            Stage::Stage1 | Stage::Stage2 => 3e-4,
            Stage::Bdpo | Stage::BaselineDpo => 1e-4,
        };
        TrainConfig {
            stage,
            lr,
            batch_size: 16,
            max_steps: 300,
            clip_norm: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            jobs: 1,
            bdpo: BdpoHyperParams::default(),
            lora: AdapterConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::BadConfig(m));
        if !(self.lr > 0.0) {
            return fail(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return fail("batch_size and max_steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("moment coefficients must lie in [0, 1)".into());
        }
        self.bdpo.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub l_dpo: f64,
    pub l_sft: f64,
    pub l_ul: f64,
    pub l_total: f64,
    pub chosen_lp_mean: f64,
    pub rejected_lp_mean: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub enum TrainData {
    Supervised(Vec<SupervisedSample>),
    Pairs(Vec<PreferencePair>),
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainLogRow>,
}

/// The prompt tuple a supervised sample conditions on.
pub fn sample_context(sample: &SupervisedSample) -> ContextTuple {
    ContextTuple {
        observation: sample.observation.clone(),
        goal: sample.goal.clone(),
        history: sample.history.clone(),
    }
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Run one training stage and return the checkpoint plus a per-step log of
/// loss terms and likelihood diagnostics.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    scene_cfg: &SceneConfig,
    data: &TrainData,
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    let vocab = build_vocabulary(scene_cfg);
    if let Some(ckpt) = init {
        if ckpt.manifest.vocab_digest != vocab.digest() {
            return Err(TrainError::BadConfig(
                "init checkpoint was trained under a different vocabulary".into(),
            ));
        }
        if ckpt.manifest.model != *model_cfg {
            return Err(TrainError::BadConfig(
                "init checkpoint has a different model architecture".into(),
            ));
        }
    }
    match (cfg.stage, data) {
        (Stage::Stage1 | Stage::Stage2, TrainData::Supervised(_)) => {}
        (Stage::Bdpo | Stage::BaselineDpo, TrainData::Pairs(_)) => {}
        _ => return Err(TrainError::BadConfig("data kind does not match stage".into())),
    }

    match cfg.stage {
        Stage::Stage1 | Stage::Stage2 => {
            let TrainData::Supervised(samples) = data else { unreachable!() };
            train_supervised(cfg, model_cfg, scene_cfg, &vocab, samples, init)
        }
        Stage::Bdpo | Stage::BaselineDpo => {
            let TrainData::Pairs(pairs) = data else { unreachable!() };
            train_pairs(cfg, model_cfg, scene_cfg, &vocab, pairs, init)
        }
    }
}

fn train_supervised(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    scene_cfg: &SceneConfig,
    vocab: &crate::policy::Vocabulary,
    samples: &[SupervisedSample],
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let require_history = cfg.stage == Stage::Stage2;
    for s in samples {
        match (require_history, s.history.is_some()) {
            (false, true) => return Err(TrainError::HistoryForbidden),
            (true, false) => return Err(TrainError::HistoryMissing),
            _ => {}
        }
    }

    let mut params = match init {
        Some(ckpt) => ckpt.base.clone(),
        None => crate::policy::init_params(model_cfg, child_seed(cfg.seed, 0xA110)),
    };
    params.set_all_trainable(true);
    if cfg.stage == Stage::Stage2 && init.is_none() {
        log::info!("stage-2 run without an init checkpoint: joint training from scratch");
    }

    // Pre-encode every sample once.
    let cap = context_cap(model_cfg);
    let mut encoded: Vec<(Vec<u16>, Vec<u16>)> = Vec::with_capacity(samples.len());
    for s in samples {
        let ctx = encode_context(&sample_context(s), vocab, cap)?;
        let tgt = encode_action(&s.target, vocab)?;
        encoded.push((ctx, tgt));
    }

    let mut adam = Adam::new(&params, None, cfg.lr, cfg.beta1, cfg.beta2);
    let mut log_rows = Vec::with_capacity(cfg.max_steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let batch = cfg.batch_size.min(samples.len());
    let mut early: Vec<f64> = Vec::new();

    for step in 1..=cfg.max_steps {
        if cursor + batch > order.len() {
            order = shuffled_indices(samples.len(), child_seed(cfg.seed, epoch));
            epoch += 1;
            cursor = 0;
        }
        let batch_idx = &order[cursor..cursor + batch];
        cursor += batch;

        let results: Vec<Result<(f64, f64, Gradients), TrainError>> =
            map_indexed(cfg.jobs, batch, |i| {
                let (ctx, tgt) = &encoded[batch_idx[i]];
                let model = Model::new(model_cfg, &params);
                let mut grads = Gradients::zeros_like(&params, None);
                let eval = evaluate_sequence(&model, ctx, tgt)?;
                backward_sequence(&model, &eval, &vec![-1.0; tgt.len()], &mut grads);
                Ok((-eval.total, eval.total / tgt.len() as f64, grads))
            });

        let mut grads = Gradients::zeros_like(&params, None);
        let mut loss = 0.0;
        let mut lp_mean = 0.0;
        let inv_b = 1.0 / batch as f64;
        for r in results {
            let (sample_loss, sample_lp, g) = r?;
            grads.add_scaled(&g, inv_b);
            loss += sample_loss * inv_b;
            lp_mean += sample_lp * inv_b;
        }
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        grads.clear_frozen(&params, None);
        let grad_norm = adam.step(&mut params, None, &grads, cfg.clip_norm);

        if early.len() < 10 {
            if let Some(prev) = early.last() {
                if loss > *prev {
                    log::warn!(
                        "loss rose from {prev:.6} to {loss:.6} within the first 10 steps"
                    );
                }
            }
            early.push(loss);
        }
        log_rows.push(TrainLogRow {
            step,
            l_dpo: 0.0,
            l_sft: loss,
            l_ul: 0.0,
            l_total: loss,
            chosen_lp_mean: lp_mean,
            rejected_lp_mean: 0.0,
            grad_norm,
        });
    }

    let trained_stage = match (cfg.stage, init.is_some()) {
        (Stage::Stage1, _) => "stage1",
        (Stage::Stage2, true) => "stage2",
        (Stage::Stage2, false) => "stage2-direct",
        _ => unreachable!(),
    };
    let checkpoint = Checkpoint::new(
        model_cfg.clone(),
        scene_cfg.clone(),
        vocab.digest(),
        trained_stage.to_string(),
        cfg.stage == Stage::Stage2,
        params,
        None,
    );
    Ok(TrainOutcome { checkpoint, log: log_rows })
}

fn train_pairs(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    scene_cfg: &SceneConfig,
    vocab: &crate::policy::Vocabulary,
    pairs: &[PreferencePair],
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let Some(init) = init else {
        return Err(TrainError::MissingInit);
    };
    // Frozen base, fresh adapters, frozen reference clone of the init policy.
    let mut base = init.base.clone();
    base.set_all_trainable(false);
    let reference = init.base.clone_frozen();
    let adapter_cfg = cfg.lora.clone();
    let mut adapters = attach_lowrank(model_cfg, &adapter_cfg, child_seed(cfg.seed, 0x10A));
    adapters.set_all_trainable(true);

    let cap = context_cap(model_cfg);
    let mut encoded: Vec<EncodedPair> = Vec::with_capacity(pairs.len());
    for p in pairs {
        encoded.push(encode_pair(p, vocab, cap)?);
    }
    // The reference never changes; score every pair against it once.
    let ref_model = Model::new(model_cfg, &reference);
    let mut ref_totals: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for enc in &encoded {
        ref_totals.push(reference_totals(&ref_model, enc)?);
    }

    let hp = cfg.bdpo.clone();
    let baseline = cfg.stage == Stage::BaselineDpo;
    let mut adam = Adam::new(&base, Some(&adapters), cfg.lr, cfg.beta1, cfg.beta2);
    let mut log_rows = Vec::with_capacity(cfg.max_steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let batch = cfg.batch_size.min(pairs.len());

    for step in 1..=cfg.max_steps {
        if cursor + batch > order.len() {
            order = shuffled_indices(pairs.len(), child_seed(cfg.seed, epoch));
            epoch += 1;
            cursor = 0;
        }
        let batch_idx = &order[cursor..cursor + batch];
        cursor += batch;

        let results: Vec<Result<(LossBreakdown, Gradients), TrainError>> =
            map_indexed(cfg.jobs, batch, |i| {
                let idx = batch_idx[i];
                let enc = &encoded[idx];
                let (ref_c, ref_r) = ref_totals[idx];
                let model = Model::with_adapters(model_cfg, &base, &adapters, &adapter_cfg);
                let mut grads = Gradients::zeros_like(&base, Some(&adapters));
                let breakdown = if baseline {
                    standard_dpo_core(
                        &model, enc, ref_c, ref_r, hp.beta, hp.epsilon, Some(&mut grads),
                    )?
                } else {
                    bdpo_core(&model, enc, ref_c, ref_r, &hp, Some(&mut grads))?
                };
                Ok((breakdown, grads))
            });

        let mut grads = Gradients::zeros_like(&base, Some(&adapters));
        let inv_b = 1.0 / batch as f64;
        let mut agg = LossBreakdown {
            l_dpo: 0.0,
            l_sft: 0.0,
            l_ul: 0.0,
            l_total: 0.0,
            chosen_logratio: 0.0,
            rejected_logratio: 0.0,
            logits: 0.0,
            chosen_logprob_per_token_mean: 0.0,
            rejected_logprob_per_token_mean: 0.0,
        };
        for r in results {
            let (b, g) = r?;
            grads.add_scaled(&g, inv_b);
            agg.l_dpo += b.l_dpo * inv_b;
            agg.l_sft += b.l_sft * inv_b;
            agg.l_ul += b.l_ul * inv_b;
            agg.l_total += b.l_total * inv_b;
            agg.chosen_logprob_per_token_mean += b.chosen_logprob_per_token_mean * inv_b;
            agg.rejected_logprob_per_token_mean += b.rejected_logprob_per_token_mean * inv_b;
        }
        if !agg.l_total.is_finite() {
            return Err(TrainError::Diverged { step });
        }
        grads.clear_frozen(&base, Some(&adapters));
        let grad_norm = adam.step(&mut base, Some(&mut adapters), &grads, cfg.clip_norm);

        log_rows.push(TrainLogRow {
            step,
            l_dpo: agg.l_dpo,
            l_sft: agg.l_sft,
            l_ul: agg.l_ul,
            l_total: agg.l_total,
            chosen_lp_mean: agg.chosen_logprob_per_token_mean,
            rejected_lp_mean: agg.rejected_logprob_per_token_mean,
            grad_norm,
        });
    }

    let trained_stage = if baseline { "stage3-dpo" } else { "stage3-bdpo" };
    let checkpoint = Checkpoint::new(
        model_cfg.clone(),
        scene_cfg.clone(),
        vocab.digest(),
        trained_stage.to_string(),
        init.manifest.uses_history,
        base,
        Some((adapters, adapter_cfg)),
    );
    Ok(TrainOutcome { checkpoint, log: log_rows })
}
