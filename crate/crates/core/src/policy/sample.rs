//! Grammar-masked action sampling.
//!
//! Decoding is constrained to the action grammar: the first generated token
//! must be a verb, the second (for non-terminating verbs) an object id. The
//! output always parses as a well-formed action; whether it is *executable*
//! is the environment's verdict, not the decoder's.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::world::{Action, ObjectId, Verb};

use super::model::{Model, ModelError};
use super::vocab::Vocabulary;

/// Temperatures below this sample greedily (deterministic argmax).
pub const ARGMAX_TEMPERATURE: f64 = 1e-6;

/// Masked softmax probabilities over `allowed`, at the given temperature.
pub fn masked_probs(logits: &[f64], allowed: &[u16], temperature: f64) -> Vec<f64> {
    let t = temperature.max(ARGMAX_TEMPERATURE);
    let max = allowed
        .iter()
        .map(|&id| logits[id as usize] / t)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> =
        allowed.iter().map(|&id| (logits[id as usize] / t - max).exp()).collect();
    let denom: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= denom;
    }
    probs
}

/// Sample one token from the masked, temperature-scaled distribution.
/// Temperatures below [`ARGMAX_TEMPERATURE`] take the argmax (lowest token
/// id wins ties).
pub fn sample_masked(
    logits: &[f64],
    allowed: &[u16],
    temperature: f64,
    rng: &mut ChaCha20Rng,
) -> u16 {
    assert!(!allowed.is_empty(), "mask must allow at least one token");
    assert!(temperature > 0.0, "temperature must be positive");
    if temperature < ARGMAX_TEMPERATURE {
        let mut best = allowed[0];
        let mut best_logit = logits[allowed[0] as usize];
        for &id in &allowed[1..] {
            if logits[id as usize] > best_logit {
                best = id;
                best_logit = logits[id as usize];
            }
        }
        return best;
    }
    let probs = masked_probs(logits, allowed, temperature);
    let dart: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if dart < acc {
            return allowed[i];
        }
    }
    *allowed.last().expect("non-empty mask")
}

/// Sample a well-formed action for `context` under the grammar mask.
pub fn sample_action(
    model: &Model,
    vocab: &Vocabulary,
    context: &[u16],
    temperature: f64,
    rng: &mut ChaCha20Rng,
) -> Result<Action, ModelError> {
    let v = model.cfg.vocab_size;
    let cache = model.forward(context)?;
    let verb_tok = sample_masked(
        cache.logits_at(context.len() - 1, v),
        vocab.verb_ids(),
        temperature,
        rng,
    );
    let verb = vocab.verb_of(verb_tok).expect("mask yields verbs");
    if verb == Verb::TaskCompleted {
        return Ok(Action::task_completed());
    }
    let mut extended = context.to_vec();
    extended.push(verb_tok);
    let cache = model.forward(&extended)?;
    let arg_tok = sample_masked(
        cache.logits_at(extended.len() - 1, v),
        vocab.object_ids(),
        temperature,
        rng,
    );
    Ok(Action { verb, arg: Some(ObjectId::new(vocab.token(arg_tok))) })
}

/// Exact distribution over actions induced by grammar-masked sampling at a
/// temperature: P(verb) times P(arg | verb) for argumented verbs.
pub fn action_distribution(
    model: &Model,
    vocab: &Vocabulary,
    context: &[u16],
    temperature: f64,
) -> Result<Vec<(Action, f64)>, ModelError> {
    let v = model.cfg.vocab_size;
    let cache = model.forward(context)?;
    let verb_probs =
        masked_probs(cache.logits_at(context.len() - 1, v), vocab.verb_ids(), temperature);
    let mut out = Vec::new();
    for (vi, &verb_tok) in vocab.verb_ids().iter().enumerate() {
        let verb = vocab.verb_of(verb_tok).expect("verb token");
        let pv = verb_probs[vi];
        if verb == Verb::TaskCompleted {
            out.push((Action::task_completed(), pv));
            continue;
        }
        let mut extended = context.to_vec();
        extended.push(verb_tok);
        let cache = model.forward(&extended)?;
        let arg_probs = masked_probs(
            cache.logits_at(extended.len() - 1, v),
            vocab.object_ids(),
            temperature,
        );
        for (ai, &arg_tok) in vocab.object_ids().iter().enumerate() {
            out.push((
                Action { verb, arg: Some(ObjectId::new(vocab.token(arg_tok))) },
                pv * arg_probs[ai],
            ));
        }
    }
    Ok(out)
}
