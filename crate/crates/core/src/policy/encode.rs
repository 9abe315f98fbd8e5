//! Context and action token encodings.
//!
//! Context layout:
//! `<goal> … <landmarks> (id zone)* (<hist> (verb arg)* | <nohist>)
//!  <obs> zone (held | <hand_empty>) (id [<open>|<closed>] [<in> container])* <sep>`
//!
//! Actions encode as `[verb] [arg]? <eos>` (two or three tokens) and decode
//! back exactly.

use thiserror::Error;

use super::vocab::*;
use super::{ContextTuple, ModelConfig, Vocabulary};
use crate::world::{Action, GoalTemplate, ObjectId, Verb};

pub const MAX_ACTION_TOKENS: usize = 3;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("context needs {needed} tokens but the cap is {cap}")]
    ContextOverflow { needed: usize, cap: usize },
    #[error("cannot decode action from tokens: {0}")]
    BadAction(String),
}

/// Longest context the encoder may emit for this model: leave room for the
/// action tokens the model must still generate.
pub fn context_cap(model: &ModelConfig) -> usize {
    model.context - MAX_ACTION_TOKENS - 1
}

/// Encode an action as `[verb] [arg]? <eos>`.
pub fn encode_action(action: &Action, vocab: &Vocabulary) -> Result<Vec<u16>, EncodeError> {
    let mut out = Vec::with_capacity(MAX_ACTION_TOKENS);
    out.push(vocab.id(action.verb.name())?);
    if let Some(arg) = &action.arg {
        out.push(vocab.id(&arg.0)?);
    }
    out.push(vocab.id(TOK_EOS)?);
    Ok(out)
}

/// Inverse of [`encode_action`].
pub fn decode_action(tokens: &[u16], vocab: &Vocabulary) -> Result<Action, EncodeError> {
    let eos = vocab.id(TOK_EOS)?;
    let body: Vec<u16> = tokens.iter().copied().take_while(|t| *t != eos).collect();
    if body.is_empty() || body.len() > 2 {
        return Err(EncodeError::BadAction(format!("{} body tokens", body.len())));
    }
    let verb = vocab
        .verb_of(body[0])
        .ok_or_else(|| EncodeError::BadAction(format!("`{}` is not a verb", vocab.token(body[0]))))?;
    let arg = body.get(1).map(|t| ObjectId::new(vocab.token(*t)));
    match (verb, &arg) {
        (Verb::TaskCompleted, Some(_)) => {
            Err(EncodeError::BadAction("TaskCompleted takes no argument".into()))
        }
        (Verb::TaskCompleted, None) => Ok(Action { verb, arg }),
        (_, None) => Err(EncodeError::BadAction(format!("{verb} needs an argument"))),
        (_, Some(_)) => Ok(Action { verb, arg }),
    }
}

fn goal_tokens(ctx: &ContextTuple, vocab: &Vocabulary) -> Result<Vec<u16>, EncodeError> {
    let mut out = Vec::new();
    match &ctx.goal.template {
        GoalTemplate::PlaceIn { item, receptacle } => {
            out.push(vocab.id(TOK_PLACE_IN)?);
            out.push(vocab.id(&item.0)?);
            out.push(vocab.id(&receptacle.0)?);
        }
        GoalTemplate::PlaceInClosed { item, receptacle } => {
            out.push(vocab.id(TOK_PLACE_IN_CLOSED)?);
            out.push(vocab.id(&item.0)?);
            out.push(vocab.id(&receptacle.0)?);
        }
        GoalTemplate::SetOpenState { receptacle, open } => {
            out.push(vocab.id(TOK_SET_OPEN_STATE)?);
            out.push(vocab.id(&receptacle.0)?);
            out.push(vocab.id(if *open { TOK_OPEN_STATE } else { TOK_CLOSED_STATE })?);
        }
        GoalTemplate::MultiPlace { items } => {
            out.push(vocab.id(TOK_MULTI_PLACE)?);
            for (item, receptacle) in items {
                out.push(vocab.id(&item.0)?);
                out.push(vocab.id(&receptacle.0)?);
            }
        }
    }
    Ok(out)
}

/// Encode a context tuple, truncating history from the oldest side when the
/// sequence would exceed `cap`.
pub fn encode_context(
    ctx: &ContextTuple,
    vocab: &Vocabulary,
    cap: usize,
) -> Result<Vec<u16>, EncodeError> {
    let mut fixed_head: Vec<u16> = vec![vocab.id(TOK_GOAL)?];
    fixed_head.extend(goal_tokens(ctx, vocab)?);

    fixed_head.push(vocab.id(TOK_LANDMARKS)?);
    let mut landmarks = ctx.observation.landmarks.clone();
    landmarks.sort_by(|a, b| a.id.cmp(&b.id));
    for lm in &landmarks {
        fixed_head.push(vocab.id(&lm.id.0)?);
        fixed_head.push(vocab.id(&lm.zone.0)?);
    }

    let mut tail: Vec<u16> = vec![vocab.id(TOK_OBS)?];
    tail.push(vocab.id(&ctx.observation.agent_zone.0)?);
    match &ctx.observation.holding {
        Some(held) => tail.push(vocab.id(&held.0)?),
        None => tail.push(vocab.id(TOK_HAND_EMPTY)?),
    }
    let mut visible = ctx.observation.visible.clone();
    visible.sort_by(|a, b| a.id.cmp(&b.id));
    for v in &visible {
        tail.push(vocab.id(&v.id.0)?);
        if let Some(open) = v.open_state {
            tail.push(vocab.id(if open { TOK_OPEN_STATE } else { TOK_CLOSED_STATE })?);
        }
        if let Some(container) = &v.container {
            tail.push(vocab.id(TOK_IN)?);
            tail.push(vocab.id(&container.0)?);
        }
    }
    tail.push(vocab.id(TOK_SEP)?);

    // History segment, possibly truncated from the oldest side.
    let mut hist_actions: Vec<Vec<u16>> = Vec::new();
    let hist_marker = match &ctx.history {
        None => vocab.id(TOK_NOHIST)?,
        Some(actions) => {
            for a in actions {
                let mut toks = vec![vocab.id(a.verb.name())?];
                if let Some(arg) = &a.arg {
                    toks.push(vocab.id(&arg.0)?);
                }
                hist_actions.push(toks);
            }
            vocab.id(TOK_HIST)?
        }
    };

    let fixed_len = fixed_head.len() + 1 + tail.len();
    if fixed_len > cap {
        return Err(EncodeError::ContextOverflow { needed: fixed_len, cap });
    }
    let budget = cap - fixed_len;
    let mut hist_len: usize = hist_actions.iter().map(|a| a.len()).sum();
    let mut start = 0;
    while hist_len > budget && start < hist_actions.len() {
        hist_len -= hist_actions[start].len();
        start += 1;
    }
    if start > 0 {
        log::warn!(
            "context overflow: truncated {start} oldest history actions to fit cap {cap}"
        );
    }
    if hist_len > budget {
        return Err(EncodeError::ContextOverflow { needed: fixed_len + hist_len, cap });
    }

    let mut out = fixed_head;
    out.push(hist_marker);
    for toks in &hist_actions[start..] {
        out.extend_from_slice(toks);
    }
    out.extend_from_slice(&tail);
    Ok(out)
}
