//! Token vocabulary derived from a generator config.
//!
//! The vocabulary is a pure function of the `SceneConfig`, so every artifact
//! produced under one config shares the same stable token↔index bijection.

use std::collections::HashMap;

use thiserror::Error;

use crate::digest::sha256_hex;
use crate::world::{SceneConfig, Verb};

pub const TOK_PAD: &str = "<pad>";
pub const TOK_EOS: &str = "<eos>";
pub const TOK_GOAL: &str = "<goal>";
pub const TOK_LANDMARKS: &str = "<landmarks>";
pub const TOK_HIST: &str = "<hist>";
pub const TOK_NOHIST: &str = "<nohist>";
pub const TOK_OBS: &str = "<obs>";
pub const TOK_SEP: &str = "<sep>";
pub const TOK_PLACE_IN: &str = "<place_in>";
pub const TOK_PLACE_IN_CLOSED: &str = "<place_in_closed>";
pub const TOK_SET_OPEN_STATE: &str = "<set_open_state>";
pub const TOK_MULTI_PLACE: &str = "<multi_place>";
pub const TOK_OPEN_STATE: &str = "<open>";
pub const TOK_CLOSED_STATE: &str = "<closed>";
pub const TOK_IN: &str = "<in>";
pub const TOK_HAND_EMPTY: &str = "<hand_empty>";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("token `{0}` is not in the vocabulary")]
    Unknown(String),
}

/// Bijective token↔index mapping covering structural markers, verbs, goal
/// markers, zone ids, and the object-id universe of a generator config.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u16>,
    verb_ids: Vec<u16>,
    object_ids: Vec<u16>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<u16, VocabError> {
        self.index.get(token).copied().ok_or_else(|| VocabError::Unknown(token.to_string()))
    }

    pub fn token(&self, id: u16) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Verb token ids in `Verb::ALL` order (the position-1 grammar mask).
    pub fn verb_ids(&self) -> &[u16] {
        &self.verb_ids
    }

    /// Object-id token ids, ascending (the position-2 grammar mask).
    pub fn object_ids(&self) -> &[u16] {
        &self.object_ids
    }

    pub fn verb_of(&self, id: u16) -> Option<Verb> {
        let pos = self.verb_ids.iter().position(|v| *v == id)?;
        Some(Verb::ALL[pos])
    }

    /// SHA-256 over the ordered token list.
    pub fn digest(&self) -> String {
        sha256_hex(self.tokens.join("\n").as_bytes())
    }
}

/// Build the vocabulary for a generator config.
pub fn build_vocabulary(config: &SceneConfig) -> Vocabulary {
    let mut tokens: Vec<String> = vec![
        TOK_PAD, TOK_EOS, TOK_GOAL, TOK_LANDMARKS, TOK_HIST, TOK_NOHIST, TOK_OBS, TOK_SEP,
    ]
    .into_iter()
    .map(String::from)
    .collect();

    let verb_start = tokens.len();
    for verb in Verb::ALL {
        tokens.push(verb.name().to_string());
    }

    for marker in [
        TOK_PLACE_IN,
        TOK_PLACE_IN_CLOSED,
        TOK_SET_OPEN_STATE,
        TOK_MULTI_PLACE,
        TOK_OPEN_STATE,
        TOK_CLOSED_STATE,
        TOK_IN,
        TOK_HAND_EMPTY,
    ] {
        tokens.push(marker.to_string());
    }

    for z in 0..config.zones {
        tokens.push(format!("z{z}"));
    }

    let mut objects: Vec<String> = config
        .pickable_pool
        .iter()
        .chain(config.openable_pool.iter())
        .chain(config.plain_pool.iter())
        .cloned()
        .collect();
    objects.sort();
    objects.dedup();
    let object_start = tokens.len();
    let object_count = objects.len();
    tokens.extend(objects);

    assert!(tokens.len() < 256, "vocabulary must stay below 256 tokens");

    let index: HashMap<String, u16> =
        tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u16)).collect();
    assert_eq!(index.len(), tokens.len(), "tokens must be unique");

    let verb_ids = (verb_start..verb_start + Verb::ALL.len()).map(|i| i as u16).collect();
    let object_ids = (object_start..object_start + object_count).map(|i| i as u16).collect();

    Vocabulary { tokens, index, verb_ids, object_ids }
}
