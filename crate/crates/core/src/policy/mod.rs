//! Trainable autoregressive action policy.
//!
//! Observations, goals, and action histories are featurized into a compact
//! symbolic token stream (the fixed, non-trainable stand-in for a perception
//! encoder); a small causal transformer over that stream exposes exact
//! 64-bit log-likelihoods, hand-written gradients, grammar-masked sampling,
//! frozen reference clones, and low-rank adapters.

mod adapters;
mod checkpoint;
mod encode;
mod model;
mod sample;
mod vocab;

pub use adapters::{attach_lowrank, expected_adapter_params, AdapterConfig};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, TensorMeta,
    CHECKPOINT_FORMAT_VERSION,
};
pub use encode::{context_cap, decode_action, encode_action, encode_context, EncodeError};
pub use model::{
    backward_sequence, evaluate_sequence, init_params, sequence_logprob,
    sequence_logprob_with_grad, ForwardCache, Gradients, Model, ModelConfig, ModelError,
    ParamSet, SequenceEval, Tensor,
};
pub use sample::{action_distribution, sample_action, sample_masked};
pub use vocab::{build_vocabulary, Vocabulary};

use serde::{Deserialize, Serialize};

use crate::world::{Action, Goal, Observation};

/// The prompt x = (observation, goal, history).
///
/// `history` is `None` for history-free (stage-1) contexts and `Some` with
/// the executed-action prefix otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextTuple {
    pub observation: Observation,
    pub goal: Goal,
    pub history: Option<Vec<Action>>,
}
