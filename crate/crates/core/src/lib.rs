//! Desk-scale framework for training and evaluating an embodied task planner.
//!
//! The crate couples a deterministic symbolic kitchen world with a compact
//! autoregressive action policy and a three-stage training curriculum:
//!
//! 1. history-free imitation on reactive steps (spatial grounding),
//! 2. full-context imitation on complete demonstrations (temporal reasoning),
//! 3. preference alignment with a bias-weighted DPO objective over mined
//!    violation pairs, trained through low-rank adapters on a frozen base.
//!
//! Everything is seeded and bit-reproducible: identical seeds and configs
//! produce identical scenes, datasets, checkpoints, and metric reports.

pub mod digest;
pub mod expert;
pub mod jsonl;
pub mod par;
pub mod policy;
pub mod rngutil;
pub mod training;
pub mod world;
