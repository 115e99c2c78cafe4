//! Knowledge-status characterization for language models.
//!
//! The crate samples a model repeatedly on each question, tallies the
//! answers over a support set and runs a hierarchy of exact and
//! likelihood-ratio tests to place the model's knowledge into one of five
//! statuses. Around that core it extracts context features, fits stratified
//! regressions explaining which contexts move a model to consistent correct
//! knowledge, and evaluates context-augmentation strategies.

pub mod error;
pub mod stats;
pub mod status;
pub mod prompts;
pub mod text;
pub mod client;
pub mod support;
pub mod features;
pub mod analysis;
pub mod augment;
pub mod workbench;

pub use error::{Error, Result};
pub use features::{Feature, FeatureVector};
pub use status::{
    characterize, KScopeConfig, KnowledgeStatus, ModeSet, ResponseCounts, StatusReport, TransitionMatrix,
};
pub use workbench::{QuestionRecord, RunManifest};
