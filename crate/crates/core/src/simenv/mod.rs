//! Deterministic synthetic environment: a planted-answer corpus, a hashing
//! embedder, a unigram answer scorer, root-level retrieval, and scripted
//! agents that exercise each controller pathway.

use thiserror::Error;

mod agent;
mod corpus;
mod embed;
mod env;
mod scorer;

pub use agent::{pick_answer, rotating_query, scripted_action, Profile, ScriptedAgent};
pub use corpus::{
    generate_corpus, retrieve, CorpusSpec, SimCorpus, TaskRecord, ATTRIBUTES, REACHABILITY_BUDGET,
};
pub use embed::{hash_embed, token_bucket, tokenize, CachedEmbedder, HashEmbedder, DEFAULT_DIM};
pub use env::SimEnv;
pub use scorer::{toy_score, ToyScorer};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("task {0}: planted answer not reachable within the action budget")]
    Unreachable(String),
}
