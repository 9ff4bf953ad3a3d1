//! Best-of-N conversational query reformulation.
//!
//! Candidates for each conversation turn are labelled by how well their
//! standalone query retrieves the gold passage (sparse + dense reciprocal
//! ranks), a lightweight reward model is trained on those labels with a
//! margin ranking loss, and at inference the highest-scoring candidate is
//! selected.

pub mod assessment;
pub mod config;
pub mod eval;
pub mod generation;
pub mod inference;
pub mod jsonl;
pub mod pipeline;
pub mod retrieval;
pub mod reward;
pub mod synthetic;
pub mod text;
pub mod types;

pub use types::{
    concat_standalone, CandidatePool, ConversationSession, CoreError, GoldLabel, ReformulationCandidate, SessionRef,
    Turn,
};
