//! Candidate generation: prompt assembly, output parsing, text-generation
//! clients (HTTP and fixture replay) and pool assembly.

mod client;
mod parse;
mod pool;
mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::JsonlError;
use crate::types::SessionRef;

pub use client::{ClientError, FixtureClient, FixtureRecord, GenerationClient, GenerationRequest, HttpClient};
pub use parse::{format_output, parse_output, ParsedOutput, Unparseable};
pub use pool::{generate_pool, DropRecord, GeneratedPool};
pub use prompt::{DemoTurn, Demonstration, PromptTemplate};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("{session}: request {request_index} failed: {source}")]
    Request {
        session: SessionRef,
        request_index: usize,
        #[source]
        source: ClientError,
    },
    #[error("{0}: every request was unparseable or failed")]
    AllFailed(SessionRef),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Candidates requested per session.
    pub n: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_seed_base: i64,
    /// Attempts per request, including the first.
    pub max_attempts: u32,
    /// Base delay before retrying a transport failure; doubles per attempt.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n: 16,
            temperature: 0.7,
            max_output_tokens: 512,
            request_seed_base: 0,
            max_attempts: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            timeout_secs: 60,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        let bad = |m: &str| Err(GenerationError::Config(m.into()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be within [0, 2]");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        Ok(())
    }
}
