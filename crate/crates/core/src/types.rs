//! Conversation, candidate and gold-label types shared across the pipeline.
//!
//! Every type here validates on construction (including deserialization), so a
//! value that exists is well formed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

/// Token cap applied to a concatenated rewrite + pseudo-response query.
pub const MAX_STANDALONE_TOKENS: usize = 256;
/// Token cap applied to a rewrite-only query.
pub const MAX_REWRITE_TOKENS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoreError {
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),
    #[error("invalid session: {0}")]
    InvalidSession(String),
    #[error("invalid candidate pool: {0}")]
    InvalidPool(String),
    #[error("invalid gold label: {0}")]
    InvalidGold(String),
}

/// Identifies one conversation turn: a session id plus the 1-based turn index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionRef {
    pub session_id: String,
    pub turn_index: u32,
}

impl SessionRef {
    pub fn new(session_id: impl Into<String>, turn_index: u32) -> Self {
        Self { session_id: session_id.into(), turn_index }
    }

    /// Query id used in TREC runs and qrels: `{session_id}_{turn_index}`.
    pub fn qid(&self) -> String {
        format!("{}_{}", self.session_id, self.turn_index)
    }
}

impl fmt::Display for SessionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.session_id, self.turn_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTurn")]
pub struct Turn {
    query: String,
    response: String,
}

#[derive(Deserialize)]
struct RawTurn {
    query: String,
    #[serde(default)]
    response: String,
}

impl TryFrom<RawTurn> for Turn {
    type Error = CoreError;
    fn try_from(raw: RawTurn) -> Result<Self, Self::Error> {
        Turn::new(raw.query, raw.response)
    }
}

impl Turn {
    pub fn new(query: impl Into<String>, response: impl Into<String>) -> Result<Self, CoreError> {
        let query = query.into();
        if query.trim().is_empty() {
            return Err(CoreError::InvalidSession("turn query is empty".into()));
        }
        Ok(Self { query, response: response.into() })
    }

    pub fn query(&self) -> &str {
        &self.query
    }

    pub fn response(&self) -> &str {
        &self.response
    }
}

/// The current query of turn `k` together with the `k - 1` preceding turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSession")]
pub struct ConversationSession {
    session_id: String,
    turn_index: u32,
    history: Vec<Turn>,
    current_query: String,
}

#[derive(Deserialize)]
struct RawSession {
    session_id: String,
    turn_index: u32,
    #[serde(default)]
    history: Vec<Turn>,
    current_query: String,
}

impl TryFrom<RawSession> for ConversationSession {
    type Error = CoreError;
    fn try_from(raw: RawSession) -> Result<Self, Self::Error> {
        ConversationSession::new(raw.session_id, raw.turn_index, raw.history, raw.current_query)
    }
}

impl ConversationSession {
    pub fn new(
        session_id: impl Into<String>,
        turn_index: u32,
        history: Vec<Turn>,
        current_query: impl Into<String>,
    ) -> Result<Self, CoreError> {
        let session_id = session_id.into();
        let current_query = current_query.into();
        if session_id.is_empty() {
            return Err(CoreError::InvalidSession("empty session_id".into()));
        }
        if turn_index == 0 {
            return Err(CoreError::InvalidSession(format!("session {session_id}: turn_index must be >= 1")));
        }
        if history.len() != turn_index as usize - 1 {
            return Err(CoreError::InvalidSession(format!(
                "session {session_id}: history has {} turns but turn_index is {turn_index}",
                history.len()
            )));
        }
        if current_query.trim().is_empty() {
            return Err(CoreError::InvalidSession(format!("session {session_id}: current_query is empty")));
        }
        Ok(Self { session_id, turn_index, history, current_query })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn turn_index(&self) -> u32 {
        self.turn_index
    }

    pub fn history(&self) -> &[Turn] {
        &self.history
    }

    pub fn current_query(&self) -> &str {
        &self.current_query
    }

    pub fn session_ref(&self) -> SessionRef {
        SessionRef::new(self.session_id.clone(), self.turn_index)
    }
}

/// Joins a rewrite and its pseudo-response with a single space.
pub fn concat_standalone(rewrite: &str, pseudo_response: &str) -> Result<String, CoreError> {
    if rewrite.trim().is_empty() {
        return Err(CoreError::InvalidCandidate("rewrite is empty".into()));
    }
    if pseudo_response.is_empty() {
        return Ok(rewrite.to_owned());
    }
    let mut s = String::with_capacity(rewrite.len() + 1 + pseudo_response.len());
    s.push_str(rewrite);
    s.push(' ');
    s.push_str(pseudo_response);
    Ok(s)
}

/// One generated reformulation: rewrite `q̂`, pseudo-response `r̂` and the
/// derived standalone query `S = q̂ ⊕ r̂`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCandidate")]
pub struct ReformulationCandidate {
    rewrite: String,
    pseudo_response: String,
    candidate_index: usize,
    generation_seed: i64,
    #[serde(skip)]
    standalone_query: String,
}

#[derive(Deserialize)]
struct RawCandidate {
    rewrite: String,
    #[serde(default)]
    pseudo_response: String,
    candidate_index: usize,
    generation_seed: i64,
}

impl TryFrom<RawCandidate> for ReformulationCandidate {
    type Error = CoreError;
    fn try_from(raw: RawCandidate) -> Result<Self, Self::Error> {
        ReformulationCandidate::new(raw.rewrite, raw.pseudo_response, raw.candidate_index, raw.generation_seed)
    }
}

impl ReformulationCandidate {
    pub fn new(
        rewrite: impl Into<String>,
        pseudo_response: impl Into<String>,
        candidate_index: usize,
        generation_seed: i64,
    ) -> Result<Self, CoreError> {
        let rewrite = rewrite.into();
        let pseudo_response = pseudo_response.into();
        let standalone_query = concat_standalone(&rewrite, &pseudo_response)?;
        Ok(Self { rewrite, pseudo_response, candidate_index, generation_seed, standalone_query })
    }

    pub fn rewrite(&self) -> &str {
        &self.rewrite
    }

    pub fn pseudo_response(&self) -> &str {
        &self.pseudo_response
    }

    pub fn standalone_query(&self) -> &str {
        &self.standalone_query
    }

    pub fn candidate_index(&self) -> usize {
        self.candidate_index
    }

    pub fn generation_seed(&self) -> i64 {
        self.generation_seed
    }

    /// The query actually issued to a retrieval system: `S` capped at
    /// `max_tokens` whitespace tokens.
    pub fn retrieval_query(&self, max_tokens: usize) -> String {
        text::truncate_query(&self.standalone_query, max_tokens)
    }

    pub(crate) fn with_index(mut self, candidate_index: usize) -> Self {
        self.candidate_index = candidate_index;
        self
    }
}

/// The `n` candidates generated for one session turn, indexed `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawPool")]
pub struct CandidatePool {
    session_id: String,
    turn_index: u32,
    candidates: Vec<ReformulationCandidate>,
}

#[derive(Deserialize)]
struct RawPool {
    session_id: String,
    turn_index: u32,
    candidates: Vec<ReformulationCandidate>,
}

impl TryFrom<RawPool> for CandidatePool {
    type Error = CoreError;
    fn try_from(raw: RawPool) -> Result<Self, Self::Error> {
        CandidatePool::new(SessionRef::new(raw.session_id, raw.turn_index), raw.candidates)
    }
}

impl CandidatePool {
    pub fn new(session_ref: SessionRef, candidates: Vec<ReformulationCandidate>) -> Result<Self, CoreError> {
        if candidates.is_empty() {
            return Err(CoreError::InvalidPool(format!("{session_ref}: pool is empty")));
        }
        for (i, c) in candidates.iter().enumerate() {
            if c.candidate_index != i {
                return Err(CoreError::InvalidPool(format!(
                    "{session_ref}: candidate at position {i} has candidate_index {}",
                    c.candidate_index
                )));
            }
        }
        Ok(Self { session_id: session_ref.session_id, turn_index: session_ref.turn_index, candidates })
    }

    pub fn session_ref(&self) -> SessionRef {
        SessionRef::new(self.session_id.clone(), self.turn_index)
    }

    pub fn candidates(&self) -> &[ReformulationCandidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Relevance judgments for one session turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldLabel {
    session_ref: SessionRef,
    gold_passage_ids: BTreeSet<String>,
    graded_relevance: BTreeMap<String, u32>,
}

impl GoldLabel {
    pub fn new(
        session_ref: SessionRef,
        gold_passage_ids: BTreeSet<String>,
        graded_relevance: BTreeMap<String, u32>,
    ) -> Result<Self, CoreError> {
        if gold_passage_ids.is_empty() {
            return Err(CoreError::InvalidGold(format!("{session_ref}: no gold passage")));
        }
        if let Some((pid, _)) = graded_relevance.iter().find(|(pid, g)| **g > 0 && !gold_passage_ids.contains(*pid)) {
            return Err(CoreError::InvalidGold(format!(
                "{session_ref}: graded passage {pid} is missing from the gold set"
            )));
        }
        Ok(Self { session_ref, gold_passage_ids, graded_relevance })
    }

    /// Builds a label from graded judgments; passages with grade at or above
    /// `rel_threshold` count as gold.
    pub fn from_grades(
        session_ref: SessionRef,
        grades: &BTreeMap<String, u32>,
        rel_threshold: u32,
    ) -> Result<Self, CoreError> {
        let rel_threshold = rel_threshold.max(1);
        let gold: BTreeSet<String> =
            grades.iter().filter(|(_, g)| **g >= rel_threshold).map(|(p, _)| p.clone()).collect();
        let graded = grades.iter().filter(|(_, g)| **g >= rel_threshold).map(|(p, g)| (p.clone(), *g)).collect();
        Self::new(session_ref, gold, graded)
    }

    /// Single gold passage with grade 1.
    pub fn single(session_ref: SessionRef, passage_id: impl Into<String>) -> Self {
        let pid = passage_id.into();
        Self {
            session_ref,
            gold_passage_ids: BTreeSet::from([pid.clone()]),
            graded_relevance: BTreeMap::from([(pid, 1)]),
        }
    }

    pub fn session_ref(&self) -> &SessionRef {
        &self.session_ref
    }

    pub fn gold_passage_ids(&self) -> &BTreeSet<String> {
        &self.gold_passage_ids
    }

    pub fn graded_relevance(&self) -> &BTreeMap<String, u32> {
        &self.graded_relevance
    }

    pub fn is_gold(&self, passage_id: &str) -> bool {
        self.gold_passage_ids.contains(passage_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn concat_examples() {
        assert_eq!(
            concat_standalone("who designed the dime", "John R. Sinnock designed it").unwrap(),
            "who designed the dime John R. Sinnock designed it"
        );
        assert_eq!(concat_standalone("q", "").unwrap(), "q");
        assert_eq!(concat_standalone("a", "b").unwrap(), "a b");
    }

    #[test]
    fn concat_rejects_empty_rewrite() {
        assert!(matches!(concat_standalone("", "x"), Err(CoreError::InvalidCandidate(_))));
        assert!(matches!(concat_standalone("  ", "x"), Err(CoreError::InvalidCandidate(_))));
    }

    #[test]
    fn session_invariants() {
        let t = Turn::new("q1", "r1").unwrap();
        assert!(ConversationSession::new("s", 2, vec![t.clone()], "q2").is_ok());
        assert!(ConversationSession::new("s", 1, vec![t.clone()], "q2").is_err());
        assert!(ConversationSession::new("s", 0, vec![], "q").is_err());
        assert!(ConversationSession::new("s", 1, vec![], "   ").is_err());
        assert!(Turn::new(" ", "r").is_err());
    }

    #[test]
    fn session_json_rejects_bad_history_length() {
        let bad = r#"{"session_id":"s","turn_index":3,"history":[{"query":"a","response":"b"}],"current_query":"c"}"#;
        assert!(serde_json::from_str::<ConversationSession>(bad).is_err());
    }

    #[test]
    fn pool_requires_contiguous_indices() {
        let r = SessionRef::new("s", 1);
        let c0 = ReformulationCandidate::new("a", "", 0, 0).unwrap();
        let c2 = ReformulationCandidate::new("b", "", 2, 0).unwrap();
        assert!(CandidatePool::new(r.clone(), vec![c0.clone(), c2]).is_err());
        assert!(CandidatePool::new(r.clone(), vec![]).is_err());
        assert!(CandidatePool::new(r, vec![c0]).is_ok());
    }

    #[test]
    fn candidate_json_schema() {
        let c = ReformulationCandidate::new("who made it", "sinnock", 3, 42).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(
            json,
            r#"{"rewrite":"who made it","pseudo_response":"sinnock","candidate_index":3,"generation_seed":42}"#
        );
        let back: ReformulationCandidate = serde_json::from_str(&json).unwrap();
        assert_eq!(back.standalone_query(), "who made it sinnock");
        assert_eq!(back, c);
    }

    #[test]
    fn gold_grade_must_be_in_gold_set() {
        let r = SessionRef::new("s", 1);
        let gold = BTreeSet::from(["p1".to_string()]);
        let grades = BTreeMap::from([("p1".to_string(), 1), ("p2".to_string(), 2)]);
        assert!(GoldLabel::new(r.clone(), gold, grades.clone()).is_err());
        let g = GoldLabel::from_grades(r, &grades, 2).unwrap();
        assert_eq!(g.gold_passage_ids().len(), 1);
        assert!(g.is_gold("p2"));
    }

    #[test]
    fn qid_format() {
        assert_eq!(SessionRef::new("topic_7", 3).qid(), "topic_7_3");
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 ,.?]{0,30}"
    }

    proptest! {
        #[test]
        fn concat_length(q in "[a-z]{1,10}( [a-z]{1,10}){0,4}", r in "[a-zA-Z .]{1,40}") {
            let s = concat_standalone(&q, &r).unwrap();
            prop_assert_eq!(s.len(), q.len() + 1 + r.len());
        }

        #[test]
        fn session_round_trips(id in "[a-z0-9_]{1,8}",
                               turns in prop::collection::vec(("[a-z]{1,8}( [a-z]{1,5}){0,3}", arb_text()), 0..5),
                               cur in "[a-z]{1,8}( [a-z]{1,5}){0,3}") {
            let history: Vec<Turn> = turns.into_iter().map(|(q, r)| Turn::new(q, r).unwrap()).collect();
            let k = history.len() as u32 + 1;
            let s = ConversationSession::new(id, k, history, cur).unwrap();
            let json = serde_json::to_string(&s).unwrap();
            let back: ConversationSession = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
