//! Hashed bag-of-n-grams encoding of a (candidate, session) pair.
//!
//! The feature vector has three blocks:
//!
//! | offset       | size | content                                           |
//! |--------------|------|---------------------------------------------------|
//! | `0`          | `F`  | signed hashed n-grams of the candidate query `S`  |
//! | `F`          | `F`  | signed hashed n-grams of the flattened session    |
//! | `2F`         | `3`  | `ln(1+shared)`, Jaccard, `ln(1+len ratio)`        |
//!
//! The two hashed blocks are L2-normalized independently and scaled by their
//! field weight. The session is flattened as `q1 [SEP] r1 [SEP] … [SEP] qk`
//! over the most recent `max_history_turns` turns.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::retrieval::feature_hash;
use crate::text::{analyze, ngrams};
use crate::types::{ConversationSession, ReformulationCandidate, MAX_STANDALONE_TOKENS};

/// Reserved token placed between flattened session segments.
pub const SEP_TOKEN: &str = "[SEP]";

const CANDIDATE_SALT: u64 = 0x5a17_0001;
const SESSION_SALT: u64 = 0x5a17_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub ngram_orders: Vec<usize>,
    /// Width `F` of each hashed block.
    pub block_dim: usize,
    pub candidate_weight: f64,
    pub session_weight: f64,
    pub interaction_weight: f64,
    /// When false the session is reduced to the current query alone.
    pub use_history: bool,
    pub max_history_turns: usize,
    pub max_candidate_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            ngram_orders: vec![1, 2],
            block_dim: 4096,
            candidate_weight: 1.0,
            session_weight: 1.0,
            interaction_weight: 1.0,
            use_history: true,
            max_history_turns: 6,
            max_candidate_tokens: MAX_STANDALONE_TOKENS,
        }
    }
}

impl EncoderConfig {
    pub const INTERACTION_FEATURES: usize = 3;

    pub fn dimension(&self) -> usize {
        2 * self.block_dim + Self::INTERACTION_FEATURES
    }

    pub fn shared_count_index(&self) -> usize {
        2 * self.block_dim
    }

    pub fn jaccard_index(&self) -> usize {
        2 * self.block_dim + 1
    }

    pub fn length_ratio_index(&self) -> usize {
        2 * self.block_dim + 2
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.block_dim == 0 {
            return Err("block_dim must be positive".into());
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err("ngram_orders must be non-empty positive integers".into());
        }
        let weights = [self.candidate_weight, self.session_weight, self.interaction_weight];
        if weights.iter().any(|w| !w.is_finite()) {
            return Err("field weights must be finite".into());
        }
        Ok(())
    }
}

/// Sparse feature vector of fixed dimension. Indices are strictly increasing
/// and every stored value is finite and non-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl EncodedPair {
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) =
            dense.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i as u32, *v)).unzip();
        Self { dim: dense.len(), indices, values }
    }

    fn from_map(dim: usize, map: BTreeMap<u32, f64>) -> Self {
        let (indices, values) = map.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        Self { dim, indices, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    pub fn get(&self, index: usize) -> f64 {
        self.indices.binary_search(&(index as u32)).map_or(0.0, |p| self.values[p])
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (i, x) in self.iter() {
            v[i] = x;
        }
        v
    }
}

fn session_segments(session: &ConversationSession, config: &EncoderConfig) -> Vec<Vec<String>> {
    let mut segments = Vec::new();
    if config.use_history {
        let history = session.history();
        let start = history.len().saturating_sub(config.max_history_turns);
        for turn in &history[start..] {
            segments.push(analyze(turn.query()));
            if !turn.response().trim().is_empty() {
                segments.push(analyze(turn.response()));
            }
        }
    }
    segments.push(analyze(session.current_query()));
    segments
}

fn hashed_block(
    tokens: &[String],
    orders: &[usize],
    salt: u64,
    dim: usize,
    offset: usize,
    weight: f64,
    out: &mut BTreeMap<u32, f64>,
) {
    let mut block: BTreeMap<u32, f64> = BTreeMap::new();
    for &order in orders {
        for gram in ngrams(tokens, order) {
            let h = feature_hash(&gram, salt.wrapping_add(order as u64));
            let slot = (offset + (h % dim as u64) as usize) as u32;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            *block.entry(slot).or_default() += sign;
        }
    }
    let norm = block.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (slot, v) in block {
            out.insert(slot, weight * v / norm);
        }
    }
}

/// Encodes a candidate against its conversation session.
pub fn encode(
    candidate: &ReformulationCandidate,
    session: &ConversationSession,
    config: &EncoderConfig,
) -> EncodedPair {
    let cand_tokens = analyze(&candidate.retrieval_query(config.max_candidate_tokens));
    let segments = session_segments(session, config);

    let mut session_tokens: Vec<String> = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        if i > 0 {
            session_tokens.push(SEP_TOKEN.to_owned());
        }
        session_tokens.extend(seg.iter().cloned());
    }

    let f = config.block_dim;
    let mut features = BTreeMap::new();
    hashed_block(&cand_tokens, &config.ngram_orders, CANDIDATE_SALT, f, 0, config.candidate_weight, &mut features);
    hashed_block(&session_tokens, &config.ngram_orders, SESSION_SALT, f, f, config.session_weight, &mut features);

    let cand_set: HashSet<&str> = cand_tokens.iter().map(String::as_str).collect();
    let sess_set: HashSet<&str> = segments.iter().flatten().map(String::as_str).collect();
    let shared = cand_set.intersection(&sess_set).count();
    let union = cand_set.union(&sess_set).count();
    let jaccard = if union == 0 { 0.0 } else { shared as f64 / union as f64 };
    let session_len: usize = segments.iter().map(Vec::len).sum();
    let ratio = cand_tokens.len() as f64 / session_len.max(1) as f64;

    let w = config.interaction_weight;
    features.insert(config.shared_count_index() as u32, w * (shared as f64).ln_1p());
    features.insert(config.jaccard_index() as u32, w * jaccard);
    features.insert(config.length_ratio_index() as u32, w * ratio.ln_1p());

    EncodedPair::from_map(config.dimension(), features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Turn;

    fn session(history: &[(&str, &str)], current: &str) -> ConversationSession {
        let turns = history.iter().map(|(q, r)| Turn::new(*q, *r).unwrap()).collect::<Vec<_>>();
        ConversationSession::new("s", turns.len() as u32 + 1, turns, current).unwrap()
    }

    fn cand(rewrite: &str, resp: &str) -> ReformulationCandidate {
        ReformulationCandidate::new(rewrite, resp, 0, 0).unwrap()
    }

    fn small() -> EncoderConfig {
        EncoderConfig { block_dim: 64, ..EncoderConfig::default() }
    }

    #[test]
    fn deterministic() {
        let s = session(&[("tell me about the dime", "it is a coin")], "who designed it?");
        let c = cand("who designed the dime", "john sinnock");
        let cfg = EncoderConfig::default();
        assert_eq!(encode(&c, &s, &cfg), encode(&c, &s, &cfg));
        assert_eq!(encode(&c, &s, &cfg).dim(), 2 * 4096 + 3);
    }

    #[test]
    fn jaccard_zero_and_one() {
        let cfg = small();
        let s = session(&[], "who designed the dime");
        let disjoint = encode(&cand("bison nickel", "buffalo"), &s, &cfg);
        assert_eq!(disjoint.get(cfg.jaccard_index()), 0.0);
        assert_eq!(disjoint.get(cfg.shared_count_index()), 0.0);
        let same = encode(&cand("who designed the dime", ""), &s, &cfg);
        assert_eq!(same.get(cfg.jaccard_index()), 1.0);
        assert_eq!(same.get(cfg.length_ratio_index()), 2f64.ln());
    }

    #[test]
    fn hashed_blocks_are_unit_norm() {
        let cfg = small();
        let s = session(&[("a b c", "d e")], "f g");
        let v = encode(&cand("a b x y", "z"), &s, &cfg).to_dense();
        let n1: f64 = v[..64].iter().map(|x| x * x).sum();
        let n2: f64 = v[64..128].iter().map(|x| x * x).sum();
        assert!((n1 - 1.0).abs() < 1e-12 && (n2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn history_toggle_changes_session_block_only() {
        let with = small();
        let without = EncoderConfig { use_history: false, ..small() };
        let s = session(&[("tell me about zorvak", "zorvak is a city")], "what about its climate");
        let c = cand("what is the climate of zorvak", "");
        let a = encode(&c, &s, &with).to_dense();
        let b = encode(&c, &s, &without).to_dense();
        assert_eq!(a[..64], b[..64]);
        assert_ne!(a[64..128], b[64..128]);
        assert!(a[with.shared_count_index()] > b[without.shared_count_index()]);
    }

    #[test]
    fn history_window_is_bounded() {
        let cfg = EncoderConfig { max_history_turns: 1, ..small() };
        let s1 = session(&[("old topic", "x"), ("new topic", "y")], "q");
        let s2 = session(&[("other thing", "z"), ("new topic", "y")], "q");
        let c = cand("new topic q", "");
        assert_eq!(encode(&c, &s1, &cfg), encode(&c, &s2, &cfg));
    }

    #[test]
    fn dense_round_trip() {
        let v = vec![0.0, 1.5, 0.0, -2.0];
        let p = EncodedPair::from_dense(&v);
        assert_eq!(p.dim(), 4);
        assert_eq!(p.nnz(), 2);
        assert_eq!(p.to_dense(), v);
    }
}
