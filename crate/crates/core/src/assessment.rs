//! Ranking assessment: turns end-to-end retrieval outcomes into rank labels.
//!
//! Each candidate's standalone query is issued to the sparse and the dense
//! system; the fusion score is the sum of the reciprocal ranks of the gold
//! passage, `M = 1/r_s + 1/r_d`, with an unretrieved gold contributing 0.
//! Candidates are then ranked `1..n` by descending `M`, ties by ascending
//! candidate index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{gold_rank, DenseIndex, EmbedError, QueryEmbedder, Rank, RetrievalError, SparseIndex};
use crate::types::{CandidatePool, GoldLabel, SessionRef, MAX_STANDALONE_TOKENS};

#[derive(Debug, Error)]
pub enum AssessmentError {
    #[error("invalid rank 0 (ranks are 1-based)")]
    InvalidRank,
    #[error("{0}: no gold label")]
    MissingGold(SessionRef),
    #[error("gold label is for {gold} but pool is {pool}")]
    GoldMismatch { gold: SessionRef, pool: SessionRef },
    #[error("{session}: candidate {candidate_index}: {source}")]
    Embed {
        session: SessionRef,
        candidate_index: usize,
        #[source]
        source: EmbedError,
    },
    #[error("{session}: candidate {candidate_index}: {source}")]
    Retrieval {
        session: SessionRef,
        candidate_index: usize,
        #[source]
        source: RetrievalError,
    },
    #[error("{0}: assessment records do not match the candidate pool")]
    RecordMismatch(SessionRef),
}

/// Reciprocal-rank fusion without smoothing: `1/r_s + 1/r_d`.
pub fn fusion_score(sparse_rank: Rank, dense_rank: Rank) -> Result<f64, AssessmentError> {
    let s = sparse_rank.reciprocal().ok_or(AssessmentError::InvalidRank)?;
    let d = dense_rank.reciprocal().ok_or(AssessmentError::InvalidRank)?;
    Ok(s + d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub candidate_index: usize,
    pub sparse_rank: Rank,
    pub dense_rank: Rank,
    pub fusion_score: f64,
    pub assigned_rank: u32,
}

/// One line of the assessment JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolAssessment {
    pub session_id: String,
    pub turn_index: u32,
    pub records: Vec<AssessmentRecord>,
}

impl PoolAssessment {
    pub fn session_ref(&self) -> SessionRef {
        SessionRef::new(self.session_id.clone(), self.turn_index)
    }

    /// Checks that the records cover `pool` exactly, in candidate order, with
    /// assigned ranks forming a permutation of `1..=n`.
    pub fn validate_against(&self, pool: &CandidatePool) -> Result<(), AssessmentError> {
        let n = pool.len();
        let bad = || AssessmentError::RecordMismatch(pool.session_ref());
        if self.session_ref() != pool.session_ref() || self.records.len() != n {
            return Err(bad());
        }
        let mut seen = vec![false; n];
        for (i, r) in self.records.iter().enumerate() {
            if r.candidate_index != i {
                return Err(bad());
            }
            let slot = (r.assigned_rank as usize).checked_sub(1).filter(|&s| s < n).ok_or_else(bad)?;
            if std::mem::replace(&mut seen[slot], true) {
                return Err(bad());
            }
        }
        Ok(())
    }

    /// Candidate indices ordered by assigned rank (rank 1 first).
    pub fn rank_order(&self) -> Vec<usize> {
        let mut order: Vec<&AssessmentRecord> = self.records.iter().collect();
        order.sort_by_key(|r| r.assigned_rank);
        order.into_iter().map(|r| r.candidate_index).collect()
    }
}

/// Assigns ranks `1..=n` by descending score; equal scores keep index order.
pub fn assign_ranks(scores: &[f64]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0u32; scores.len()];
    for (pos, idx) in order.into_iter().enumerate() {
        ranks[idx] = pos as u32 + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessConfig {
    pub depth: usize,
    pub max_query_tokens: usize,
}

impl Default for AssessConfig {
    fn default() -> Self {
        Self { depth: crate::retrieval::DEFAULT_DEPTH, max_query_tokens: MAX_STANDALONE_TOKENS }
    }
}

/// Retrieves every candidate through both systems and labels the pool.
///
/// Candidates are processed in parallel; the returned records are always in
/// candidate-index order.
pub fn assess_pool(
    pool: &CandidatePool,
    sparse: &SparseIndex,
    dense: &DenseIndex,
    embedder: &dyn QueryEmbedder,
    gold: Option<&GoldLabel>,
    config: AssessConfig,
) -> Result<PoolAssessment, AssessmentError> {
    let session = pool.session_ref();
    let gold = gold.ok_or_else(|| AssessmentError::MissingGold(session.clone()))?;
    if *gold.session_ref() != session {
        return Err(AssessmentError::GoldMismatch { gold: gold.session_ref().clone(), pool: session });
    }

    let ranks: Vec<(Rank, Rank)> = pool
        .candidates()
        .par_iter()
        .map(|c| {
            let query = c.retrieval_query(config.max_query_tokens);
            let retrieval_err = |source| AssessmentError::Retrieval {
                session: session.clone(),
                candidate_index: c.candidate_index(),
                source,
            };
            let sparse_result = sparse.search(&query, config.depth).map_err(retrieval_err)?;
            let vector = embedder.embed(&query).map_err(|source| AssessmentError::Embed {
                session: session.clone(),
                candidate_index: c.candidate_index(),
                source,
            })?;
            let dense_result = dense.search(&vector, config.depth).map_err(retrieval_err)?;
            Ok((gold_rank(&sparse_result, gold), gold_rank(&dense_result, gold)))
        })
        .collect::<Result<_, AssessmentError>>()?;

    let fusion: Vec<f64> = ranks.iter().map(|&(s, d)| fusion_score(s, d)).collect::<Result<_, _>>()?;
    let assigned = assign_ranks(&fusion);
    let records = ranks
        .into_iter()
        .zip(fusion)
        .zip(assigned)
        .enumerate()
        .map(|(i, (((sparse_rank, dense_rank), fusion_score), assigned_rank))| AssessmentRecord {
            candidate_index: i,
            sparse_rank,
            dense_rank,
            fusion_score,
            assigned_rank,
        })
        .collect();
    Ok(PoolAssessment { session_id: session.session_id, turn_index: session.turn_index, records })
}

/// Candidate index holding assigned rank 1.
pub fn oracle_best(records: &[AssessmentRecord]) -> Option<usize> {
    records.iter().find(|r| r.assigned_rank == 1).map(|r| r.candidate_index)
}
