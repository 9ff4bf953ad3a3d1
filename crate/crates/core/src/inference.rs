//! Test-time selection over a candidate pool.
//!
//! The budgeted sub-pool for budget `N` is the first `N` candidates by
//! candidate index. Score ties always go to the lowest index.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assessment::{AssessmentError, PoolAssessment};
use crate::retrieval::{feature_hash, EmbedError, QueryEmbedder};
use crate::reward::{RewardError, RewardModel};
use crate::types::{CandidatePool, ConversationSession, SessionRef, MAX_STANDALONE_TOKENS};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("{session}: budget {budget} outside 1..={pool_size}")]
    Budget { session: SessionRef, budget: usize, pool_size: usize },
    #[error("budgets must be ascending, got {0:?}")]
    BudgetOrder(Vec<usize>),
    #[error("strategy {0} needs {1}")]
    Strategy(StrategyKind, &'static str),
    #[error("session {session} does not match pool {pool}")]
    SessionMismatch { session: SessionRef, pool: SessionRef },
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    RewardArgmax,
    Oracle,
    Random,
    MeanAggregation,
    First,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::RewardArgmax,
        StrategyKind::Oracle,
        StrategyKind::Random,
        StrategyKind::MeanAggregation,
        StrategyKind::First,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::RewardArgmax => "reward_argmax",
            StrategyKind::Oracle => "oracle",
            StrategyKind::Random => "random",
            StrategyKind::MeanAggregation => "mean_aggregation",
            StrategyKind::First => "first",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        StrategyKind::ALL.into_iter().find(|k| k.name() == norm).ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// A selection rule together with the inputs it needs.
#[derive(Clone, Copy)]
pub enum SelectionStrategy<'a> {
    RewardArgmax(Option<&'a RewardModel>),
    Oracle(&'a PoolAssessment),
    Random { seed: u64 },
    MeanAggregation(&'a dyn QueryEmbedder),
    First,
}

impl SelectionStrategy<'_> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            SelectionStrategy::RewardArgmax(_) => StrategyKind::RewardArgmax,
            SelectionStrategy::Oracle(_) => StrategyKind::Oracle,
            SelectionStrategy::Random { .. } => StrategyKind::Random,
            SelectionStrategy::MeanAggregation(_) => StrategyKind::MeanAggregation,
            SelectionStrategy::First => StrategyKind::First,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Choice {
    Index(usize),
    /// Mean of the sub-pool's dense query vectors.
    Synthetic(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub choice: Choice,
    /// Per-candidate scores over the sub-pool, empty when the strategy has none.
    pub scores: Vec<f64>,
    pub budget: usize,
}

impl SelectionResult {
    pub fn chosen_index(&self) -> Option<usize> {
        match self.choice {
            Choice::Index(i) => Some(i),
            Choice::Synthetic(_) => None,
        }
    }
}

/// One line of the selection JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub session_id: String,
    pub turn_index: u32,
    pub strategy: StrategyKind,
    pub budget: usize,
    pub chosen_index: Option<usize>,
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_vector: Option<Vec<f32>>,
}

impl SelectionRecord {
    pub fn new(session: SessionRef, strategy: StrategyKind, result: &SelectionResult) -> Self {
        let synthetic_vector = match &result.choice {
            Choice::Synthetic(v) => Some(v.clone()),
            Choice::Index(_) => None,
        };
        Self {
            session_id: session.session_id,
            turn_index: session.turn_index,
            strategy,
            budget: result.budget,
            chosen_index: result.chosen_index(),
            scores: result.scores.clone(),
            synthetic_vector,
        }
    }

    pub fn session_ref(&self) -> SessionRef {
        SessionRef::new(self.session_id.clone(), self.turn_index)
    }
}

/// Index of the largest score; the first wins ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Uniform draw in `0..budget`, keyed by the seed and the session.
pub fn random_index(seed: u64, session: &SessionRef, budget: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(feature_hash(&session.qid(), seed));
    rng.gen_range(0..budget)
}

pub fn select(
    pool: &CandidatePool,
    session: &ConversationSession,
    strategy: SelectionStrategy<'_>,
    budget: usize,
) -> Result<SelectionResult, InferenceError> {
    let sref = pool.session_ref();
    if session.session_ref() != sref {
        return Err(InferenceError::SessionMismatch { session: session.session_ref(), pool: sref });
    }
    if budget == 0 || budget > pool.len() {
        return Err(InferenceError::Budget { session: sref, budget, pool_size: pool.len() });
    }
    let sub = &pool.candidates()[..budget];
    let indexed = |scores: Vec<f64>| {
        let i = argmax(&scores).expect("budget >= 1");
        SelectionResult { choice: Choice::Index(i), scores, budget }
    };
    Ok(match strategy {
        SelectionStrategy::RewardArgmax(model) => {
            let model = model.ok_or(InferenceError::Strategy(StrategyKind::RewardArgmax, "a loaded reward model"))?;
            let scores = sub.iter().map(|c| model.score_candidate(c, session)).collect::<Result<Vec<_>, _>>()?;
            indexed(scores)
        }
        SelectionStrategy::Oracle(assessment) => {
            assessment.validate_against(pool)?;
            indexed(assessment.records[..budget].iter().map(|r| r.fusion_score).collect())
        }
        SelectionStrategy::Random { seed } => {
            SelectionResult { choice: Choice::Index(random_index(seed, &sref, budget)), scores: Vec::new(), budget }
        }
        SelectionStrategy::MeanAggregation(embedder) => {
            let mut acc = vec![0.0f64; embedder.dimension()];
            for c in sub {
                let v = embedder.embed(&c.retrieval_query(MAX_STANDALONE_TOKENS))?;
                acc.iter_mut().zip(&v).for_each(|(a, x)| *a += f64::from(*x));
            }
            let mean = acc.into_iter().map(|a| (a / budget as f64) as f32).collect();
            SelectionResult { choice: Choice::Synthetic(mean), scores: Vec::new(), budget }
        }
        SelectionStrategy::First => SelectionResult { choice: Choice::Index(0), scores: Vec::new(), budget },
    })
}

/// One selection per budget; budgets must be ascending.
pub fn sweep_budget(
    pool: &CandidatePool,
    session: &ConversationSession,
    strategy: SelectionStrategy<'_>,
    budgets: &[usize],
) -> Result<Vec<SelectionResult>, InferenceError> {
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(InferenceError::BudgetOrder(budgets.to_vec()));
    }
    budgets.iter().map(|&n| select(pool, session, strategy, n)).collect()
}
