//! Sparse (BM25) and dense (exact inner-product) retrieval, plus the gold
//! passage rank lookup used to label candidates.

mod dense;
mod embed;
mod sparse;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::types::GoldLabel;

pub use dense::{read_dense_file, write_dense_file, DenseIndex};
pub(crate) use embed::feature_hash;
pub use embed::{EmbedError, EmbedderSpec, HashingEmbedder, LookupEmbedder, QueryEmbedder};
pub use sparse::{Bm25Params, SparseIndex};

/// Default retrieval depth for rank lookup and evaluation runs.
pub const DEFAULT_DEPTH: usize = 100;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("duplicate passage id {0:?}")]
    DuplicatePassage(String),
    #[error("passage {0:?} not found in index")]
    PassageNotFound(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("dimension mismatch: index has dimension {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("vector for {0:?} contains a non-finite component")]
    NonFinite(String),
    #[error("invalid BM25 parameters: {0}")]
    Params(String),
    #[error("depth must be positive")]
    ZeroDepth,
    #[error("dense vector file {path}: {message}")]
    DenseFormat { path: PathBuf, message: String },
    #[error("passage file {path}:{line}: {message}")]
    PassageFormat { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub text: String,
}

impl Passage {
    pub fn new(passage_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { passage_id: passage_id.into(), text: text.into() }
    }
}

/// Reads a passage collection. Files ending in `.tsv` hold `id<TAB>text` lines;
/// anything else is parsed as JSONL `{"passage_id","text"}`.
pub fn read_passages(path: &Path) -> Result<Vec<Passage>, RetrievalError> {
    let is_tsv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
    if !is_tsv {
        return Ok(jsonl::read_jsonl(path)?);
    }
    let content = fs::read_to_string(path).map_err(|source| RetrievalError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| RetrievalError::PassageFormat {
            path: path.into(),
            line: i + 1,
            message: "expected `passage_id<TAB>text`".into(),
        })?;
        out.push(Passage::new(id, text));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage_id: String,
    pub score: f64,
}

/// Ranked retrieval output: scores non-increasing, ties by ascending passage id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub entries: Vec<ScoredPassage>,
    pub depth: usize,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Sorts `(score, id)` pairs by descending score then ascending id and keeps
/// the first `depth`.
pub(crate) fn top_k(mut scored: Vec<(f64, &str)>, depth: usize) -> RetrievalResult {
    let cmp = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
    if scored.len() > depth {
        scored.select_nth_unstable_by(depth - 1, cmp);
        scored.truncate(depth);
    }
    scored.sort_unstable_by(cmp);
    RetrievalResult {
        entries: scored.into_iter().map(|(score, id)| ScoredPassage { passage_id: id.to_owned(), score }).collect(),
        depth,
    }
}

/// 1-based rank of a gold passage in a result list, or `NotFound`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Option<u32>", into = "Option<u32>")]
pub enum Rank {
    At(u32),
    NotFound,
}

impl Rank {
    /// Reciprocal rank, 0 for `NotFound`. `None` for the invalid rank 0.
    pub fn reciprocal(self) -> Option<f64> {
        match self {
            Rank::At(0) => None,
            Rank::At(r) => Some(1.0 / f64::from(r)),
            Rank::NotFound => Some(0.0),
        }
    }
}

impl TryFrom<Option<u32>> for Rank {
    type Error = String;
    fn try_from(v: Option<u32>) -> Result<Self, Self::Error> {
        match v {
            Some(0) => Err("rank must be >= 1".into()),
            Some(r) => Ok(Rank::At(r)),
            None => Ok(Rank::NotFound),
        }
    }
}

impl From<Rank> for Option<u32> {
    fn from(r: Rank) -> Self {
        match r {
            Rank::At(r) => Some(r),
            Rank::NotFound => None,
        }
    }
}

/// Rank of the first result entry that is a gold passage.
pub fn gold_rank(result: &RetrievalResult, gold: &GoldLabel) -> Rank {
    result.ids().position(|id| gold.is_gold(id)).map_or(Rank::NotFound, |p| Rank::At(p as u32 + 1))
}

pub(crate) fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<(), RetrievalError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(RetrievalError::DuplicatePassage(id.to_owned()));
        }
    }
    Ok(())
}
