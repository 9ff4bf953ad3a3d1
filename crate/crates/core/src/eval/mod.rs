//! TREC run and qrels IO plus MRR, NDCG@k and Recall@k.

mod metrics;
mod trec;

use std::path::PathBuf;

use thiserror::Error;

pub use metrics::{evaluate_run, mrr, ndcg_at_k, recall_at_k, EvalConfig, MetricReport, QueryMetrics};
pub use trec::{Qrels, RunEntry, TrecRun};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("run query {qid}: {message}")]
    InvalidRun { qid: String, message: String },
    #[error("run and qrels share no query ids")]
    NoSharedQueries,
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
