//! End-to-end runs: generate, assess, train, select, evaluate.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assessment::{assess_pool, AssessConfig, AssessmentError, PoolAssessment};
use crate::config::{Config, ConfigError, Retriever};
use crate::eval::{evaluate_run, EvalConfig, EvalError, MetricReport, Qrels, TrecRun};
use crate::generation::{
    generate_pool, ClientError, DropRecord, FixtureClient, GenerationClient, GenerationConfig, GenerationError,
    HttpClient, PromptTemplate,
};
use crate::inference::{select, Choice, InferenceError, SelectionRecord, SelectionStrategy, StrategyKind};
use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};
use crate::retrieval::{
    read_dense_file, read_passages, Bm25Params, DenseIndex, EmbedError, Passage, QueryEmbedder, RetrievalError,
    RetrievalResult, SparseIndex,
};
use crate::reward::{
    save_model, train, ModelConfig, RewardError, RewardModel, TrainingConfig, TrainingExample, TrainingReport,
};
use crate::types::{CandidatePool, ConversationSession, CoreError, GoldLabel, SessionRef};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}: no qrels for this turn")]
    MissingQrels(SessionRef),
    #[error("{0}: no candidate pool")]
    MissingPool(SessionRef),
    #[error("{0}: no session")]
    MissingSession(SessionRef),
    #[error("{0}: session appears twice")]
    DuplicateSession(SessionRef),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Both retrieval systems over one passage collection.
pub struct Corpus {
    pub sparse: SparseIndex,
    pub dense: DenseIndex,
    pub embedder: Box<dyn QueryEmbedder>,
}

/// Embeds every passage in parallel; ids keep input order.
pub fn embed_passages(passages: &[Passage], embedder: &dyn QueryEmbedder) -> Result<DenseIndex> {
    let vectors = passages.par_iter().map(|p| embedder.embed(&p.text)).collect::<Result<Vec<_>, _>>()?;
    let index =
        DenseIndex::from_vectors(embedder.dimension(), passages.iter().map(|p| p.passage_id.as_str()).zip(vectors))?;
    Ok(index)
}

impl Corpus {
    pub fn build(passages: &[Passage], bm25: Bm25Params, embedder: Box<dyn QueryEmbedder>) -> Result<Self> {
        let sparse = SparseIndex::build(passages.iter().cloned(), bm25)?;
        let dense = embed_passages(passages, embedder.as_ref())?;
        Ok(Self { sparse, dense, embedder })
    }

    pub fn with_dense(
        passages: &[Passage],
        bm25: Bm25Params,
        dense: DenseIndex,
        embedder: Box<dyn QueryEmbedder>,
    ) -> Result<Self> {
        if dense.dimension() != embedder.dimension() {
            return Err(RetrievalError::Dimension { expected: dense.dimension(), actual: embedder.dimension() }.into());
        }
        let sparse = SparseIndex::build(passages.iter().cloned(), bm25)?;
        Ok(Self { sparse, dense, embedder })
    }

    /// Loads passages and vectors named by the config.
    pub fn from_config(config: &Config) -> Result<Self> {
        let passages = read_passages(Config::require("data.passages", &config.data.passages)?)?;
        let embedder = config.retrieval.embedder.build()?;
        match &config.data.dense_vectors {
            Some(path) => Self::with_dense(&passages, config.retrieval.bm25, read_dense_file(path)?, embedder),
            None => Self::build(&passages, config.retrieval.bm25, embedder),
        }
    }

    pub fn search(&self, retriever: Retriever, query: &str, depth: usize) -> Result<RetrievalResult> {
        Ok(match retriever {
            Retriever::Sparse => self.sparse.search(query, depth)?,
            Retriever::Dense => self.dense.search(&self.embedder.embed(query)?, depth)?,
        })
    }
}

/// Gold labels for `sessions`; every session must have at least one
/// passage at or above the threshold.
pub fn gold_labels(
    qrels: &Qrels,
    sessions: impl IntoIterator<Item = SessionRef>,
    rel_threshold: u32,
) -> Result<BTreeMap<SessionRef, GoldLabel>> {
    sessions
        .into_iter()
        .map(|sref| {
            let grades = qrels.get(&sref.qid()).ok_or_else(|| PipelineError::MissingQrels(sref.clone()))?;
            let label = GoldLabel::from_grades(sref.clone(), grades, rel_threshold)
                .map_err(|_| PipelineError::MissingQrels(sref.clone()))?;
            Ok((sref, label))
        })
        .collect()
}

/// A session with its candidates and their retrieval labels.
#[derive(Debug, Clone)]
pub struct LabelledPool {
    pub session: ConversationSession,
    pub pool: CandidatePool,
    pub assessment: PoolAssessment,
}

/// Pairs sessions with their pools and assesses each pool. Output follows
/// session order.
pub fn label_pools(
    corpus: &Corpus,
    sessions: &[ConversationSession],
    pools: &[CandidatePool],
    gold: &BTreeMap<SessionRef, GoldLabel>,
    config: AssessConfig,
) -> Result<Vec<LabelledPool>> {
    let by_ref: HashMap<SessionRef, &CandidatePool> = pools.iter().map(|p| (p.session_ref(), p)).collect();
    sessions
        .iter()
        .map(|s| {
            let sref = s.session_ref();
            let pool = *by_ref.get(&sref).ok_or_else(|| PipelineError::MissingPool(sref.clone()))?;
            let assessment =
                assess_pool(pool, &corpus.sparse, &corpus.dense, corpus.embedder.as_ref(), gold.get(&sref), config)?;
            Ok(LabelledPool { session: s.clone(), pool: pool.clone(), assessment })
        })
        .collect()
}

/// Matches stored assessments with their pools and sessions, in assessment
/// order.
pub fn join_labelled(
    sessions: &[ConversationSession],
    pools: &[CandidatePool],
    assessments: Vec<PoolAssessment>,
) -> Result<Vec<LabelledPool>> {
    let sessions: HashMap<SessionRef, &ConversationSession> = sessions.iter().map(|s| (s.session_ref(), s)).collect();
    let pools: HashMap<SessionRef, &CandidatePool> = pools.iter().map(|p| (p.session_ref(), p)).collect();
    assessments
        .into_iter()
        .map(|assessment| {
            let sref = assessment.session_ref();
            let pool = *pools.get(&sref).ok_or_else(|| PipelineError::MissingPool(sref.clone()))?;
            let session = *sessions.get(&sref).ok_or_else(|| PipelineError::MissingSession(sref.clone()))?;
            assessment.validate_against(pool)?;
            Ok(LabelledPool { session: session.clone(), pool: pool.clone(), assessment })
        })
        .collect()
}

pub fn train_on(
    items: &[LabelledPool],
    model: &ModelConfig,
    training: &TrainingConfig,
) -> Result<(RewardModel, TrainingReport)> {
    let examples: Vec<TrainingExample<'_>> = items
        .iter()
        .map(|it| TrainingExample { session: &it.session, pool: &it.pool, assessment: &it.assessment })
        .collect();
    Ok(train(&examples, model, training)?)
}

/// Retrieval results for every candidate of every pool under one retriever.
pub struct CandidateRetrievals {
    results: HashMap<SessionRef, Vec<RetrievalResult>>,
}

impl CandidateRetrievals {
    pub fn compute(
        corpus: &Corpus,
        items: &[LabelledPool],
        retriever: Retriever,
        depth: usize,
        max_query_tokens: usize,
    ) -> Result<Self> {
        let results = items
            .par_iter()
            .map(|it| {
                let per_candidate = it
                    .pool
                    .candidates()
                    .iter()
                    .map(|c| corpus.search(retriever, &c.retrieval_query(max_query_tokens), depth))
                    .collect::<Result<Vec<_>>>()?;
                Ok((it.pool.session_ref(), per_candidate))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(Self { results })
    }

    pub fn get(&self, session: &SessionRef, candidate_index: usize) -> Option<&RetrievalResult> {
        self.results.get(session)?.get(candidate_index)
    }
}

/// Everything a strategy may need besides the pool itself.
#[derive(Clone, Copy)]
pub struct StrategyInputs<'a> {
    pub model: Option<&'a RewardModel>,
    pub random_seed: u64,
}

pub struct StrategyRun {
    pub run: TrecRun,
    pub selections: Vec<SelectionRecord>,
}

/// Selects one query per pool and retrieves with it. Budgets larger than a
/// pool are clamped to the pool size.
pub fn run_strategy(
    corpus: &Corpus,
    items: &[LabelledPool],
    retrievals: &CandidateRetrievals,
    kind: StrategyKind,
    inputs: StrategyInputs<'_>,
    budget: usize,
    depth: usize,
) -> Result<StrategyRun> {
    let rows = items
        .par_iter()
        .map(|it| {
            let strategy = match kind {
                StrategyKind::RewardArgmax => SelectionStrategy::RewardArgmax(inputs.model),
                StrategyKind::Oracle => SelectionStrategy::Oracle(&it.assessment),
                StrategyKind::Random => SelectionStrategy::Random { seed: inputs.random_seed },
                StrategyKind::MeanAggregation => SelectionStrategy::MeanAggregation(corpus.embedder.as_ref()),
                StrategyKind::First => SelectionStrategy::First,
            };
            let sref = it.pool.session_ref();
            let result = select(&it.pool, &it.session, strategy, budget.min(it.pool.len()))?;
            let retrieved = match &result.choice {
                Choice::Index(i) => {
                    retrievals.get(&sref, *i).cloned().ok_or_else(|| PipelineError::MissingPool(sref.clone()))?
                }
                Choice::Synthetic(v) => corpus.dense.search(v, depth)?,
            };
            Ok((SelectionRecord::new(sref.clone(), kind, &result), sref.qid(), retrieved))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut run = TrecRun::new(kind.name());
    let mut selections = Vec::with_capacity(rows.len());
    for (record, qid, result) in rows {
        run.insert_result(qid, &result)?;
        selections.push(record);
    }
    Ok(StrategyRun { run, selections })
}

/// A held-out set ready for selection and scoring.
pub struct Evaluation<'a> {
    pub corpus: &'a Corpus,
    pub items: &'a [LabelledPool],
    pub retrievals: &'a CandidateRetrievals,
    pub qrels: &'a Qrels,
    pub metrics: &'a EvalConfig,
    pub depth: usize,
}

impl Evaluation<'_> {
    pub fn run(&self, kind: StrategyKind, inputs: StrategyInputs<'_>, budget: usize) -> Result<StrategyRun> {
        run_strategy(self.corpus, self.items, self.retrievals, kind, inputs, budget, self.depth)
    }

    pub fn score(&self, run: &TrecRun, kind: StrategyKind, budget: usize) -> Result<MetricReport> {
        Ok(evaluate_run(run, self.qrels, self.metrics)?.with_provenance(kind.name(), budget))
    }

    /// Mean metrics of one strategy at each budget.
    pub fn sweep(
        &self,
        kind: StrategyKind,
        inputs: StrategyInputs<'_>,
        budgets: &[usize],
    ) -> Result<Vec<MetricReport>> {
        budgets.iter().map(|&n| self.score(&self.run(kind, inputs, n)?.run, kind, n)).collect()
    }
}

/// Generates a pool per session, in session order.
pub fn generate_pools(
    client: &dyn GenerationClient,
    template: &PromptTemplate,
    sessions: &[ConversationSession],
    config: &GenerationConfig,
) -> Result<(Vec<CandidatePool>, Vec<DropRecord>)> {
    let mut pools = Vec::with_capacity(sessions.len());
    let mut drops = Vec::new();
    for s in sessions {
        let generated = generate_pool(client, template, s, config)?;
        if generated.pool.len() < generated.requested {
            log::warn!("{}: kept {} of {} candidates", s.session_ref(), generated.pool.len(), generated.requested);
        }
        pools.push(generated.pool);
        drops.extend(generated.drops);
    }
    Ok((pools, drops))
}

fn check_unique(sessions: &[ConversationSession]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in sessions {
        if !seen.insert(s.session_ref()) {
            return Err(PipelineError::DuplicateSession(s.session_ref()));
        }
    }
    Ok(())
}

/// Summary written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub train_sessions: usize,
    pub test_sessions: usize,
    pub dropped_outputs: usize,
    pub training: TrainingReport,
    pub reports: Vec<MetricReport>,
    pub sweep: Vec<MetricReport>,
}

pub fn build_client(config: &Config) -> Result<Box<dyn GenerationClient>> {
    Ok(match &config.data.fixtures {
        Some(path) => Box::new(FixtureClient::load(path)?),
        None => Box::new(HttpClient::from_env(
            config.generation.endpoint.as_deref(),
            config.generation.model.as_deref(),
            Duration::from_secs(config.generation.params.timeout_secs),
        )?),
    })
}

pub fn load_template(config: &Config) -> Result<PromptTemplate> {
    Ok(match &config.data.prompt_template {
        Some(path) => PromptTemplate::load(path)?,
        None => PromptTemplate::default(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| PipelineError::Io { path: path.into(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(JsonlError::from)?;
    text.push('\n');
    write_text(path, &text)
}

/// Runs every stage and writes its artifacts under `config.output_dir`:
/// `candidates.jsonl`, `drops.jsonl`, `assessments.jsonl`, `model.bin`,
/// `training.json`, `selections.jsonl`, `runs/<strategy>.trec`,
/// `sweep.tsv` and `report.json`.
pub fn run_pipeline(config: &Config, client: &dyn GenerationClient) -> Result<PipelineReport> {
    config.validate()?;
    let out = &config.output_dir;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|source| PipelineError::Io { path: runs_dir.clone(), source })?;

    let train_sessions: Vec<ConversationSession> =
        read_jsonl(Config::require("data.train_sessions", &config.data.train_sessions)?)?;
    let test_sessions: Vec<ConversationSession> =
        read_jsonl(Config::require("data.test_sessions", &config.data.test_sessions)?)?;
    let all: Vec<ConversationSession> = train_sessions.iter().chain(&test_sessions).cloned().collect();
    check_unique(&all)?;
    let qrels = Qrels::read(Config::require("data.qrels", &config.data.qrels)?)?;
    let corpus = Corpus::from_config(config)?;
    let template = load_template(config)?;

    log::info!("generating {} pools", all.len());
    let (pools, drops) = generate_pools(client, &template, &all, &config.generation.params)?;
    write_jsonl(&out.join("candidates.jsonl"), &pools)?;
    write_jsonl(&out.join("drops.jsonl"), &drops)?;

    let gold =
        gold_labels(&qrels, all.iter().map(ConversationSession::session_ref), config.eval.metrics.rel_threshold)?;
    let assess = AssessConfig { depth: config.retrieval.depth, max_query_tokens: config.retrieval.max_query_tokens };
    let (train_pools, test_pools) = pools.split_at(train_sessions.len());
    log::info!("assessing pools");
    let train_items = label_pools(&corpus, &train_sessions, train_pools, &gold, assess)?;
    let test_items = label_pools(&corpus, &test_sessions, test_pools, &gold, assess)?;
    let assessments: Vec<&PoolAssessment> = train_items.iter().chain(&test_items).map(|it| &it.assessment).collect();
    write_jsonl(&out.join("assessments.jsonl"), &assessments)?;

    log::info!("training on {} pools", train_items.len());
    let (model, training) = train_on(&train_items, &config.training.model, &config.training.params)?;
    save_model(&model, &out.join("model.bin"))?;
    write_json(&out.join("training.json"), &training)?;

    let depth = config.retrieval.depth;
    let retrievals = CandidateRetrievals::compute(
        &corpus,
        &test_items,
        config.eval.retriever,
        depth,
        config.retrieval.max_query_tokens,
    )?;
    let inputs = StrategyInputs { model: Some(&model), random_seed: config.inference.random_seed };
    let evaluation = Evaluation {
        corpus: &corpus,
        items: &test_items,
        retrievals: &retrievals,
        qrels: &qrels,
        metrics: &config.eval.metrics,
        depth,
    };
    let mut reports = Vec::new();
    let mut sweep = Vec::new();
    let mut selections = Vec::new();
    for &kind in &config.inference.strategies {
        log::info!("selecting with {kind}");
        let budget = config.inference.budget;
        let result = evaluation.run(kind, inputs, budget)?;
        result.run.write(&runs_dir.join(format!("{}.trec", kind.name())))?;
        reports.push(evaluation.score(&result.run, kind, budget)?);
        selections.extend(result.selections);
        sweep.extend(evaluation.sweep(kind, inputs, &config.inference.sweep_budgets)?);
    }
    write_jsonl(&out.join("selections.jsonl"), &selections)?;

    let mut tsv = String::from("strategy\tbudget\tmrr\tndcg\trecall\n");
    for r in &sweep {
        tsv.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
            r.strategy.as_deref().unwrap_or(""),
            r.budget.unwrap_or(0),
            r.mrr,
            r.ndcg,
            r.recall
        ));
    }
    write_text(&out.join("sweep.tsv"), &tsv)?;

    for r in &mut sweep {
        r.per_query.clear();
    }
    let report = PipelineReport {
        train_sessions: train_sessions.len(),
        test_sessions: test_sessions.len(),
        dropped_outputs: drops.len(),
        training,
        reports,
        sweep,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
