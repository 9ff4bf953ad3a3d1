//! Command-line front end.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cqr::assessment::{assess_pool, AssessConfig, PoolAssessment};
use cqr::config::{Config, Retriever};
use cqr::eval::{evaluate_run, Qrels, TrecRun};
use cqr::inference::{select, Choice, SelectionRecord, SelectionStrategy, StrategyKind};
use cqr::jsonl::{read_jsonl, write_jsonl};
use cqr::pipeline::{
    build_client, embed_passages, generate_pools, gold_labels, join_labelled, load_template, run_pipeline, train_on,
    Corpus,
};
use cqr::retrieval::{read_passages, write_dense_file, Bm25Params, DenseIndex, SparseIndex};
use cqr::reward::{load_model, save_model};
use cqr::synthetic::{SyntheticBenchmark, SyntheticConfig};
use cqr::{CandidatePool, ConversationSession, SessionRef};

#[derive(Parser)]
#[command(name = "cqr", version, about = "Best-of-N conversational query reformulation")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON config; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Ok(Config::load(p)?),
            None => Ok(Config::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index over a passage file.
    Index {
        #[arg(long)]
        passages: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k1: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Write a dense vector file, either by embedding passages or from JSONL vectors.
    EmbedIngest {
        #[arg(long, conflicts_with = "vectors")]
        passages: Option<PathBuf>,
        /// JSONL lines `{"passage_id": ..., "vector": [...]}`.
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dimension: Option<usize>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Generate a candidate pool per session.
    Generate {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        template: Option<PathBuf>,
        /// Where dropped outputs are logged (default: next to `--out`).
        #[arg(long)]
        drops: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        seed_base: Option<i64>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Label every candidate by sparse and dense retrieval of the gold passage.
    Assess {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        qrels: Option<PathBuf>,
        #[arg(long)]
        passages: Option<PathBuf>,
        #[arg(long)]
        dense_vectors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train the reward model on assessed pools.
    Train {
        #[arg(long)]
        assessments: PathBuf,
        /// Defaults to `candidates.jsonl` beside the assessments file.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Defaults to the config's training sessions.
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        /// Encode only the current query, not the conversation history.
        #[arg(long)]
        no_history: bool,
        /// Per-epoch loss report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Pick one candidate per pool.
    Select {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        strategy: StrategyKind,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        assessments: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also retrieve with each selection and write a TREC run.
        #[arg(long)]
        run_out: Option<PathBuf>,
        #[arg(long)]
        passages: Option<PathBuf>,
        #[arg(long)]
        dense_vectors: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Score a TREC run against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        mrr_cutoff: Option<usize>,
        #[arg(long)]
        rel_threshold: Option<u32>,
        #[arg(long)]
        ndcg_k: Option<usize>,
        #[arg(long)]
        recall_k: Option<usize>,
        /// Per-query table.
        #[arg(long)]
        tsv: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Generate, assess, train, select and evaluate from one config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a seeded synthetic benchmark and a config that runs it.
    Synthesize {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        train_sessions: Option<usize>,
        #[arg(long)]
        entities: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn pick(flag: Option<PathBuf>, from_config: &Option<PathBuf>, field: &'static str) -> Result<PathBuf> {
    match flag {
        Some(p) => Ok(p),
        None => Ok(Config::require(field, from_config)
            .with_context(|| format!("pass --{} or set it in --config", field.rsplit('.').next().unwrap_or(field)))?
            .to_path_buf()),
    }
}

fn load_corpus(config: &mut Config, passages: Option<PathBuf>, dense_vectors: Option<PathBuf>) -> Result<Corpus> {
    config.data.passages = Some(pick(passages, &config.data.passages, "data.passages")?);
    if dense_vectors.is_some() {
        config.data.dense_vectors = dense_vectors;
    }
    Ok(Corpus::from_config(config)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct VectorLine {
    passage_id: String,
    vector: Vec<f32>,
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Index { passages, out, k1, b, config } => {
            let config = config.load()?;
            let passages = read_passages(&pick(passages, &config.data.passages, "data.passages")?)?;
            let defaults = config.retrieval.bm25;
            let params = Bm25Params { k1: k1.unwrap_or(defaults.k1), b: b.unwrap_or(defaults.b) };
            let index = SparseIndex::build(passages, params)?;
            write_file(&out, serde_json::to_vec(&index)?)?;
            eprintln!("indexed {} passages", index.doc_count());
        }
        Command::EmbedIngest { passages, vectors, out, dimension, config } => {
            let mut config = config.load()?;
            let index = match vectors {
                Some(path) => {
                    let lines: Vec<VectorLine> = read_jsonl(&path)?;
                    let dim = match (dimension, lines.first()) {
                        (Some(d), _) => d,
                        (None, Some(l)) => l.vector.len(),
                        (None, None) => bail!("{}: no vectors", path.display()),
                    };
                    DenseIndex::from_vectors(dim, lines.into_iter().map(|l| (l.passage_id, l.vector)))?
                }
                None => {
                    if let Some(d) = dimension {
                        config.retrieval.embedder = cqr::retrieval::EmbedderSpec::Hashing { dimension: d };
                    }
                    let passages = read_passages(&pick(passages, &config.data.passages, "data.passages")?)?;
                    let embedder = config.retrieval.embedder.build()?;
                    embed_passages(&passages, embedder.as_ref())?
                }
            };
            write_dense_file(&out, &index)?;
            eprintln!("wrote {} vectors of dimension {}", index.len(), index.dimension());
        }
        Command::Generate {
            sessions,
            out,
            fixtures,
            template,
            drops,
            n,
            temperature,
            seed_base,
            endpoint,
            model,
            config,
        } => {
            let mut config = config.load()?;
            let params = &mut config.generation.params;
            if let Some(n) = n {
                params.n = n;
            }
            if let Some(t) = temperature {
                params.temperature = t;
            }
            if let Some(s) = seed_base {
                params.request_seed_base = s;
            }
            if fixtures.is_some() {
                config.data.fixtures = fixtures;
            }
            if template.is_some() {
                config.data.prompt_template = template;
            }
            if endpoint.is_some() {
                config.generation.endpoint = endpoint;
            }
            if model.is_some() {
                config.generation.model = model;
            }
            config.validate()?;
            let sessions: Vec<ConversationSession> = read_jsonl(&sessions)?;
            let client = build_client(&config)?;
            let template = load_template(&config)?;
            let (pools, dropped) = generate_pools(client.as_ref(), &template, &sessions, &config.generation.params)?;
            write_jsonl(&out, &pools)?;
            let drops = drops.unwrap_or_else(|| out.with_file_name("drops.jsonl"));
            write_jsonl(&drops, &dropped)?;
            eprintln!("wrote {} pools, {} dropped outputs", pools.len(), dropped.len());
        }
        Command::Assess { candidates, qrels, passages, dense_vectors, out, config } => {
            let mut config = config.load()?;
            let qrels = Qrels::read(&pick(qrels, &config.data.qrels, "data.qrels")?)?;
            let corpus = load_corpus(&mut config, passages, dense_vectors)?;
            let pools: Vec<CandidatePool> = read_jsonl(&candidates)?;
            let gold =
                gold_labels(&qrels, pools.iter().map(CandidatePool::session_ref), config.eval.metrics.rel_threshold)?;
            let assess =
                AssessConfig { depth: config.retrieval.depth, max_query_tokens: config.retrieval.max_query_tokens };
            let assessments = pools
                .iter()
                .map(|p| {
                    assess_pool(
                        p,
                        &corpus.sparse,
                        &corpus.dense,
                        corpus.embedder.as_ref(),
                        gold.get(&p.session_ref()),
                        assess,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            write_jsonl(&out, &assessments)?;
            eprintln!("assessed {} pools", assessments.len());
        }
        Command::Train {
            assessments,
            candidates,
            sessions,
            out,
            seed,
            epochs,
            lr,
            margin,
            no_history,
            report,
            config,
        } => {
            let config = config.load()?;
            let mut training = config.training.params.clone();
            let mut model_config = config.training.model.clone();
            if let Some(s) = seed {
                training.seed = s;
            }
            if let Some(e) = epochs {
                training.epochs = e;
            }
            if let Some(l) = lr {
                training.learning_rate = l;
            }
            if let Some(m) = margin {
                training.margin = m;
            }
            if no_history {
                model_config.encoder.use_history = false;
            }
            let candidates = candidates.unwrap_or_else(|| assessments.with_file_name("candidates.jsonl"));
            let sessions = pick(sessions, &config.data.train_sessions, "data.train_sessions")?;
            let items = join_labelled(
                &read_jsonl::<ConversationSession>(&sessions)?,
                &read_jsonl::<CandidatePool>(&candidates)?,
                read_jsonl::<PoolAssessment>(&assessments)?,
            )?;
            let (model, summary) = train_on(&items, &model_config, &training)?;
            save_model(&model, &out)?;
            if let Some(path) = report {
                write_file(&path, serde_json::to_vec_pretty(&summary)?)?;
            }
            let last = summary.epoch_losses.last().copied().unwrap_or(0.0);
            eprintln!("trained on {} pools in {} steps, final mean loss {last:.6}", summary.pools_used, summary.steps);
        }
        Command::Select {
            candidates,
            sessions,
            strategy,
            budget,
            model,
            assessments,
            seed,
            out,
            run_out,
            passages,
            dense_vectors,
            config,
        } => {
            let mut config = config.load()?;
            let budget = budget.unwrap_or(config.inference.budget);
            let seed = seed.unwrap_or(config.inference.random_seed);
            let sessions: Vec<ConversationSession> = read_jsonl(&sessions)?;
            let pools: HashMap<SessionRef, CandidatePool> =
                read_jsonl::<CandidatePool>(&candidates)?.into_iter().map(|p| (p.session_ref(), p)).collect();
            let model = model.as_deref().map(load_model).transpose()?;
            let assessments: HashMap<SessionRef, PoolAssessment> = match &assessments {
                Some(p) => read_jsonl::<PoolAssessment>(p)?.into_iter().map(|a| (a.session_ref(), a)).collect(),
                None => HashMap::new(),
            };
            let needs_corpus = run_out.is_some() || strategy == StrategyKind::MeanAggregation;
            let corpus = if needs_corpus { Some(load_corpus(&mut config, passages, dense_vectors)?) } else { None };
            let mut run = TrecRun::new(strategy.name());
            let mut records = Vec::with_capacity(sessions.len());
            for session in &sessions {
                let sref = session.session_ref();
                let pool =
                    pools.get(&sref).ok_or_else(|| anyhow!("{sref}: no candidate pool in {}", candidates.display()))?;
                let chosen = match strategy {
                    StrategyKind::RewardArgmax => SelectionStrategy::RewardArgmax(model.as_ref()),
                    StrategyKind::Oracle => SelectionStrategy::Oracle(
                        assessments
                            .get(&sref)
                            .ok_or_else(|| anyhow!("{sref}: oracle selection needs --assessments"))?,
                    ),
                    StrategyKind::Random => SelectionStrategy::Random { seed },
                    StrategyKind::MeanAggregation => {
                        SelectionStrategy::MeanAggregation(corpus.as_ref().expect("corpus loaded").embedder.as_ref())
                    }
                    StrategyKind::First => SelectionStrategy::First,
                };
                let result = select(pool, session, chosen, budget.min(pool.len()))?;
                if let (Some(corpus), Some(_)) = (&corpus, &run_out) {
                    let depth = config.retrieval.depth;
                    let retrieved = match &result.choice {
                        Choice::Index(i) => {
                            let query = pool.candidates()[*i].retrieval_query(config.retrieval.max_query_tokens);
                            corpus.search(config.eval.retriever, &query, depth)?
                        }
                        Choice::Synthetic(v) => corpus.dense.search(v, depth)?,
                    };
                    run.insert_result(sref.qid(), &retrieved)?;
                }
                records.push(SelectionRecord::new(sref, strategy, &result));
            }
            write_jsonl(&out, &records)?;
            if let Some(path) = run_out {
                run.write(&path)?;
            }
            eprintln!("selected for {} sessions", records.len());
        }
        Command::Eval { run, qrels, mrr_cutoff, rel_threshold, ndcg_k, recall_k, tsv, config } => {
            let config = config.load()?;
            let mut metrics = config.eval.metrics.clone();
            if mrr_cutoff.is_some() {
                metrics.mrr_cutoff = mrr_cutoff;
            }
            if let Some(t) = rel_threshold {
                metrics.rel_threshold = t;
            }
            if let Some(k) = ndcg_k {
                metrics.ndcg_k = k;
            }
            if let Some(k) = recall_k {
                metrics.recall_k = k;
            }
            let report = evaluate_run(&TrecRun::read(&run)?, &Qrels::read(&qrels)?, &metrics)?;
            if let Some(path) = tsv {
                write_file(&path, report.to_tsv())?;
            }
            print_json(&report)?;
        }
        Command::Pipeline { config } => {
            let config = Config::load(&config)?;
            let client = build_client(&config)?;
            let report = run_pipeline(&config, client.as_ref())?;
            println!("strategy\tbudget\tmrr\tndcg\trecall");
            for r in &report.reports {
                println!(
                    "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                    r.strategy.as_deref().unwrap_or(""),
                    r.budget.unwrap_or(0),
                    r.mrr,
                    r.ndcg,
                    r.recall
                );
            }
            eprintln!("outputs in {}", config.output_dir.display());
        }
        Command::Synthesize { out, seed, sessions, train_sessions, entities } => {
            let mut synth = SyntheticConfig { seed, ..SyntheticConfig::default() };
            if let Some(s) = sessions {
                synth.sessions = s;
                synth.train_sessions = synth.train_sessions.min(s);
            }
            if let Some(t) = train_sessions {
                synth.train_sessions = t;
            }
            if let Some(e) = entities {
                synth.entities = e;
            }
            if synth.train_sessions > synth.sessions {
                bail!("--train-sessions exceeds --sessions");
            }
            let bench = SyntheticBenchmark::generate(&synth);
            bench.write(&out)?;
            let mut config = Config::default();
            config.data.passages = Some("passages.tsv".into());
            config.data.train_sessions = Some("sessions_train.jsonl".into());
            config.data.test_sessions = Some("sessions_test.jsonl".into());
            config.data.qrels = Some("qrels.txt".into());
            config.data.fixtures = Some("fixtures.jsonl".into());
            config.generation.params.n = synth.pool_size;
            config.eval.retriever = Retriever::Sparse;
            write_file(&out.join("config.json"), serde_json::to_vec_pretty(&config)?)?;
            eprintln!(
                "wrote {} passages, {} train and {} test sessions to {}",
                bench.passages.len(),
                bench.train_sessions.len(),
                bench.test_sessions.len(),
                out.display()
            );
        }
    }
    Ok(())
}
