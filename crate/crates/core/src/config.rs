//! The JSON configuration file shared by the CLI subcommands. Relative paths
//! are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalConfig;
use crate::generation::GenerationConfig;
use crate::inference::StrategyKind;
use crate::retrieval::{Bm25Params, EmbedderSpec, DEFAULT_DEPTH};
use crate::reward::{ModelConfig, TrainingConfig};
use crate::types::MAX_STANDALONE_TOKENS;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config field {field}: {message}")]
    Invalid { field: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `.tsv` (`id<TAB>text`) or JSONL passages.
    pub passages: Option<PathBuf>,
    pub train_sessions: Option<PathBuf>,
    pub test_sessions: Option<PathBuf>,
    /// TREC qrels keyed by `{session_id}_{turn_index}`.
    pub qrels: Option<PathBuf>,
    /// Generator fixture JSONL; when absent the HTTP backend is used.
    pub fixtures: Option<PathBuf>,
    /// Precomputed passage vectors; when absent passages are embedded with the configured embedder.
    pub dense_vectors: Option<PathBuf>,
    pub prompt_template: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Retriever {
    #[default]
    Sparse,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub bm25: Bm25Params,
    pub embedder: EmbedderSpec,
    pub depth: usize,
    pub max_query_tokens: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            bm25: Bm25Params::default(),
            embedder: EmbedderSpec::default(),
            depth: DEFAULT_DEPTH,
            max_query_tokens: MAX_STANDALONE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct GenerationSection {
    #[serde(flatten)]
    pub params: GenerationConfig,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TrainingSection {
    #[serde(flatten)]
    pub params: TrainingConfig,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub strategies: Vec<StrategyKind>,
    /// Clamped to each pool's size.
    pub budget: usize,
    pub sweep_budgets: Vec<usize>,
    pub random_seed: u64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self { strategies: StrategyKind::ALL.to_vec(), budget: 16, sweep_budgets: vec![1, 2, 4, 8, 16], random_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EvalSection {
    #[serde(flatten)]
    pub metrics: EvalConfig,
    pub retriever: Retriever,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub retrieval: RetrievalSection,
    pub generation: GenerationSection,
    pub training: TrainingSection,
    pub inference: InferenceSection,
    pub eval: EvalSection,
    pub output_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            retrieval: RetrievalSection::default(),
            generation: GenerationSection::default(),
            training: TrainingSection::default(),
            inference: InferenceSection::default(),
            eval: EvalSection::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut config: Config = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.passages,
            &mut d.train_sessions,
            &mut d.test_sessions,
            &mut d.qrels,
            &mut d.fixtures,
            &mut d.dense_vectors,
            &mut d.prompt_template,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        if let EmbedderSpec::Lookup { path } = &mut self.retrieval.embedder {
            resolve(base, path);
        }
        resolve(base, &mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, message: String| ConfigError::Invalid { field, message };
        self.retrieval.bm25.validate().map_err(|e| invalid("retrieval.bm25", e.to_string()))?;
        if self.retrieval.depth == 0 {
            return Err(invalid("retrieval.depth", "must be positive".into()));
        }
        if self.retrieval.max_query_tokens == 0 {
            return Err(invalid("retrieval.max_query_tokens", "must be positive".into()));
        }
        self.generation.params.validate().map_err(|e| invalid("generation", e.to_string()))?;
        self.training.params.validate().map_err(|e| invalid("training", e.to_string()))?;
        self.training.model.encoder.validate().map_err(|e| invalid("training.model.encoder", e))?;
        if self.training.model.hidden == 0 {
            return Err(invalid("training.model.hidden", "must be positive".into()));
        }
        if self.inference.budget == 0 {
            return Err(invalid("inference.budget", "must be at least 1".into()));
        }
        let sweep = &self.inference.sweep_budgets;
        if sweep.contains(&0) || sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("inference.sweep_budgets", "must be strictly ascending and positive".into()));
        }
        self.eval.metrics.validate().map_err(|e| invalid("eval", e.to_string()))?;
        Ok(())
    }

    pub fn require<'a>(field: &'static str, value: &'a Option<PathBuf>) -> Result<&'a Path, ConfigError> {
        value.as_deref().ok_or(ConfigError::Invalid { field, message: "required but not set".into() })
    }
}
