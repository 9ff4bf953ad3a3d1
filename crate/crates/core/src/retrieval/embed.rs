//! Query/passage embedders for the dense path.
//!
//! The dense encoder itself is external. `LookupEmbedder` replays vectors
//! produced elsewhere; `HashingEmbedder` is a self-contained signed
//! feature-hashing encoder for offline runs and tests.

use std::collections::HashMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{read_dense_file, RetrievalError};
use crate::text::analyze;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no stored vector for text {0:?}")]
    Missing(String),
    #[error("embedder configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

pub trait QueryEmbedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

/// Stable 64-bit hash of a feature string under a salt.
pub(crate) fn feature_hash(feature: &str, salt: u64) -> u64 {
    let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    h.write(feature.as_bytes());
    h.finish()
}

/// Signed feature hashing of analyzed unigrams, L2-normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    const SALT: u64 = 0xde05e;

    pub fn new(dimension: usize) -> Result<Self, EmbedError> {
        if dimension == 0 {
            return Err(EmbedError::Config("dimension must be positive".into()));
        }
        Ok(Self { dimension })
    }
}

impl QueryEmbedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let mut acc = vec![0f64; self.dimension];
        for tok in analyze(text) {
            let h = feature_hash(&tok, Self::SALT);
            let slot = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[slot] += sign;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(acc.into_iter().map(|x| x as f32).collect())
    }
}

/// Vectors keyed by exact query text, loaded from a dense vector file whose
/// ids are the texts.
#[derive(Debug, Clone)]
pub struct LookupEmbedder {
    dimension: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl LookupEmbedder {
    pub fn new(dimension: usize, vectors: HashMap<String, Vec<f32>>) -> Result<Self, EmbedError> {
        if let Some((k, v)) = vectors.iter().find(|(_, v)| v.len() != dimension) {
            return Err(EmbedError::Config(format!(
                "vector for {k:?} has dimension {}, expected {dimension}",
                v.len()
            )));
        }
        Ok(Self { dimension, vectors })
    }

    pub fn from_file(path: &Path) -> Result<Self, EmbedError> {
        let ix = read_dense_file(path)?;
        let vectors = ix.ids().iter().enumerate().map(|(i, id)| (id.clone(), ix.vector(i).to_vec())).collect();
        Self::new(ix.dimension(), vectors)
    }
}

impl QueryEmbedder for LookupEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        self.vectors.get(text).cloned().ok_or_else(|| EmbedError::Missing(text.to_owned()))
    }
}

/// Serializable embedder choice used by configs and the CLI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Hashing { dimension: usize },
    Lookup { path: PathBuf },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Hashing { dimension: 256 }
    }
}

impl EmbedderSpec {
    pub fn build(&self) -> Result<Box<dyn QueryEmbedder>, EmbedError> {
        Ok(match self {
            EmbedderSpec::Hashing { dimension } => Box::new(HashingEmbedder::new(*dimension)?),
            EmbedderSpec::Lookup { path } => Box::new(LookupEmbedder::from_file(path)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_normalized() {
        let e = HashingEmbedder::new(64).unwrap();
        let a = e.embed("The quick brown fox").unwrap();
        assert_eq!(a, e.embed("the quick, brown fox!").unwrap());
        let n: f32 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
        assert!(e.embed("").unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn feature_hash_is_stable() {
        // Pinned so that vector files stay valid across builds.
        assert_eq!(feature_hash("dime", 0), 0xc9eb_c567_5743_9b74);
        assert_eq!(feature_hash("dime", 1), 0x0ee3_a81e_79f0_2c99);
        assert_ne!(feature_hash("dime", 0), feature_hash("dime", 1));
        assert_ne!(feature_hash("dime", 0), feature_hash("time", 0));
    }

    #[test]
    fn lookup_misses_are_errors() {
        let e = LookupEmbedder::new(2, HashMap::from([("q".to_string(), vec![1.0, 0.0])])).unwrap();
        assert_eq!(e.embed("q").unwrap(), vec![1.0, 0.0]);
        assert!(matches!(e.embed("other"), Err(EmbedError::Missing(_))));
        assert!(LookupEmbedder::new(3, HashMap::from([("q".to_string(), vec![1.0])])).is_err());
    }

    #[test]
    fn spec_json() {
        let s: EmbedderSpec = serde_json::from_str(r#"{"kind":"hashing","dimension":32}"#).unwrap();
        assert_eq!(s.build().unwrap().dimension(), 32);
    }
}
