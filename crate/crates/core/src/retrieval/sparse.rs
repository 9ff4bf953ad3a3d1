//! BM25 inverted index.
//!
//! Scoring uses the Lucene form of BM25:
//!
//! ```text
//! score(q, d) = Σ_t IDF(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·dl/avgdl))
//! IDF(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query tokens are summed with multiplicity, in query order.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{check_unique, top_k, Passage, RetrievalError, RetrievalResult};
use crate::text::analyze;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self::topiocqa()
    }
}

impl Bm25Params {
    pub fn topiocqa() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }

    pub fn qrecc() -> Self {
        Self { k1: 0.82, b: 0.68 }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(RetrievalError::Params(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrievalError::Params(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "IndexFile", into = "IndexFile")]
pub struct SparseIndex {
    params: Bm25Params,
    passage_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    lookup: HashMap<String, u32>,
}

/// On-disk layout of a sparse index.
#[derive(Serialize, Deserialize)]
struct IndexFile {
    params: Bm25Params,
    passage_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl From<SparseIndex> for IndexFile {
    fn from(ix: SparseIndex) -> Self {
        IndexFile {
            params: ix.params,
            passage_ids: ix.passage_ids,
            doc_lengths: ix.doc_lengths,
            postings: ix
                .postings
                .into_iter()
                .map(|(t, ps)| (t, ps.into_iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        }
    }
}

impl TryFrom<IndexFile> for SparseIndex {
    type Error = RetrievalError;
    fn try_from(f: IndexFile) -> Result<Self, Self::Error> {
        f.params.validate()?;
        check_unique(f.passage_ids.iter().map(String::as_str))?;
        if f.doc_lengths.len() != f.passage_ids.len() {
            return Err(RetrievalError::Params("doc_lengths and passage_ids differ in length".into()));
        }
        let n = f.passage_ids.len() as u32;
        let mut postings = BTreeMap::new();
        for (term, list) in f.postings {
            let mut prev = None;
            let mut out = Vec::with_capacity(list.len());
            for (doc, tf) in list {
                if doc >= n || tf == 0 || prev.is_some_and(|p| p >= doc) {
                    return Err(RetrievalError::Params(format!("corrupt postings for term {term:?}")));
                }
                prev = Some(doc);
                out.push(Posting { doc, tf });
            }
            postings.insert(term, out);
        }
        let lookup = f.passage_ids.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
        let avg_doc_length = mean_length(&f.doc_lengths);
        Ok(SparseIndex {
            params: f.params,
            passage_ids: f.passage_ids,
            doc_lengths: f.doc_lengths,
            avg_doc_length,
            postings,
            lookup,
        })
    }
}

fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        0.0
    } else {
        lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / lengths.len() as f64
    }
}

impl SparseIndex {
    /// Indexes `passages` in the given order.
    pub fn build<I>(passages: I, params: Bm25Params) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = Passage>,
    {
        params.validate()?;
        let mut passage_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut lookup = HashMap::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();

        for passage in passages {
            let doc = passage_ids.len() as u32;
            if lookup.insert(passage.passage_id.clone(), doc).is_some() {
                return Err(RetrievalError::DuplicatePassage(passage.passage_id));
            }
            let tokens = analyze(&passage.text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { doc, tf: count });
            }
            doc_lengths.push(tokens.len() as u32);
            passage_ids.push(passage.passage_id);
        }

        let avg_doc_length = mean_length(&doc_lengths);
        Ok(Self { params, passage_ids, doc_lengths, avg_doc_length, postings, lookup })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, passage_id: &str) -> Option<u32> {
        self.lookup.get(passage_id).map(|&d| self.doc_lengths[d as usize])
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passage_ids
    }

    /// `(passage_id, term_frequency)` pairs for `term`, in indexing order.
    pub fn postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings
            .get(term)
            .map(|ps| ps.iter().map(|p| (self.passage_ids[p.doc as usize].as_str(), p.tf)).collect())
            .unwrap_or_default()
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm =
            if self.avg_doc_length > 0.0 { 1.0 - b + b * f64::from(doc_len) / self.avg_doc_length } else { 1.0 - b };
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one passage for an already-analyzed query.
    pub fn bm25_score(&self, query_tokens: &[String], passage_id: &str) -> Result<f64, RetrievalError> {
        let doc = *self.lookup.get(passage_id).ok_or_else(|| RetrievalError::PassageNotFound(passage_id.to_owned()))?;
        let dl = self.doc_lengths[doc as usize];
        let mut score = 0.0;
        for token in query_tokens {
            let Some(list) = self.postings.get(token) else { continue };
            if let Ok(pos) = list.binary_search_by_key(&doc, |p| p.doc) {
                score += self.idf(list.len()) * self.term_weight(list[pos].tf, dl);
            }
        }
        Ok(score)
    }

    /// Top-`depth` passages for `query`. Passages sharing no term with the
    /// query are never returned.
    pub fn search(&self, query: &str, depth: usize) -> Result<RetrievalResult, RetrievalError> {
        if self.doc_count() == 0 {
            return Err(RetrievalError::EmptyIndex);
        }
        if depth == 0 {
            return Err(RetrievalError::ZeroDepth);
        }
        let tokens = analyze(query);
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for token in &tokens {
            let Some(list) = self.postings.get(token) else { continue };
            let idf = self.idf(list.len());
            for p in list {
                let w = idf * self.term_weight(p.tf, self.doc_lengths[p.doc as usize]);
                *acc.entry(p.doc).or_insert(0.0) += w;
            }
        }
        let scored = acc.into_iter().map(|(doc, s)| (s, self.passage_ids[doc as usize].as_str())).collect();
        Ok(top_k(scored, depth))
    }
}
