//! Exact inner-product search over ingested passage vectors.
//!
//! # Vector file layout
//!
//! ```text
//! {"dimension":d,"count":n,"ids":["p1",...,"pn"]}\n
//! n · d little-endian IEEE-754 f32 values, row-major (vector i = ids[i])
//! ```
//!
//! The header is a single line of JSON terminated by `\n`; the float block
//! follows immediately with no padding and nothing after it.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_unique, top_k, RetrievalError, RetrievalResult};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dimension: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    seen: HashSet<String>,
}

impl DenseIndex {
    pub fn new(dimension: usize) -> Self {
        Self { dimension, ids: Vec::new(), data: Vec::new(), seen: HashSet::new() }
    }

    pub fn from_vectors<I, S>(dimension: usize, vectors: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ix = Self::new(dimension);
        for (id, v) in vectors {
            ix.insert(id, &v)?;
        }
        Ok(ix)
    }

    pub fn insert(&mut self, passage_id: impl Into<String>, vector: &[f32]) -> Result<(), RetrievalError> {
        let passage_id = passage_id.into();
        if vector.len() != self.dimension {
            return Err(RetrievalError::Dimension { expected: self.dimension, actual: vector.len() });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(RetrievalError::NonFinite(passage_id));
        }
        if !self.seen.insert(passage_id.clone()) {
            return Err(RetrievalError::DuplicatePassage(passage_id));
        }
        self.ids.push(passage_id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Top-`depth` passages by inner product with `query`, exhaustive scan.
    pub fn search(&self, query: &[f32], depth: usize) -> Result<RetrievalResult, RetrievalError> {
        if query.len() != self.dimension {
            return Err(RetrievalError::Dimension { expected: self.dimension, actual: query.len() });
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(RetrievalError::NonFinite("<query>".into()));
        }
        if self.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if depth == 0 {
            return Err(RetrievalError::ZeroDepth);
        }
        let scored =
            self.ids.iter().enumerate().map(|(i, id)| (inner_product(self.vector(i), query), id.as_str())).collect();
        Ok(top_k(scored, depth))
    }
}

/// Inner product accumulated in f64, left to right.
pub(crate) fn inner_product(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + f64::from(*x) * f64::from(*y))
}

#[derive(Serialize, Deserialize)]
struct Header {
    dimension: usize,
    count: usize,
    ids: Vec<String>,
}

pub fn write_dense_file(path: &Path, index: &DenseIndex) -> Result<(), RetrievalError> {
    let io_err = |source| RetrievalError::Io { path: path.into(), source };
    let header = Header { dimension: index.dimension, count: index.len(), ids: index.ids.clone() };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    buf.reserve(index.data.len() * 4);
    for x in &index.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)
}

pub fn read_dense_file(path: &Path) -> Result<DenseIndex, RetrievalError> {
    let bytes = fs::read(path).map_err(|source| RetrievalError::Io { path: path.into(), source })?;
    parse_dense(&bytes).map_err(|message| RetrievalError::DenseFormat { path: path.into(), message })
}

fn parse_dense(bytes: &[u8]) -> Result<DenseIndex, String> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or("missing header line")?;
    let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| format!("bad header: {e}"))?;
    if header.ids.len() != header.count {
        return Err(format!("header count {} but {} ids", header.count, header.ids.len()));
    }
    if header.dimension == 0 {
        return Err("dimension must be positive".into());
    }
    let body = &bytes[nl + 1..];
    let expected = header.count * header.dimension * 4;
    if body.len() != expected {
        return Err(format!("expected {expected} bytes of vector data after offset {}, found {}", nl + 1, body.len()));
    }
    check_unique(header.ids.iter().map(String::as_str)).map_err(|e| e.to_string())?;
    let seen = header.ids.iter().cloned().collect();
    let data: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
        return Err(format!("non-finite value for id {:?}", header.ids[pos / header.dimension]));
    }
    Ok(DenseIndex { dimension: header.dimension, ids: header.ids, data, seen })
}
