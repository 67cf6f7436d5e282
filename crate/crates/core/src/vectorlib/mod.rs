//! Embedding library over training questions and DVQs.
//!
//! Every training example contributes one NLQ entry and one DVQ entry. Vectors
//! are unit-normalized on insert, so retrieval is an exact max-dot-product scan.
//! Ties are broken by ascending entry id, which is assigned in insertion order.

mod embedder;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::schemadb::{read_lines, Example, SchemaDbError};

pub use embedder::{
    EmbedError, Embedder, LocalEmbedder, RemoteEmbedder, DEFAULT_LOCAL_DIM,
    DEFAULT_REMOTE_EMBEDDING_MODEL,
};

pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("embedding model mismatch: library uses {library:?}, got {other:?}")]
    ModelMismatch { library: String, other: String },
    #[error("library has no {0} entries")]
    EmptyLibraryForKind(EntryKind),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate {kind} entry for example {example_id:?}")]
    DuplicateEntry { example_id: String, kind: EntryKind },
    #[error("embedding failed for example {example_id:?}: {source}")]
    EmbedderFailure {
        example_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("cache line {line}: {reason}")]
    CacheInvalid { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] SchemaDbError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub model_id: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(model_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            model_id: model_id.into(),
            dim: values.len(),
            values,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check(&self) -> Result<(), VectorError> {
        if self.values.len() != self.dim {
            return Err(VectorError::DimensionMismatch {
                left: self.dim,
                right: self.values.len(),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite);
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self, VectorError> {
        self.check()?;
        let norm = self.norm();
        if norm == 0.0 {
            return Err(VectorError::ZeroVector);
        }
        for v in &mut self.values {
            *v /= norm;
        }
        Ok(self)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, `dot(u, v) / (|u| |v|)`.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64, VectorError> {
    u.check()?;
    v.check()?;
    if u.dim != v.dim {
        return Err(VectorError::DimensionMismatch {
            left: u.dim,
            right: v.dim,
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok((dot(&u.values, &v.values) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntryKind {
    #[serde(rename = "NLQ")]
    Nlq,
    #[serde(rename = "DVQ")]
    Dvq,
}

impl std::fmt::Display for EntryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EntryKind::Nlq => "NLQ",
            EntryKind::Dvq => "DVQ",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry {
    pub entry_id: u64,
    pub kind: EntryKind,
    pub embedding: Embedding,
    pub example_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<'a> {
    pub entry: &'a LibraryEntry,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorLibrary {
    model_id: String,
    dim: usize,
    entries: Vec<LibraryEntry>,
    keys: HashSet<(String, EntryKind)>,
}

impl VectorLibrary {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Self {
        Self {
            model_id: model_id.into(),
            dim,
            entries: Vec::new(),
            keys: HashSet::new(),
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, example_id: &str, kind: EntryKind) -> bool {
        self.keys.contains(&(example_id.to_string(), kind))
    }

    fn check_compatible(&self, e: &Embedding) -> Result<(), VectorError> {
        if e.model_id != self.model_id {
            return Err(VectorError::ModelMismatch {
                library: self.model_id.clone(),
                other: e.model_id.clone(),
            });
        }
        if e.dim != self.dim {
            return Err(VectorError::DimensionMismatch {
                left: self.dim,
                right: e.dim,
            });
        }
        Ok(())
    }

    /// Normalizes and appends an entry; the returned id is its position.
    pub fn insert(
        &mut self,
        kind: EntryKind,
        example_id: impl Into<String>,
        embedding: Embedding,
    ) -> Result<u64, VectorError> {
        let example_id = example_id.into();
        self.check_compatible(&embedding)?;
        let embedding = embedding.normalized()?;
        if !self.keys.insert((example_id.clone(), kind)) {
            return Err(VectorError::DuplicateEntry { example_id, kind });
        }
        let entry_id = self.entries.len() as u64;
        self.entries.push(LibraryEntry {
            entry_id,
            kind,
            embedding,
            example_id,
        });
        Ok(entry_id)
    }

    /// The `k` entries of `kind` most similar to `query`, best first.
    pub fn top_k(
        &self,
        query: &Embedding,
        kind: EntryKind,
        k: usize,
    ) -> Result<Vec<Hit<'_>>, VectorError> {
        if k == 0 {
            return Err(VectorError::InvalidK);
        }
        self.check_compatible(query)?;
        let q = query.clone().normalized()?;
        let mut scored: Vec<Hit<'_>> = self
            .entries
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| Hit {
                entry: e,
                score: dot(&q.values, &e.embedding.values),
            })
            .collect();
        if scored.is_empty() {
            return Err(VectorError::EmptyLibraryForKind(kind));
        }
        // scores are finite; partial_cmp also treats -0.0 and 0.0 as a tie
        let rank = |a: &Hit<'_>, b: &Hit<'_>| -> Ordering {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.entry.entry_id.cmp(&b.entry.entry_id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_by(rank);
        Ok(scored)
    }

    pub fn to_records(&self) -> Vec<CacheRecord> {
        self.entries.iter().map(CacheRecord::from).collect()
    }

    /// Rebuilds a library from cache records; entry ids follow record order.
    pub fn from_records(records: &[CacheRecord]) -> Result<Self, VectorError> {
        let first = records.first().ok_or(VectorError::CacheInvalid {
            line: 0,
            reason: "empty cache".into(),
        })?;
        let mut lib = Self::new(first.model_id.clone(), first.dim);
        for (i, r) in records.iter().enumerate() {
            let invalid = |reason: String| VectorError::CacheInvalid { line: i + 1, reason };
            if r.values.len() != r.dim {
                return Err(invalid(format!(
                    "dim {} but {} values",
                    r.dim,
                    r.values.len()
                )));
            }
            let e = Embedding {
                model_id: r.model_id.clone(),
                dim: r.dim,
                values: r.values.clone(),
            };
            if (e.norm() - 1.0).abs() > NORM_TOLERANCE {
                return Err(invalid(format!("norm {} is not 1", e.norm())));
            }
            // stored values are already unit length; keep them bit-exact
            lib.check_compatible(&e).map_err(|err| invalid(err.to_string()))?;
            e.check().map_err(|err| invalid(err.to_string()))?;
            if !lib.keys.insert((r.example_id.clone(), r.kind)) {
                return Err(invalid(format!(
                    "duplicate {} entry for {:?}",
                    r.kind, r.example_id
                )));
            }
            let entry_id = lib.entries.len() as u64;
            lib.entries.push(LibraryEntry {
                entry_id,
                kind: r.kind,
                embedding: e,
                example_id: r.example_id.clone(),
            });
        }
        Ok(lib)
    }
}

/// One line of the embedding cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub example_id: String,
    pub kind: EntryKind,
    pub model_id: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl From<&LibraryEntry> for CacheRecord {
    fn from(e: &LibraryEntry) -> Self {
        Self {
            example_id: e.example_id.clone(),
            kind: e.kind,
            model_id: e.embedding.model_id.clone(),
            dim: e.embedding.dim,
            values: e.embedding.values.clone(),
        }
    }
}

pub fn read_cache(path: &Path) -> Result<Vec<CacheRecord>, VectorError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| VectorError::CacheInvalid {
                line,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn load_library(path: &Path) -> Result<VectorLibrary, VectorError> {
    VectorLibrary::from_records(&read_cache(path)?)
}

pub fn save_library(library: &VectorLibrary, path: &Path) -> Result<(), VectorError> {
    let mut text = String::new();
    for r in library.to_records() {
        text.push_str(&serde_json::to_string(&r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| {
        VectorError::Io(SchemaDbError::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

pub fn append_cache(path: &Path, records: &[CacheRecord]) -> Result<(), VectorError> {
    let io = |source| {
        VectorError::Io(SchemaDbError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io)?;
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(io)
}

/// Embeds the NLQ and the gold DVQ of every example that `skip` does not
/// exclude, up to `workers` at a time. Results come back in example order,
/// NLQ before DVQ.
pub fn embed_examples(
    examples: &[Example],
    embedder: &dyn Embedder,
    workers: usize,
    skip: impl Fn(&str, EntryKind) -> bool + Sync,
) -> Result<Vec<CacheRecord>, VectorError> {
    let jobs: Vec<(&Example, EntryKind)> = examples
        .iter()
        .flat_map(|e| [(e, EntryKind::Nlq), (e, EntryKind::Dvq)])
        .filter(|(e, kind)| !skip(&e.example_id, *kind))
        .collect();
    let results = par::map_ordered(&jobs, workers, |_, (example, kind)| {
        let text = match kind {
            EntryKind::Nlq => &example.nlq,
            EntryKind::Dvq => &example.gold_dvq,
        };
        embedder
            .embed(text)
            .and_then(|e| {
                e.normalized()
                    .map_err(|err| EmbedError::BadResponse(err.to_string()))
            })
            .map(|e| CacheRecord {
                example_id: example.example_id.clone(),
                kind: *kind,
                model_id: e.model_id,
                dim: e.dim,
                values: e.values,
            })
            .map_err(|source| VectorError::EmbedderFailure {
                example_id: example.example_id.clone(),
                source,
            })
    });
    results.into_iter().collect()
}

/// Two entries per training example, NLQ then DVQ, in example order.
pub fn build_library(
    examples: &[Example],
    embedder: &dyn Embedder,
    workers: usize,
) -> Result<VectorLibrary, VectorError> {
    let records = embed_examples(examples, embedder, workers, |_, _| false)?;
    let first = records.first().ok_or(VectorError::CacheInvalid {
        line: 0,
        reason: "no training examples".into(),
    })?;
    let mut lib = VectorLibrary::new(first.model_id.clone(), first.dim);
    for r in records {
        let e = Embedding {
            model_id: r.model_id,
            dim: r.dim,
            values: r.values,
        };
        lib.insert(r.kind, r.example_id, e)?;
    }
    Ok(lib)
}
