//! Preparation: the embedding cache over the training split and one
//! annotation per database. Both stores are append-only and re-running skips
//! finished items.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatBackend, GenerationParams};
use crate::par;
use crate::prompts::annotation_prompt;
use crate::schemadb::{append_annotation, load_annotations, AnnotationRecord, DatabaseSchema, Example, SchemaDbError};
use crate::vectorlib::{append_cache, read_cache, CacheRecord, Embedder, EntryKind, VectorError, VectorLibrary};

pub const CACHE_FILE: &str = "embeddings.jsonl";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Debug, Error)]
pub enum PrepareError {
    #[error("embedding cache was built with {cached:?}, embedder is {current:?}")]
    EmbedderChanged { cached: String, current: String },
    #[error("preparation artifact missing: {0}")]
    Missing(std::path::PathBuf),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Store(#[from] SchemaDbError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareFailure {
    pub item: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub embedded: usize,
    pub embeddings_skipped: usize,
    pub annotated: usize,
    pub annotations_skipped: usize,
    pub failures: Vec<PrepareFailure>,
}

/// Embeds every training NLQ and DVQ not yet in the cache.
pub fn extend_cache(
    path: &Path,
    training: &[Example],
    embedder: &dyn Embedder,
    workers: usize,
    report: &mut PrepareReport,
) -> Result<(), PrepareError> {
    let existing = read_cache(path)?;
    if let Some(first) = existing.first() {
        if first.model_id != embedder.model_id() {
            return Err(PrepareError::EmbedderChanged {
                cached: first.model_id.clone(),
                current: embedder.model_id().to_string(),
            });
        }
    }
    let have: HashSet<(&str, EntryKind)> = existing
        .iter()
        .map(|r| (r.example_id.as_str(), r.kind))
        .collect();
    let jobs: Vec<(&Example, EntryKind)> = training
        .iter()
        .flat_map(|e| [(e, EntryKind::Nlq), (e, EntryKind::Dvq)])
        .filter(|(e, kind)| !have.contains(&(e.example_id.as_str(), *kind)))
        .collect();
    report.embeddings_skipped += training.len() * 2 - jobs.len();

    let results = par::map_ordered(&jobs, workers, |_, (example, kind)| {
        let text = match kind {
            EntryKind::Nlq => &example.nlq,
            EntryKind::Dvq => &example.gold_dvq,
        };
        embedder.embed(text).map_err(|e| e.to_string()).and_then(|emb| {
            emb.normalized()
                .map(|emb| CacheRecord {
                    example_id: example.example_id.clone(),
                    kind: *kind,
                    model_id: emb.model_id,
                    dim: emb.dim,
                    values: emb.values,
                })
                .map_err(|e| e.to_string())
        })
    });
    let mut fresh = Vec::new();
    for ((example, kind), result) in jobs.iter().zip(results) {
        match result {
            Ok(record) => fresh.push(record),
            Err(error) => report.failures.push(PrepareFailure {
                item: format!("embedding {} {}", kind, example.example_id),
                error,
            }),
        }
    }
    report.embedded += fresh.len();
    if !fresh.is_empty() {
        append_cache(path, &fresh)?;
    }
    Ok(())
}

/// Drops a leading `A:` marker the model may echo from the prompt.
fn clean_annotation(reply: &str) -> String {
    let trimmed = reply.trim();
    trimmed
        .strip_prefix("A:")
        .map_or(trimmed, str::trim_start)
        .to_string()
}

/// Annotates every database without a stored annotation.
pub fn annotate_databases(
    path: &Path,
    schemas: &BTreeMap<String, DatabaseSchema>,
    backend: &dyn ChatBackend,
    params: &GenerationParams,
    workers: usize,
    report: &mut PrepareReport,
) -> Result<(), PrepareError> {
    let existing = load_annotations(path)?;
    let todo: Vec<&DatabaseSchema> = schemas
        .values()
        .filter(|s| !existing.contains_key(&s.db_id))
        .collect();
    report.annotations_skipped += schemas.len() - todo.len();
    let results = par::map_ordered(&todo, workers, |_, schema| {
        backend.complete(&annotation_prompt(schema), params)
    });
    for (schema, result) in todo.iter().zip(results) {
        match result {
            Ok(r) => {
                append_annotation(
                    path,
                    &AnnotationRecord {
                        db_id: schema.db_id.clone(),
                        model_id: params.model_id.clone(),
                        annotation: clean_annotation(&r.text),
                    },
                )?;
                report.annotated += 1;
            }
            Err(e) => report.failures.push(PrepareFailure {
                item: format!("annotation {}", schema.db_id),
                error: e.to_string(),
            }),
        }
    }
    Ok(())
}

/// Loads the library and annotations written by a preparation run.
pub fn load_prepared(dir: &Path) -> Result<(VectorLibrary, BTreeMap<String, String>), PrepareError> {
    let cache = dir.join(CACHE_FILE);
    let annotations = dir.join(ANNOTATIONS_FILE);
    for p in [&cache, &annotations] {
        if !p.exists() {
            return Err(PrepareError::Missing(p.clone()));
        }
    }
    let library = VectorLibrary::from_records(&read_cache(&cache)?)?;
    let annotations = load_annotations(&annotations)?
        .into_iter()
        .map(|(db, r)| (db, r.annotation))
        .collect();
    Ok((library, annotations))
}
