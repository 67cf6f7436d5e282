//! The generate → retune → debug pipeline, its traces, and trace scoring.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatBackend, GenerationParams, LlmError, Matcher, Reply, ScriptedBackend};
use crate::metrics::{match_pair, EvalSummary, MatchRecord, MetricsError};
use crate::par;
use crate::prompts::{self, ChatMessage, PromptError, Shot};
use crate::schemadb::{append_json_line, read_lines, AnnotatedDatabase, DatabaseSchema, Example, SchemaDbError};
use crate::vectorlib::{EmbedError, Embedder, EntryKind, Hit, VectorError, VectorLibrary};

pub const DEFAULT_K: usize = 10;
pub const TRACES_FILE: &str = "traces.jsonl";
pub const DONE_FILE: &str = "done.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k: usize,
    pub enable_retune: bool,
    pub enable_debug: bool,
    pub gen_params: GenerationParams,
}

impl PipelineConfig {
    pub fn new(gen_params: GenerationParams) -> Self {
        Self {
            k: DEFAULT_K,
            enable_retune: true,
            enable_debug: true,
            gen_params,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("no DVQ found in reply {reply:?}")]
    ExtractionFailure { reply: String },
    #[error("no schema for database {0:?}")]
    UnknownSchema(String),
    #[error("library entry refers to unknown training example {0:?}")]
    UnknownExample(String),
    #[error("database {0:?} has no annotation")]
    MissingAnnotation(String),
}

/// Returns the first line that starts with `Visualize ` once markdown header
/// marks, `A:` prefixes, backticks and surrounding whitespace are removed.
pub fn extract_dvq_from_reply(reply: &str) -> Result<String, PipelineError> {
    for line in reply.lines() {
        let mut s = line.trim();
        loop {
            let next = s
                .trim_start_matches('#')
                .trim_start_matches('`')
                .trim_start();
            let next = next.strip_prefix("A:").unwrap_or(next).trim_start();
            if next == s {
                break;
            }
            s = next;
        }
        let s = s.trim_end_matches('`').trim();
        if s.len() > 10 && s[..10].eq_ignore_ascii_case("visualize ") {
            return Ok(s.to_string());
        }
    }
    Err(PipelineError::ExtractionFailure {
        reply: reply.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub example_id: String,
    pub entry_id: u64,
    pub score: f64,
}

impl From<&Hit<'_>> for Retrieved {
    fn from(h: &Hit<'_>) -> Self {
        Self {
            example_id: h.entry.example_id.clone(),
            entry_id: h.entry.entry_id,
            score: h.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub prompt: Vec<ChatMessage>,
    pub reply: String,
    pub attempts: u32,
    /// The reply held no DVQ and the stage passed its input through.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub dvq: String,
    pub retrieved: Vec<Retrieved>,
    pub record: StageRecord,
}

/// One line of `traces.jsonl`. Fields appear in pipeline order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub example_id: String,
    pub nlq: String,
    pub db_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_nlq: Option<Vec<Retrieved>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dvq_gen: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_dvq: Option<Vec<Retrieved>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dvq_rtn: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retune: Option<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dvq_dbg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debug: Option<StageRecord>,
    /// Output of the last enabled stage; empty when the example failed.
    #[serde(rename = "final")]
    pub final_dvq: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PipelineTrace {
    fn start(example: &Example) -> Self {
        Self {
            example_id: example.example_id.clone(),
            nlq: example.nlq.clone(),
            db_id: example.db_id.clone(),
            retrieved_nlq: None,
            dvq_gen: None,
            generate: None,
            retrieved_dvq: None,
            dvq_rtn: None,
            retune: None,
            dvq_dbg: None,
            debug: None,
            final_dvq: String::new(),
            error: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

/// Read-only state shared by all examples of a run.
pub struct Pipeline<'a> {
    pub config: PipelineConfig,
    library: &'a VectorLibrary,
    training: HashMap<&'a str, &'a Example>,
    schemas: &'a BTreeMap<String, DatabaseSchema>,
    annotations: &'a BTreeMap<String, String>,
    embedder: &'a dyn Embedder,
    backend: &'a dyn ChatBackend,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        config: PipelineConfig,
        library: &'a VectorLibrary,
        training: &'a [Example],
        schemas: &'a BTreeMap<String, DatabaseSchema>,
        annotations: &'a BTreeMap<String, String>,
        embedder: &'a dyn Embedder,
        backend: &'a dyn ChatBackend,
    ) -> Result<Self, PipelineError> {
        if config.k == 0 {
            return Err(PipelineError::InvalidK);
        }
        Ok(Self {
            config,
            library,
            training: training.iter().map(|e| (e.example_id.as_str(), e)).collect(),
            schemas,
            annotations,
            embedder,
            backend,
        })
    }

    fn schema(&self, db_id: &str) -> Result<&'a DatabaseSchema, PipelineError> {
        self.schemas
            .get(db_id)
            .ok_or_else(|| PipelineError::UnknownSchema(db_id.to_string()))
    }

    fn retrieve(&self, text: &str, kind: EntryKind) -> Result<Vec<(Retrieved, &'a Example)>, PipelineError> {
        let query = self.embedder.embed(text)?;
        let hits = self.library.top_k(&query, kind, self.config.k)?;
        hits.iter()
            .map(|h| {
                let example = self
                    .training
                    .get(h.entry.example_id.as_str())
                    .ok_or_else(|| PipelineError::UnknownExample(h.entry.example_id.clone()))?;
                Ok((Retrieved::from(h), *example))
            })
            .collect()
    }

    fn ask(&self, prompt: Vec<ChatMessage>) -> Result<StageRecord, PipelineError> {
        let result = self.backend.complete(&prompt, &self.config.gen_params)?;
        Ok(StageRecord {
            prompt,
            reply: result.text,
            attempts: result.attempts,
            fallback: false,
        })
    }

    fn extract_or_fallback(mut record: StageRecord, input: &str, stage: &str) -> (String, StageRecord) {
        match extract_dvq_from_reply(&record.reply) {
            Ok(dvq) => (dvq, record),
            Err(_) => {
                tracing::warn!(stage, "no DVQ in reply, keeping stage input");
                record.fallback = true;
                (input.to_string(), record)
            }
        }
    }

    pub fn stage_generate(&self, nlq: &str, db_id: &str) -> Result<StageOutput, PipelineError> {
        let schema = self.schema(db_id)?;
        let retrieved = self.retrieve(nlq, EntryKind::Nlq)?;
        let shot_schemas = retrieved
            .iter()
            .map(|(_, e)| self.schema(&e.db_id))
            .collect::<Result<Vec<_>, _>>()?;
        let shots: Vec<Shot<'_>> = retrieved
            .iter()
            .zip(shot_schemas)
            .map(|((r, e), schema)| Shot {
                nlq: &e.nlq,
                dvq: &e.gold_dvq,
                schema,
                score: r.score,
            })
            .collect();
        let record = self.ask(prompts::generation_prompt(nlq, schema, &shots)?)?;
        let dvq = extract_dvq_from_reply(&record.reply)?;
        Ok(StageOutput {
            dvq,
            retrieved: retrieved.into_iter().map(|(r, _)| r).collect(),
            record,
        })
    }

    pub fn stage_retune(&self, dvq_gen: &str) -> Result<StageOutput, PipelineError> {
        let retrieved = self.retrieve(dvq_gen, EntryKind::Dvq)?;
        let references: Vec<&str> = retrieved.iter().map(|(_, e)| e.gold_dvq.as_str()).collect();
        let record = self.ask(prompts::retune_prompt(&references, dvq_gen)?)?;
        let (dvq, record) = Self::extract_or_fallback(record, dvq_gen, "retune");
        Ok(StageOutput {
            dvq,
            retrieved: retrieved.into_iter().map(|(r, _)| r).collect(),
            record,
        })
    }

    pub fn stage_debug(&self, dvq_in: &str, db_id: &str) -> Result<StageOutput, PipelineError> {
        let annotation = self
            .annotations
            .get(db_id)
            .ok_or_else(|| PipelineError::MissingAnnotation(db_id.to_string()))?;
        let schema = self.schema(db_id)?;
        let db = AnnotatedDatabase {
            schema: schema.clone(),
            annotation: annotation.clone(),
        };
        let prompt = prompts::debug_prompt(&db, dvq_in).map_err(|e| match e {
            PromptError::MissingAnnotation(id) => PipelineError::MissingAnnotation(id),
            other => other.into(),
        })?;
        let record = self.ask(prompt)?;
        let (dvq, record) = Self::extract_or_fallback(record, dvq_in, "debug");
        Ok(StageOutput {
            dvq,
            retrieved: Vec::new(),
            record,
        })
    }

    /// Runs every enabled stage. Failures are recorded in the trace.
    pub fn run_example(&self, example: &Example) -> PipelineTrace {
        let mut trace = PipelineTrace::start(example);
        if let Err(e) = self.fill(example, &mut trace) {
            tracing::warn!(example_id = %example.example_id, error = %e, "example failed");
            trace.error = Some(e.to_string());
            trace.final_dvq.clear();
        }
        trace
    }

    fn fill(&self, example: &Example, trace: &mut PipelineTrace) -> Result<(), PipelineError> {
        let generated = self.stage_generate(&example.nlq, &example.db_id)?;
        trace.retrieved_nlq = Some(generated.retrieved);
        trace.dvq_gen = Some(generated.dvq.clone());
        trace.generate = Some(generated.record);
        let mut current = generated.dvq;

        if self.config.enable_retune {
            let retuned = self.stage_retune(&current)?;
            trace.retrieved_dvq = Some(retuned.retrieved);
            trace.dvq_rtn = Some(retuned.dvq.clone());
            trace.retune = Some(retuned.record);
            current = retuned.dvq;
        }
        if self.config.enable_debug {
            let debugged = self.stage_debug(&current, &example.db_id)?;
            trace.dvq_dbg = Some(debugged.dvq.clone());
            trace.debug = Some(debugged.record);
            current = debugged.dvq;
        }
        trace.final_dvq = current;
        Ok(())
    }

    /// Runs examples on `workers` threads and hands traces to `sink` in input order.
    pub fn run_corpus<E>(
        &self,
        examples: &[Example],
        workers: usize,
        sink: impl FnMut(PipelineTrace) -> Result<(), E>,
    ) -> Result<(), E> {
        let mut sink = sink;
        par::for_each_ordered(examples, workers, |_, e| self.run_example(e), |_, t| sink(t))
    }
}

/// Offline script that answers each generation prompt with the example's gold
/// DVQ and echoes the input DVQ at the retune and debug stages.
pub fn identity_script(examples: &[Example]) -> ScriptedBackend {
    let mut script = ScriptedBackend::new();
    for e in examples {
        script = script.rule(
            Matcher::EndsWith(format!(
                "# “{}”\n### Data Visualization Query:",
                e.nlq.trim()
            )),
            Reply::Text(e.gold_dvq.clone()),
        );
    }
    script.rule(Matcher::Contains("### Original DVQ:".into()), Reply::EchoOriginal)
}

/// Appends traces to `traces.jsonl` and records finished ids in `done.txt`,
/// so an interrupted run can resume where it stopped.
pub struct TraceWriter {
    traces: PathBuf,
    done_path: PathBuf,
    done: HashSet<String>,
}

impl TraceWriter {
    pub fn open(dir: &Path) -> Result<Self, SchemaDbError> {
        fs::create_dir_all(dir).map_err(|source| SchemaDbError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let done_path = dir.join(DONE_FILE);
        let done = if done_path.exists() {
            read_lines(&done_path)?
                .into_iter()
                .map(|(_, id)| id.trim().to_string())
                .collect()
        } else {
            HashSet::new()
        };
        Ok(Self {
            traces: dir.join(TRACES_FILE),
            done_path,
            done,
        })
    }

    pub fn is_done(&self, example_id: &str) -> bool {
        self.done.contains(example_id)
    }

    pub fn done_count(&self) -> usize {
        self.done.len()
    }

    pub fn write(&mut self, trace: &PipelineTrace) -> Result<(), SchemaDbError> {
        append_json_line(&self.traces, trace)?;
        let io = |source| SchemaDbError::Io {
            path: self.done_path.clone(),
            source,
        };
        use std::io::Write;
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.done_path)
            .map_err(io)?;
        writeln!(f, "{}", trace.example_id).map_err(io)?;
        self.done.insert(trace.example_id.clone());
        Ok(())
    }
}

pub fn read_traces(path: &Path) -> Result<Vec<PipelineTrace>, SchemaDbError> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| SchemaDbError::RecordInvalid {
                path: path.to_path_buf(),
                line,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trace {0:?} has no gold example")]
    OrphanTrace(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceScore {
    pub summary: EvalSummary,
    pub records: Vec<MatchRecord>,
    /// Traces dropped because a later trace had the same id.
    pub duplicates: usize,
    /// Traces that carry an error.
    pub failed: usize,
}

/// Scores traces against gold examples. Duplicate ids keep the last trace;
/// failed traces count as mismatches.
pub fn score_traces(traces: &[PipelineTrace], gold: &[Example]) -> Result<TraceScore, EvalError> {
    let gold: HashMap<&str, &Example> = gold.iter().map(|e| (e.example_id.as_str(), e)).collect();
    let mut latest: BTreeMap<&str, (usize, &PipelineTrace)> = BTreeMap::new();
    for (i, t) in traces.iter().enumerate() {
        if !gold.contains_key(t.example_id.as_str()) {
            return Err(EvalError::OrphanTrace(t.example_id.clone()));
        }
        latest.insert(&t.example_id, (i, t));
    }
    let duplicates = traces.len() - latest.len();
    if duplicates > 0 {
        tracing::warn!(duplicates, "duplicate trace ids, keeping the last of each");
    }
    let mut kept: Vec<(usize, &PipelineTrace)> = latest.into_values().collect();
    kept.sort_by_key(|(i, _)| *i);
    let records = kept
        .iter()
        .map(|(_, t)| {
            let pred = if t.error.is_some() { "" } else { t.final_dvq.as_str() };
            match_pair(&t.example_id, pred, &gold[t.example_id.as_str()].gold_dvq)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary = EvalSummary::from_records(&records)?;
    Ok(TraceScore {
        summary,
        records,
        duplicates,
        failed: kept.iter().filter(|(_, t)| t.error.is_some()).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_from_revised_block() {
        let reply = "### Revised DVQ:\n# Visualize BAR SELECT JOB_ID , COUNT(JOB_ID) FROM employees";
        assert_eq!(
            extract_dvq_from_reply(reply).unwrap(),
            "Visualize BAR SELECT JOB_ID , COUNT(JOB_ID) FROM employees"
        );
    }

    #[test]
    fn extract_bare_and_first_of_two() {
        assert_eq!(
            extract_dvq_from_reply("Visualize PIE SELECT a , b FROM t").unwrap(),
            "Visualize PIE SELECT a , b FROM t"
        );
        let two = "Sure.\nA: Visualize PIE SELECT a , b FROM t\n# Visualize BAR SELECT c , d FROM u";
        assert_eq!(
            extract_dvq_from_reply(two).unwrap(),
            "Visualize PIE SELECT a , b FROM t"
        );
        assert_eq!(
            extract_dvq_from_reply("```\nvisualize LINE SELECT a , b FROM t```").unwrap(),
            "visualize LINE SELECT a , b FROM t"
        );
    }

    #[test]
    fn extract_failure() {
        assert!(matches!(
            extract_dvq_from_reply("I cannot help with that.\nVisualization is hard"),
            Err(PipelineError::ExtractionFailure { .. })
        ));
    }

    #[test]
    fn trace_field_order_and_skips() {
        let e = Example {
            example_id: "e1".into(),
            nlq: "q".into(),
            gold_dvq: "Visualize BAR SELECT a , b FROM t".into(),
            db_id: "d".into(),
            chart: crate::dvq::ChartType::Bar,
            hardness: None,
        };
        let mut t = PipelineTrace::start(&e);
        t.dvq_gen = Some("x".into());
        t.final_dvq = "x".into();
        assert_eq!(
            t.to_json_line(),
            r#"{"example_id":"e1","nlq":"q","db_id":"d","dvq_gen":"x","final":"x"}"#
        );
    }
}
