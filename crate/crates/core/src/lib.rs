//! Retrieval-augmented text-to-visualization: DVQ parsing and scoring, an
//! embedding library, prompt builders, chat backends and the
//! generate → retune → debug pipeline.

pub mod dvq;
pub mod llm;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod prepare;
pub mod prompts;
pub mod schemadb;
pub mod transport;
pub mod vectorlib;

pub use dvq::{canonical_equal, decompose, parse_dvq, render_canonical, ChartType, DvqComponents, DvqError, DvqQuery};
pub use llm::{BackendKind, ChatBackend, GenerationParams, LlmError, ReplayBackend, ScriptedBackend};
pub use metrics::{evaluate_corpus, match_pair, EvalSummary, MatchRecord, MetricsError};
pub use pipeline::{extract_dvq_from_reply, Pipeline, PipelineConfig, PipelineError, PipelineTrace};
pub use prompts::{ChatMessage, Role};
pub use schemadb::{AnnotatedDatabase, DatabaseSchema, Dataset, DatasetSplit, Example};
pub use vectorlib::{cosine, Embedder, Embedding, EntryKind, LocalEmbedder, VectorLibrary};
