//! Chat-completion backends.
//!
//! `RemoteChat` talks to an OpenAI-compatible endpoint. `ScriptedBackend` and
//! `ReplayBackend` answer offline and deterministically, keyed by the digest
//! of the full request or by pattern rules over the last user message.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::par::Semaphore;
use crate::prompts::{ChatMessage, Role};
use crate::schemadb::{append_json_line, read_lines, SchemaDbError};
use crate::transport::{post_with_retry, CallError, HttpRequest, HttpTransport, RetryPolicy};

pub const DEFAULT_CHAT_MODEL: &str = "gpt-3.5-turbo-0125";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_id: String,
    pub temperature: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
}

impl GenerationParams {
    /// Settings for the generate, retune and debug stages.
    pub fn pipeline(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: 0.0,
            frequency_penalty: -0.5,
            presence_penalty: -0.5,
        }
    }

    /// Settings for database annotation.
    pub fn annotation(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: 0.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Scripted,
    Replay,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Remote => "remote",
            BackendKind::Scripted => "scripted",
            BackendKind::Replay => "replay",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub backend: BackendKind,
    pub latency: Duration,
    pub attempts: u32,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("remote unavailable after {attempts} attempt(s): {last}")]
    RemoteUnavailable { attempts: u32, last: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("remote rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("no scripted reply for request {digest}")]
    ScriptMiss { digest: String },
    #[error("no recorded reply for request {digest}")]
    ReplayMiss { digest: String },
    #[error("backend returned an empty reply")]
    EmptyReply,
    #[error("invalid conversation: {0}")]
    InvalidMessages(&'static str),
    #[error("{path}: {reason}")]
    BadScript { path: PathBuf, reason: String },
    #[error("{0}")]
    Store(String),
}

impl From<CallError> for LlmError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Unavailable { attempts, last } => LlmError::RemoteUnavailable { attempts, last },
            CallError::RateLimited { attempts } => LlmError::RateLimited { attempts },
            CallError::Rejected { status, body } => LlmError::Rejected { status, body },
        }
    }
}

impl From<SchemaDbError> for LlmError {
    fn from(e: SchemaDbError) -> Self {
        LlmError::Store(e.to_string())
    }
}

pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<CompletionResult, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<CompletionResult, LlmError> {
        (**self).complete(messages, params)
    }
}

fn check_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    let Some(last) = messages.last() else {
        return Err(LlmError::InvalidMessages("no messages"));
    };
    if last.role != Role::User {
        return Err(LlmError::InvalidMessages("last message must be a user turn"));
    }
    if messages.iter().any(|m| m.content.trim().is_empty()) {
        return Err(LlmError::InvalidMessages("empty message"));
    }
    Ok(())
}

#[derive(Serialize)]
struct DigestInput<'a> {
    model: &'a str,
    temperature: f64,
    frequency_penalty: f64,
    presence_penalty: f64,
    messages: &'a [ChatMessage],
}

/// Hex SHA-256 of the canonical JSON of model, parameters and messages.
pub fn request_digest(messages: &[ChatMessage], params: &GenerationParams) -> String {
    let input = DigestInput {
        model: &params.model_id,
        temperature: params.temperature,
        frequency_penalty: params.frequency_penalty,
        presence_penalty: params.presence_penalty,
        messages,
    };
    let json = serde_json::to_vec(&input).expect("digest input serializes");
    hex::encode(Sha256::digest(&json))
}

fn finish(text: String, backend: BackendKind, started: Instant, attempts: u32) -> Result<CompletionResult, LlmError> {
    if text.trim().is_empty() {
        return Err(LlmError::EmptyReply);
    }
    Ok(CompletionResult {
        text,
        backend,
        latency: started.elapsed(),
        attempts,
    })
}

pub struct RemoteChat {
    transport: Arc<dyn HttpTransport>,
    base_url: String,
    api_key: Option<String>,
    policy: RetryPolicy,
    limit: Semaphore,
}

impl RemoteChat {
    pub fn new(
        transport: Arc<dyn HttpTransport>,
        base_url: impl Into<String>,
        api_key: Option<String>,
        max_in_flight: usize,
    ) -> Self {
        Self {
            transport,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            policy: RetryPolicy::default(),
            limit: Semaphore::new(max_in_flight),
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn request_body(messages: &[ChatMessage], params: &GenerationParams) -> serde_json::Value {
        serde_json::json!({
            "model": params.model_id,
            "messages": messages,
            "temperature": params.temperature,
            "frequency_penalty": params.frequency_penalty,
            "presence_penalty": params.presence_penalty,
        })
    }
}

impl ChatBackend for RemoteChat {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<CompletionResult, LlmError> {
        check_messages(messages)?;
        let started = Instant::now();
        let request = HttpRequest {
            url: format!("{}/chat/completions", self.base_url),
            bearer: self.api_key.clone(),
            body: Self::request_body(messages, params),
            timeout: self.policy.timeout,
        };
        let (response, attempts) = {
            let _permit = self.limit.acquire();
            post_with_retry(self.transport.as_ref(), &request, &self.policy)?
        };
        let body: serde_json::Value = serde_json::from_str(&response.body)
            .map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))?;
        finish(text.to_string(), BackendKind::Remote, started, attempts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Matcher {
    Contains(String),
    EndsWith(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Text(String),
    /// Answers with the DVQ following `### Original DVQ:` in the request.
    EchoOriginal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub matcher: Matcher,
    pub reply: Reply,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RuleFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ends_with: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reply: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    echo_original: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    rules: Vec<RuleFile>,
    #[serde(default)]
    digests: HashMap<String, String>,
}

/// Deterministic backend answering from exact request digests first, then
/// from the first rule matching the last user message.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedBackend {
    pub rules: Vec<Rule>,
    pub digests: HashMap<String, String>,
}

const ORIGINAL_MARKER: &str = "### Original DVQ:\n# ";

fn echo_original(user: &str) -> Option<String> {
    let start = user.rfind(ORIGINAL_MARKER)? + ORIGINAL_MARKER.len();
    let line = user[start..].lines().next()?.trim();
    (!line.is_empty()).then(|| line.to_string())
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, matcher: Matcher, reply: Reply) -> Self {
        self.rules.push(Rule { matcher, reply });
        self
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self, LlmError> {
        let bad = |reason: String| LlmError::BadScript {
            path: origin.to_path_buf(),
            reason,
        };
        let file: ScriptFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let mut rules = Vec::new();
        for (i, r) in file.rules.into_iter().enumerate() {
            let matcher = match (r.contains, r.ends_with) {
                (Some(p), None) => Matcher::Contains(p),
                (None, Some(p)) => Matcher::EndsWith(p),
                _ => return Err(bad(format!("rule {i}: need exactly one of contains/ends_with"))),
            };
            let reply = match (r.reply, r.echo_original) {
                (Some(t), false) => Reply::Text(t),
                (None, true) => Reply::EchoOriginal,
                _ => return Err(bad(format!("rule {i}: need exactly one of reply/echo_original"))),
            };
            rules.push(Rule { matcher, reply });
        }
        Ok(Self {
            rules,
            digests: file.digests,
        })
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::BadScript {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        let rules = self
            .rules
            .iter()
            .map(|r| {
                let mut f = RuleFile::default();
                match &r.matcher {
                    Matcher::Contains(p) => f.contains = Some(p.clone()),
                    Matcher::EndsWith(p) => f.ends_with = Some(p.clone()),
                }
                match &r.reply {
                    Reply::Text(t) => f.reply = Some(t.clone()),
                    Reply::EchoOriginal => f.echo_original = true,
                }
                f
            })
            .collect();
        let file = ScriptFile {
            rules,
            digests: self.digests.clone(),
        };
        serde_json::to_string_pretty(&file).expect("script serializes")
    }

    fn lookup(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, LlmError> {
        let digest = request_digest(messages, params);
        if let Some(reply) = self.digests.get(&digest) {
            return Ok(reply.clone());
        }
        let user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());
        for rule in &self.rules {
            let hit = match &rule.matcher {
                Matcher::Contains(p) => user.contains(p.as_str()),
                Matcher::EndsWith(p) => user.ends_with(p.as_str()),
            };
            if !hit {
                continue;
            }
            match &rule.reply {
                Reply::Text(t) => return Ok(t.clone()),
                Reply::EchoOriginal => {
                    if let Some(dvq) = echo_original(user) {
                        return Ok(dvq);
                    }
                }
            }
        }
        Err(LlmError::ScriptMiss { digest })
    }
}

impl ChatBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<CompletionResult, LlmError> {
        check_messages(messages)?;
        let started = Instant::now();
        let text = self.lookup(messages, params)?;
        finish(text, BackendKind::Scripted, started, 1)
    }
}

/// One line of a record/replay cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub digest: String,
    pub response_text: String,
    pub model_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    records: HashMap<String, ReplayRecord>,
}

impl ReplayBackend {
    /// Loads a cache file; later lines override earlier ones.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let mut records = HashMap::new();
        for (line, text) in read_lines(path)? {
            let r: ReplayRecord = serde_json::from_str(&text).map_err(|e| LlmError::BadScript {
                path: path.to_path_buf(),
                reason: format!("line {line}: {e}"),
            })?;
            records.insert(r.digest.clone(), r);
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<CompletionResult, LlmError> {
        check_messages(messages)?;
        let started = Instant::now();
        let digest = request_digest(messages, params);
        let record = self
            .records
            .get(&digest)
            .ok_or(LlmError::ReplayMiss { digest })?;
        finish(record.response_text.clone(), BackendKind::Replay, started, 1)
    }
}

/// Passes calls through and appends every successful reply to a replay cache.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    lock: Mutex<()>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<CompletionResult, LlmError> {
        let result = self.inner.complete(messages, params)?;
        let record = ReplayRecord {
            digest: request_digest(messages, params),
            response_text: result.text.clone(),
            model_id: params.model_id.clone(),
        };
        let _guard = self.lock.lock().unwrap();
        append_json_line(&self.path, &record)?;
        Ok(result)
    }
}
