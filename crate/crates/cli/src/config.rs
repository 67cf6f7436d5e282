use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use gred_core::llm::DEFAULT_CHAT_MODEL;
use gred_core::pipeline::DEFAULT_K;
use gred_core::vectorlib::{DEFAULT_LOCAL_DIM, DEFAULT_REMOTE_EMBEDDING_MODEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Local,
    Remote,
}

/// Settings read from an optional JSON file; command-line flags override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub k: usize,
    pub workers: usize,
    pub seed: u64,
    pub chat_model: String,
    pub embedder: EmbedderKind,
    pub embedding_model: String,
    pub local_dim: usize,
    pub base_url: String,
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub retune: bool,
    pub debug: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            workers: 4,
            seed: 0,
            chat_model: DEFAULT_CHAT_MODEL.into(),
            embedder: EmbedderKind::Local,
            embedding_model: DEFAULT_REMOTE_EMBEDDING_MODEL.into(),
            local_dim: DEFAULT_LOCAL_DIM,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "GRED_API_KEY".into(),
            max_in_flight: gred_core::llm::DEFAULT_MAX_IN_FLIGHT,
            timeout_secs: 60,
            max_attempts: 3,
            retune: true,
            debug: true,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.local_dim == 0 {
            bail!("local_dim must be at least 1");
        }
        if self.max_attempts == 0 {
            bail!("max_attempts must be at least 1");
        }
        Ok(())
    }

    pub fn api_key(&self) -> Result<String> {
        std::env::var(&self.api_key_env).with_context(|| {
            format!("remote backend needs a credential in ${}", self.api_key_env)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "path", rename_all = "lowercase")]
pub enum BackendSpec {
    Remote,
    Scripted(String),
    Replay(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "remote" {
            return Ok(BackendSpec::Remote);
        }
        match s.split_once(':') {
            Some(("scripted", p)) if !p.is_empty() => Ok(BackendSpec::Scripted(p.into())),
            Some(("replay", p)) if !p.is_empty() => Ok(BackendSpec::Replay(p.into())),
            _ => Err(format!(
                "expected remote, scripted:<file> or replay:<file>, got {s:?}"
            )),
        }
    }
}

impl BackendSpec {
    pub fn mode(&self) -> &'static str {
        match self {
            BackendSpec::Remote => "remote",
            BackendSpec::Scripted(_) => "scripted",
            BackendSpec::Replay(_) => "replay",
        }
    }
}
