//! Running prompt batches against chat-completion backends.
//!
//! A [`ChatBackend`] answers one system/user request. [`HttpBackend`] talks
//! to an OpenAI-compatible `/v1/chat/completions` endpoint with retries,
//! [`MockModel`] answers offline from entity frequencies, and
//! [`CachedBackend`] puts a persistent [`ResponseCache`] in front of either.

mod cache;
mod http;
mod mock;
mod parse;
mod runner;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptError;

pub use cache::{cache_key, CachedBackend, ResponseCache};
pub use http::HttpBackend;
pub use mock::{MockConfig, MockModel};
pub use parse::{parse_answer, Verdict};
pub use runner::{
    pair_key, probe_fact, read_outcomes, run_division, PairedOutcome, ProbeOptions, ProbeOutcome,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {status}: {body}")]
    HttpError { status: u16, body: String },
    #[error("giving up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response body: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

impl ProbeError {
    /// Whether another attempt may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ProbeError::Timeout | ProbeError::Transport(_) => true,
            ProbeError::HttpError { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// One chat-completion request: a system and a user message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProbeError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProbeError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProbeError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Connection settings for an OpenAI-compatible endpoint. Requests are
/// always sent with temperature 0.0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    pub request_timeout: Duration,
    pub max_concurrent_requests: usize,
    pub retry: RetryPolicy,
    /// Bearer token, usually from `API_TOKEN`.
    pub api_token: Option<String>,
}

impl ModelEndpoint {
    pub const TEMPERATURE: f64 = 0.0;

    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        ModelEndpoint {
            base_url: base_url.into(),
            model_name: model_name.into(),
            request_timeout: Duration::from_secs(60),
            max_concurrent_requests: 8,
            retry: RetryPolicy::default(),
            api_token: None,
        }
    }
}
