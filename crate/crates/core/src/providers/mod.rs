//! Embedding and text-generation backends.
//!
//! Two families are provided: deterministic offline mocks ([`MockEmbedder`],
//! [`MockGenerator`]) and an OpenAI-compatible HTTP client ([`HttpProvider`])
//! that speaks the `/embeddings` and `/chat/completions` wire protocol.

mod http;
mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpProvider, QUESTION_PROMPT, SUMMARY_PROMPT};
pub use mock::{content_tokens, MockEmbedder, MockGenerator, DEFAULT_MOCK_DIMENSION};

/// A dense text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Componentwise mean of two embeddings of equal dimension.
    pub fn midpoint(&self, other: &Embedding) -> Embedding {
        debug_assert_eq!(self.dim(), other.dim());
        Embedding(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a + b) / 2.0)
                .collect(),
        )
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Embedding(v)
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("invalid input at index {index}: {reason}")]
    InvalidInput { index: usize, reason: String },

    #[error("request for inputs {batch:?} failed after {attempts} attempt(s): {message}")]
    Request {
        batch: Vec<usize>,
        attempts: u32,
        message: String,
    },

    #[error("malformed provider response: {0}")]
    Malformed(String),

    #[error("embedding dimension changed from {expected} to {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("provider configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ProviderError>;

/// The text embedding function.
pub trait Embedder: Send + Sync {
    fn id(&self) -> String;

    /// Embed every text; output index `i` corresponds to input index `i`.
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>>;

    /// Upper bound on concurrent calls the engine should issue.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Question generation, summarization and answering.
pub trait Generator: Send + Sync {
    fn id(&self) -> String;

    /// Exactly `m` utility questions answerable from `chunk_text`.
    fn generate_questions(&self, chunk_text: &str, m: usize) -> Result<Vec<String>>;

    /// One summary of `texts`, at most `max_tokens` tokens long.
    fn summarize(&self, texts: &[String], max_tokens: usize) -> Result<String>;

    /// Answer `question` from `context`. With `options`, the reply is exactly one
    /// of them.
    fn answer(&self, question: &str, context: &[String], options: Option<&[String]>)
        -> Result<String>;

    fn max_in_flight(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry_count: u32,
    /// Base delay for exponential backoff between retries.
    pub backoff_ms: u64,
    /// Texts per `/embeddings` request.
    pub batch_size: usize,
    /// Mock embedding dimension.
    pub dimension: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: None,
            model_name: String::new(),
            api_key_env: None,
            max_in_flight: 4,
            timeout_secs: 60,
            retry_count: 3,
            backoff_ms: 500,
            batch_size: 64,
            dimension: DEFAULT_MOCK_DIMENSION,
        }
    }
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn http(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Http,
            endpoint: Some(endpoint.into()),
            model_name: model_name.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight < 1 {
            return Err(ProviderError::Config("max_in_flight must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(ProviderError::Config("batch_size must be at least 1".into()));
        }
        match self.kind {
            ProviderKind::Mock if self.dimension < 1 => {
                Err(ProviderError::Config("mock dimension must be at least 1".into()))
            }
            ProviderKind::Http if self.endpoint.is_none() => {
                Err(ProviderError::Config("http provider needs an endpoint".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn embedder_from_config(config: &ProviderConfig) -> Result<Arc<dyn Embedder>> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::Mock => Arc::new(MockEmbedder::new(config.dimension)),
        ProviderKind::Http => Arc::new(HttpProvider::new(config.clone())?),
    })
}

pub fn generator_from_config(config: &ProviderConfig) -> Result<Arc<dyn Generator>> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::Mock => Arc::new(MockGenerator::new()),
        ProviderKind::Http => Arc::new(HttpProvider::new(config.clone())?),
    })
}

/// Reject empty or whitespace-only inputs before they reach a backend.
pub(crate) fn check_texts(texts: &[String]) -> Result<()> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidInput {
            index: 0,
            reason: "no texts given".into(),
        });
    }
    for (index, t) in texts.iter().enumerate() {
        if t.trim().is_empty() {
            return Err(ProviderError::InvalidInput {
                index,
                reason: "empty text".into(),
            });
        }
    }
    Ok(())
}
