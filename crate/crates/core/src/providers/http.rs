//! OpenAI-compatible HTTP backend.
//!
//! Embeddings go to `POST {endpoint}/embeddings`, everything else to
//! `POST {endpoint}/chat/completions`. Requests are bounded by
//! `max_in_flight` per provider instance and retried with exponential backoff
//! on transport errors, 429 and 5xx responses.

use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{check_texts, Embedder, Embedding, Generator, ProviderConfig, ProviderError, Result};
use crate::corpus::truncate_tokens;

/// Prompt for utility questions; `{m}` and `{passage}` are substituted.
pub const QUESTION_PROMPT: &str = "Write exactly {m} questions that can be answered solely \
from the passage below. Number them 1. to {m}., one question per line, and output nothing \
else.\n\nPassage:\n{passage}";

/// Prompt for summary nodes; `{max_tokens}` and `{passages}` are substituted.
pub const SUMMARY_PROMPT: &str = "Summarize the high-level information shared by the \
following passages in at most {max_tokens} words. Output only the summary.\n\n{passages}";

const ANSWER_PROMPT: &str = "Answer the question using the context.\n\nContext:\n{context}\
\n\nQuestion: {question}";

struct Semaphore {
    available: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.released.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.released.notify_one();
    }
}

pub struct HttpProvider {
    config: ProviderConfig,
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
    dimension: OnceLock<usize>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.config.model_name)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        config.validate()?;
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| ProviderError::Config("missing endpoint".into()))?
            .trim_end_matches('/')
            .to_string();
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        let in_flight = Semaphore::new(config.max_in_flight);
        Ok(Self {
            config,
            endpoint,
            api_key,
            client,
            in_flight,
            dimension: OnceLock::new(),
        })
    }

    fn post_once(&self, path: &str, body: &Value) -> std::result::Result<Value, Attempt> {
        let _permit = self.in_flight.acquire();
        let mut req = self.client.post(format!("{}/{path}", self.endpoint)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp
                .json::<Value>()
                .map_err(|e| Attempt::Fatal(format!("invalid JSON body: {e}")));
        }
        let text = resp.text().unwrap_or_default();
        let message = format!("HTTP {status}: {text}");
        if status.as_u16() == 429 || status.is_server_error() {
            Err(Attempt::Retry(message))
        } else {
            Err(Attempt::Fatal(message))
        }
    }

    /// POST with retries; `batch` names the input indices for error reporting.
    fn post(&self, path: &str, body: &Value, batch: &[usize]) -> Result<Value> {
        let max_attempts = self.config.retry_count + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(path, body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Retry(message)) if attempt < max_attempts => {
                    let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::warn!("{path} attempt {attempt} failed ({message}); retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(Attempt::Retry(message)) | Err(Attempt::Fatal(message)) => {
                    return Err(ProviderError::Request {
                        batch: batch.to_vec(),
                        attempts: attempt,
                        message,
                    })
                }
            }
        }
    }

    fn chat(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let value = self.post("chat/completions", &body, &[0])?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| ProviderError::Malformed(format!("chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Malformed("chat response has no content".into()))
    }

    fn check_dimension(&self, got: usize) -> Result<()> {
        let expected = *self.dimension.get_or_init(|| got);
        if expected != got {
            return Err(ProviderError::DimensionMismatch { expected, got });
        }
        Ok(())
    }
}

/// Parse `1. question` / `2) question` lines.
pub(crate) fn parse_numbered(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim();
            let digits = line.find(|c: char| !c.is_ascii_digit())?;
            if digits == 0 {
                return None;
            }
            let rest = line[digits..].strip_prefix(['.', ')', ':'])?.trim();
            (!rest.is_empty()).then(|| rest.to_string())
        })
        .collect()
}

/// Exactly `m` questions: truncate, or pad by repeating the last one.
pub(crate) fn fit_questions(mut questions: Vec<String>, m: usize) -> Option<Vec<String>> {
    let last = questions.last()?.clone();
    questions.truncate(m);
    let mut k = 2;
    while questions.len() < m {
        questions.push(format!("{last} ({k})"));
        k += 1;
    }
    Some(questions)
}

fn normalize(s: &str) -> String {
    s.trim()
        .trim_end_matches(['.', '!'])
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Map a free-form reply to one of `options`.
pub(crate) fn match_option(reply: &str, options: &[String]) -> usize {
    let norm = normalize(reply);
    if let Some(i) = options.iter().position(|o| normalize(o) == norm) {
        return i;
    }
    let head = norm
        .trim_start_matches(['(', '['])
        .chars()
        .next()
        .filter(|c| c.is_ascii_lowercase());
    if let Some(letter) = head {
        let idx = (letter as u8 - b'a') as usize;
        let after = norm.trim_start_matches(['(', '[']).chars().nth(1);
        if idx < options.len() && after.is_none_or(|c| matches!(c, ')' | ']' | '.' | ':')) {
            return idx;
        }
    }
    let reply_tokens: std::collections::HashSet<String> =
        super::content_tokens(reply).into_iter().collect();
    let mut best = (0, 0);
    for (i, o) in options.iter().enumerate() {
        let score = super::content_tokens(o)
            .into_iter()
            .filter(|t| reply_tokens.contains(t))
            .count();
        if score > best.1 {
            best = (i, score);
        }
    }
    best.0
}

impl Embedder for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.config.model_name)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        check_texts(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for (b, batch) in texts.chunks(self.config.batch_size).enumerate() {
            let offset = b * self.config.batch_size;
            let indices: Vec<usize> = (offset..offset + batch.len()).collect();
            let body = json!({ "model": self.config.model_name, "input": batch });
            let value = self.post("embeddings", &body, &indices)?;
            let mut parsed: EmbeddingResponse = serde_json::from_value(value)
                .map_err(|e| ProviderError::Malformed(format!("embedding response: {e}")))?;
            if parsed.data.len() != batch.len() {
                return Err(ProviderError::Malformed(format!(
                    "expected {} embeddings, got {}",
                    batch.len(),
                    parsed.data.len()
                )));
            }
            if parsed.data.iter().all(|d| d.index.is_some()) {
                parsed.data.sort_by_key(|d| d.index);
            }
            for datum in parsed.data {
                self.check_dimension(datum.embedding.len())?;
                out.push(Embedding(datum.embedding));
            }
        }
        Ok(out)
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }
}

impl Generator for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.config.model_name)
    }

    fn generate_questions(&self, chunk_text: &str, m: usize) -> Result<Vec<String>> {
        if m == 0 {
            return Ok(Vec::new());
        }
        let prompt = QUESTION_PROMPT
            .replace("{m}", &m.to_string())
            .replace("{passage}", chunk_text);
        let mut parsed = parse_numbered(&self.chat(&prompt)?);
        if parsed.len() < m {
            let retry = parse_numbered(&self.chat(&prompt)?);
            if retry.len() > parsed.len() {
                parsed = retry;
            }
        }
        fit_questions(parsed, m)
            .ok_or_else(|| ProviderError::Malformed("no numbered questions in reply".into()))
    }

    fn summarize(&self, texts: &[String], max_tokens: usize) -> Result<String> {
        check_texts(texts)?;
        let passages = texts
            .iter()
            .enumerate()
            .map(|(i, t)| format!("Passage {}:\n{t}", i + 1))
            .collect::<Vec<_>>()
            .join("\n\n");
        let prompt = SUMMARY_PROMPT
            .replace("{max_tokens}", &max_tokens.to_string())
            .replace("{passages}", &passages);
        let reply = self.chat(&prompt)?;
        Ok(truncate_tokens(&reply, max_tokens).to_string())
    }

    fn answer(
        &self,
        question: &str,
        context: &[String],
        options: Option<&[String]>,
    ) -> Result<String> {
        check_texts(context)?;
        let mut prompt = ANSWER_PROMPT
            .replace("{context}", &context.join("\n\n"))
            .replace("{question}", question);
        if let Some(options) = options {
            if options.is_empty() {
                return Err(ProviderError::InvalidInput {
                    index: 0,
                    reason: "empty option list".into(),
                });
            }
            prompt.push_str("\n\nOptions:\n");
            for (i, o) in options.iter().enumerate() {
                prompt.push_str(&format!("{}. {o}\n", (b'A' + i as u8) as char));
            }
            prompt.push_str("\nReply with the text of the single correct option only.");
            let reply = self.chat(&prompt)?;
            return Ok(options[match_option(&reply, options)].clone());
        }
        Ok(self.chat(&prompt)?.trim().to_string())
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }
}
