//! Deterministic offline providers.
//!
//! The embedder is a hashed bag of words: every content token is hashed into
//! one of `dimension` buckets, counts are accumulated and the vector is
//! L2-normalized. Cosine similarity between two mock embeddings therefore
//! tracks lexical overlap, and word order never matters.

use std::collections::{HashMap, HashSet};

use super::{check_texts, Embedder, Embedding, Generator, ProviderError, Result};
use crate::corpus::{tokenize, truncate_tokens};

pub const DEFAULT_MOCK_DIMENSION: usize = 256;

const QUESTION_TEMPLATE: (&str, &str) = ("What does the passage say about ", "?");

// Function words plus every word of the question template, so generated
// questions embed to their topic token alone.
const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has",
    "have", "he", "her", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "me",
    "my", "no", "not", "of", "on", "or", "our", "passage", "s", "say", "she", "so", "than",
    "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "to",
    "up", "us", "was", "we", "were", "what", "when", "where", "which", "who", "whom", "why",
    "will", "with", "would", "you", "your",
];

fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

fn lowercase_words(text: &str) -> Vec<String> {
    tokenize(text)
        .tokens
        .into_iter()
        .filter(|t| t.chars().next().is_some_and(char::is_alphanumeric))
        .map(|t| t.to_lowercase())
        .collect()
}

/// Lowercased word tokens of `text` with stopwords removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    lowercase_words(text)
        .into_iter()
        .filter(|w| !is_stopword(w))
        .collect()
}

/// Tokens used for hashing: content words, else any words, else any tokens.
fn embedding_tokens(text: &str) -> Vec<String> {
    let content = content_tokens(text);
    if !content.is_empty() {
        return content;
    }
    let words = lowercase_words(text);
    if !words.is_empty() {
        return words;
    }
    tokenize(text).tokens
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 1, "mock embedding dimension must be positive");
        Self { dimension }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Bucket a token is hashed into.
    pub fn bucket_of(&self, token: &str) -> usize {
        (fnv1a(token.to_lowercase().as_bytes()) % self.dimension as u64) as usize
    }

    fn embed_one(&self, text: &str) -> Embedding {
        let mut counts = vec![0.0f64; self.dimension];
        for token in embedding_tokens(text) {
            counts[self.bucket_of(&token)] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        for c in &mut counts {
            *c /= norm;
        }
        Embedding(counts)
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIMENSION)
    }
}

impl Embedder for MockEmbedder {
    fn id(&self) -> String {
        format!("mock-bow-{}", self.dimension)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        check_texts(texts)?;
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn max_in_flight(&self) -> usize {
        8
    }
}

/// Template questions, first-sentence summaries and overlap-based answers.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator;

impl MockGenerator {
    pub fn new() -> Self {
        Self
    }
}

/// Distinct tokens ordered by frequency, ties by first occurrence.
fn by_frequency(tokens: Vec<String>) -> Vec<String> {
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for (pos, t) in tokens.into_iter().enumerate() {
        counts.entry(t).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<_> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    ranked.into_iter().map(|(t, _)| t).collect()
}

fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            if at_boundary {
                return &text[..i + c.len_utf8()];
            }
        }
    }
    text
}

fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        let s = first_sentence(rest);
        out.push(s);
        rest = rest[s.len()..].trim_start();
    }
    out
}

fn overlap(a: &HashSet<String>, text: &str) -> usize {
    content_tokens(text)
        .into_iter()
        .collect::<HashSet<_>>()
        .intersection(a)
        .count()
}

/// Index of the maximum score, ties resolved to the lowest index.
fn argmax_first(scores: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

impl Generator for MockGenerator {
    fn id(&self) -> String {
        "mock-template".to_string()
    }

    fn generate_questions(&self, chunk_text: &str, m: usize) -> Result<Vec<String>> {
        if m == 0 {
            return Ok(Vec::new());
        }
        let mut topics = by_frequency(content_tokens(chunk_text));
        if topics.is_empty() {
            topics = by_frequency(lowercase_words(chunk_text));
        }
        if topics.is_empty() {
            topics.push("this text".to_string());
        }
        let (prefix, suffix) = QUESTION_TEMPLATE;
        Ok(topics
            .iter()
            .cycle()
            .take(m)
            .map(|t| format!("{prefix}{t}{suffix}"))
            .collect())
    }

    fn summarize(&self, texts: &[String], max_tokens: usize) -> Result<String> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidInput {
                index: 0,
                reason: "nothing to summarize".into(),
            });
        }
        let joined = texts
            .iter()
            .map(|t| first_sentence(t))
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(truncate_tokens(&joined, max_tokens).to_string())
    }

    fn answer(
        &self,
        question: &str,
        context: &[String],
        options: Option<&[String]>,
    ) -> Result<String> {
        if context.is_empty() {
            return Err(ProviderError::InvalidInput {
                index: 0,
                reason: "empty context".into(),
            });
        }
        match options {
            Some(options) => {
                if options.is_empty() {
                    return Err(ProviderError::InvalidInput {
                        index: 0,
                        reason: "empty option list".into(),
                    });
                }
                let context_tokens: HashSet<String> =
                    context.iter().flat_map(|c| content_tokens(c)).collect();
                let best = argmax_first(options.iter().map(|o| overlap(&context_tokens, o)))
                    .unwrap_or(0);
                Ok(options[best].clone())
            }
            None => {
                let question_tokens: HashSet<String> =
                    content_tokens(question).into_iter().collect();
                let candidates: Vec<&str> =
                    context.iter().flat_map(|c| sentences(c)).collect();
                let best = argmax_first(
                    candidates.iter().map(|s| overlap(&question_tokens, s)),
                );
                Ok(best.map(|i| candidates[i].to_string()).unwrap_or_default())
            }
        }
    }

    fn max_in_flight(&self) -> usize {
        8
    }
}
