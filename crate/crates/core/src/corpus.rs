//! Tokenization and fixed-size chunking.
//!
//! A token is either a maximal run of alphanumeric characters (apostrophes are
//! allowed between two alphanumerics, so `don't` is one token) or a single
//! non-whitespace punctuation character. Offsets are byte offsets into the
//! source string, so `&source[start..end]` is always a valid slice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChunkError {
    #[error("invalid chunk size {0}: must be at least 1 token")]
    InvalidChunkSize(usize),
}

/// Tokens of a source string together with their byte spans.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub ordinal: usize,
    pub text: String,
    pub token_count: usize,
    pub char_span: (usize, usize),
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

pub fn tokenize(text: &str) -> TokenizedText {
    let mut out = TokenizedText::default();
    let mut chars = text.char_indices().peekable();

    while let Some((start, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        if !c.is_alphanumeric() {
            out.tokens.push(c.to_string());
            out.offsets.push((start, start + c.len_utf8()));
            continue;
        }

        let mut end = start + c.len_utf8();
        while let Some(&(pos, next)) = chars.peek() {
            if next.is_alphanumeric() {
                end = pos + next.len_utf8();
                chars.next();
            } else if is_apostrophe(next) {
                // Only consume the apostrophe when a letter or digit follows it.
                let after = text[pos + next.len_utf8()..].chars().next();
                match after {
                    Some(a) if a.is_alphanumeric() => {
                        chars.next();
                        end = pos + next.len_utf8();
                    }
                    _ => break,
                }
            } else {
                break;
            }
        }
        out.tokens.push(text[start..end].to_string());
        out.offsets.push((start, end));
    }
    out
}

/// Number of tokens in `text` under [`tokenize`].
pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

/// Cut `text` after its first `max_tokens` tokens, keeping the original spelling
/// and spacing of the retained prefix.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let tokenized = tokenize(text);
    if tokenized.len() <= max_tokens {
        return text.trim();
    }
    if max_tokens == 0 {
        return "";
    }
    let (start, _) = tokenized.offsets[0];
    let (_, end) = tokenized.offsets[max_tokens - 1];
    &text[start..end]
}

/// Split `text` into consecutive chunks of `chunk_tokens` tokens. The final chunk
/// may be shorter; chunk boundaries always fall between tokens.
pub fn chunk(text: &str, chunk_tokens: usize) -> Result<Vec<Chunk>, ChunkError> {
    if chunk_tokens < 1 {
        return Err(ChunkError::InvalidChunkSize(chunk_tokens));
    }
    let tokenized = tokenize(text);
    let chunks = tokenized
        .offsets
        .chunks(chunk_tokens)
        .enumerate()
        .map(|(ordinal, spans)| {
            let start = spans[0].0;
            let end = spans[spans.len() - 1].1;
            Chunk {
                ordinal,
                text: text[start..end].to_string(),
                token_count: spans.len(),
                char_span: (start, end),
            }
        })
        .collect();
    Ok(chunks)
}
