//! Synthetic corpora and graphs shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use gem_core::graph::{build_graph, GemGraph, GraphMeta, MemoryNode, NodeKind, UtilityQuestion};
use gem_core::providers::{content_tokens, Embedding};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kl", "pr",
    "st", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ae", "io", "ou"];

/// `count` distinct made-up words, none of them stopwords or in `avoid`.
pub fn pseudo_words(rng: &mut ChaCha8Rng, count: usize, avoid: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.random_range(2..=4);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if rng.random_bool(0.5) {
            w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        }
        // must survive the mock's stopword filter as a single content token
        if content_tokens(&w) != [w.clone()] || !avoid.insert(w.clone()) {
            continue;
        }
        out.push(w);
    }
    out
}

/// A sentence of exactly `len` word tokens drawn from `vocab`, ending with a
/// period (so `len + 1` tokens in total).
pub fn sentence(rng: &mut ChaCha8Rng, vocab: &[String], len: usize) -> String {
    let mut words: Vec<String> = (0..len)
        .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
        .collect();
    if let Some(first) = words.first_mut() {
        let mut c = first.chars();
        if let Some(h) = c.next() {
            *first = h.to_uppercase().collect::<String>() + c.as_str();
        }
    }
    format!("{}.", words.join(" "))
}

/// A document made of topic blocks. Each topic has its own vocabulary; a few
/// shared words appear everywhere so no chunk is isolated.
#[derive(Debug, Clone)]
pub struct TopicCorpus {
    pub text: String,
    pub topics: Vec<Vec<String>>,
    pub shared: Vec<String>,
    /// Topic of each sentence in order.
    pub sentence_topics: Vec<usize>,
}

/// `sentences` sentences of 9 words (10 tokens) cycling through `topics`
/// topics in runs of `run` sentences.
pub fn topic_corpus(seed: u64, topics: usize, sentences: usize, run: usize) -> TopicCorpus {
    let mut r = rng(seed);
    let mut seen = HashSet::new();
    let shared = pseudo_words(&mut r, 4, &mut seen);
    let vocab: Vec<Vec<String>> = (0..topics)
        .map(|_| pseudo_words(&mut r, 24, &mut seen))
        .collect();
    let mut text = Vec::new();
    let mut sentence_topics = Vec::new();
    for i in 0..sentences {
        let t = (i / run) % topics;
        let mut words = vocab[t].clone();
        words.extend(shared.iter().take(1).cloned());
        text.push(sentence(&mut r, &words, 9));
        sentence_topics.push(t);
    }
    TopicCorpus {
        text: text.join(" "),
        topics: vocab,
        shared,
        sentence_topics,
    }
}

fn unit(v: Vec<f64>) -> Embedding {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Embedding(v.into_iter().map(|x| x / n).collect())
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return unit(v);
        }
    }
}

/// Random graph with `n` nodes, `m` questions each, some question embeddings
/// duplicated across nodes to create exact score ties.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize, dim: usize) -> GemGraph {
    let mut pool: Vec<Embedding> = Vec::new();
    let mut nodes = Vec::with_capacity(n);
    for id in 0..n {
        let base = random_vector(rng, dim);
        let questions = (0..m)
            .map(|j| {
                let embedding = if !pool.is_empty() && rng.random_bool(0.15) {
                    pool[rng.random_range(0..pool.len())].clone()
                } else {
                    let e = random_vector(rng, dim).midpoint(&base);
                    pool.push(e.clone());
                    e
                };
                UtilityQuestion {
                    text: format!("question {j} of node {id}"),
                    embedding,
                    parent_node: id,
                }
            })
            .collect();
        let kind = if id >= n.saturating_sub(2) && n > 4 && rng.random_bool(0.5) {
            NodeKind::Summary
        } else {
            NodeKind::Chunk
        };
        nodes.push(MemoryNode {
            id,
            kind,
            text: format!("node {id} text"),
            base_embedding: base,
            questions,
            source: id,
        });
    }
    let meta = GraphMeta {
        chunk_tokens: 100,
        ..GraphMeta::default()
    };
    build_graph(nodes, meta).expect("random graph builds")
}

/// Planted block similarity matrix with a random node order. Returns the
/// matrix and each node's block label.
pub fn planted_blocks(
    rng: &mut ChaCha8Rng,
    k: usize,
    sizes: std::ops::RangeInclusive<usize>,
    within: f64,
    across: f64,
) -> (ndarray::Array2<f64>, Vec<usize>) {
    let mut labels: Vec<usize> = (0..k)
        .flat_map(|b| std::iter::repeat_n(b, rng.random_range(sizes.clone())))
        .collect();
    labels.shuffle(rng);
    let n = labels.len();
    let s = ndarray::Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            1.0
        } else if labels[i] == labels[j] {
            within
        } else {
            across
        }
    });
    (s, labels)
}

/// Canonical form of a partition: groups sorted internally and by first member.
pub fn canonical(groups: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut g: Vec<Vec<usize>> = groups
        .iter()
        .map(|x| {
            let mut x = x.clone();
            x.sort_unstable();
            x
        })
        .collect();
    g.sort();
    g
}

/// Partition of `0..labels.len()` by label.
pub fn partition_of(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    canonical(&groups)
}
