//! Budgeted context selection.
//!
//! `GemGreedy` ranks every utility question in the graph by cosine similarity
//! to the prompt embedding and walks that ranking, adding each question's
//! parent node unless it is already selected, until the budget is met.
//! `GemBestFirst` seeds with the parent of the best question and then grows
//! the context by a blend of edge weight to the selected set and prompt
//! similarity; with `edge_bias = 0` it selects exactly what `GemGreedy` does.
//! `EmbedBaseline` ranks chunk nodes by base-embedding cosine only.
//!
//! Ties in similarity resolve to the lower global question index, which also
//! orders by node id. Graphs built with zero questions per node use each
//! node's base embedding as its single pseudo-question.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::token_count;
use crate::graph::{cosine, GemGraph, GraphError, NodeKind};
use crate::providers::{Embedder, Embedding, ProviderError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("budget must be at least 1")]
    InvalidBudget,

    #[error("edge bias {0} outside [0, 1]")]
    InvalidEdgeBias(f64),

    #[error("embedding the prompt failed: {0}")]
    Provider(#[from] ProviderError),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("node {0} is not in the graph")]
    UnknownNode(usize),
}

pub type Result<T> = std::result::Result<T, RetrievalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    GemGreedy,
    GemBestFirst,
    EmbedBaseline,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gem_greedy" => Ok(Self::GemGreedy),
            "gem_best_first" => Ok(Self::GemBestFirst),
            "embed_baseline" => Ok(Self::EmbedBaseline),
            other => Err(format!(
                "unknown strategy {other:?} (expected gem_greedy, gem_best_first or embed_baseline)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Maximum number of context nodes.
    pub budget: usize,
    pub strategy: Strategy,
    /// Weight of graph edges against prompt similarity (best-first only).
    pub edge_bias: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            budget: 4,
            strategy: Strategy::GemGreedy,
            edge_bias: 0.0,
        }
    }
}

impl RetrievalConfig {
    pub fn new(budget: usize, strategy: Strategy) -> Self {
        Self {
            budget,
            strategy,
            edge_bias: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.budget < 1 {
            return Err(RetrievalError::InvalidBudget);
        }
        if !(0.0..=1.0).contains(&self.edge_bias) {
            return Err(RetrievalError::InvalidEdgeBias(self.edge_bias));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedQuestion {
    pub node_id: usize,
    /// `None` when the node was matched on its base embedding.
    pub question: Option<String>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceAction {
    Accepted,
    SkippedDuplicate,
    SkippedTokenCeiling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub node_id: usize,
    /// Global question index, when a question drove this step.
    pub question_index: Option<usize>,
    pub score: f64,
    pub action: TraceAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Selected nodes in selection order.
    pub node_ids: Vec<usize>,
    pub matched_questions: Vec<MatchedQuestion>,
    pub scores: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    /// The budget exceeded the number of eligible nodes.
    pub truncated_budget: bool,
}

impl RetrievalResult {
    fn empty() -> Self {
        Self {
            node_ids: Vec::new(),
            matched_questions: Vec::new(),
            scores: Vec::new(),
            trace: Vec::new(),
            truncated_budget: false,
        }
    }

    fn accept(&mut self, node_id: usize, question: Option<String>, question_index: Option<usize>, score: f64) {
        self.node_ids.push(node_id);
        self.scores.push(score);
        self.matched_questions.push(MatchedQuestion {
            node_id,
            question,
            score,
        });
        self.trace.push(TraceEntry {
            node_id,
            question_index,
            score,
            action: TraceAction::Accepted,
        });
    }

    fn skip(&mut self, node_id: usize, question_index: Option<usize>, score: f64, action: TraceAction) {
        self.trace.push(TraceEntry {
            node_id,
            question_index,
            score,
            action,
        });
    }
}

/// One scored retrieval key: a utility question, or a base embedding standing
/// in for a node without questions.
#[derive(Debug, Clone)]
struct ScoredKey {
    index: usize,
    node_id: usize,
    question: Option<String>,
    score: f64,
}

fn score_keys(graph: &GemGraph, prompt: &Embedding) -> Result<Vec<ScoredKey>> {
    let mut keys = Vec::new();
    for node in &graph.nodes {
        if node.questions.is_empty() {
            keys.push(ScoredKey {
                index: keys.len(),
                node_id: node.id,
                question: None,
                score: cosine(prompt, &node.base_embedding)?,
            });
        }
        for q in &node.questions {
            keys.push(ScoredKey {
                index: keys.len(),
                node_id: node.id,
                question: Some(q.text.clone()),
                score: cosine(prompt, &q.embedding)?,
            });
        }
    }
    Ok(keys)
}

fn by_score(a: &ScoredKey, b: &ScoredKey) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

/// Caps total context at `budget * chunk_tokens` tokens when the chunk size is
/// known.
struct TokenCeiling {
    limit: Option<usize>,
    used: usize,
    counts: Vec<usize>,
}

impl TokenCeiling {
    fn new(graph: &GemGraph, budget: usize) -> Self {
        let t = graph.meta.chunk_tokens;
        Self {
            limit: (t > 0).then(|| budget.saturating_mul(t)),
            used: 0,
            counts: graph.nodes.iter().map(|n| token_count(&n.text)).collect(),
        }
    }

    fn try_take(&mut self, node_id: usize) -> bool {
        let next = self.used + self.counts[node_id];
        if self.limit.is_some_and(|limit| next > limit) {
            return false;
        }
        self.used = next;
        true
    }
}

fn greedy(graph: &GemGraph, prompt: &Embedding, budget: usize) -> Result<RetrievalResult> {
    let mut keys = score_keys(graph, prompt)?;
    keys.sort_by(by_score);
    let mut out = RetrievalResult::empty();
    let mut ceiling = TokenCeiling::new(graph, budget);
    let mut taken = HashSet::new();
    for key in keys {
        if out.node_ids.len() >= budget {
            break;
        }
        if taken.contains(&key.node_id) {
            out.skip(key.node_id, Some(key.index), key.score, TraceAction::SkippedDuplicate);
            continue;
        }
        taken.insert(key.node_id);
        if !ceiling.try_take(key.node_id) {
            out.skip(key.node_id, Some(key.index), key.score, TraceAction::SkippedTokenCeiling);
            continue;
        }
        out.accept(key.node_id, key.question, Some(key.index), key.score);
    }
    Ok(out)
}

fn best_first(
    graph: &GemGraph,
    prompt: &Embedding,
    budget: usize,
    edge_bias: f64,
) -> Result<RetrievalResult> {
    let n = graph.len();
    let mut best: Vec<Option<ScoredKey>> = vec![None; n];
    for key in score_keys(graph, prompt)? {
        let slot = &mut best[key.node_id];
        if slot.as_ref().is_none_or(|b| by_score(&key, b).is_lt()) {
            *slot = Some(key);
        }
    }
    let best: Vec<ScoredKey> = best
        .into_iter()
        .map(|k| k.expect("every node contributes at least one key"))
        .collect();

    let mut out = RetrievalResult::empty();
    let mut ceiling = TokenCeiling::new(graph, budget);
    let mut open: Vec<bool> = vec![true; n];
    let mut edge_to_selected: Vec<f64> = vec![0.0; n];
    let mut first = true;

    while out.node_ids.len() < budget {
        let mut pick: Option<(usize, f64)> = None;
        for (id, key) in best.iter().enumerate() {
            if !open[id] {
                continue;
            }
            let priority = if first {
                key.score
            } else {
                edge_bias * edge_to_selected[id] + (1.0 - edge_bias) * key.score
            };
            let better = match pick {
                None => true,
                Some((p, pp)) => priority
                    .total_cmp(&pp)
                    .then(best[p].index.cmp(&key.index))
                    .is_gt(),
            };
            if better {
                pick = Some((id, priority));
            }
        }
        let Some((id, priority)) = pick else { break };
        open[id] = false;
        let key = &best[id];
        if !ceiling.try_take(id) {
            out.skip(id, Some(key.index), priority, TraceAction::SkippedTokenCeiling);
            continue;
        }
        out.accept(id, key.question.clone(), Some(key.index), priority);
        first = false;
        for (other, e) in edge_to_selected.iter_mut().enumerate() {
            *e = e.max(graph.similarity[[other, id]]);
        }
    }
    Ok(out)
}

fn embed_baseline(graph: &GemGraph, prompt: &Embedding, budget: usize) -> Result<RetrievalResult> {
    let mut ranked = Vec::new();
    for node in graph.nodes.iter().filter(|n| n.kind == NodeKind::Chunk) {
        ranked.push((node.id, cosine(prompt, &node.base_embedding)?));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = RetrievalResult::empty();
    let mut ceiling = TokenCeiling::new(graph, budget);
    for (id, score) in ranked {
        if out.node_ids.len() >= budget {
            break;
        }
        if !ceiling.try_take(id) {
            out.skip(id, None, score, TraceAction::SkippedTokenCeiling);
            continue;
        }
        out.accept(id, None, None, score);
    }
    Ok(out)
}

/// Select context for an already-embedded prompt.
pub fn retrieve_embedded(
    graph: &GemGraph,
    prompt: &Embedding,
    config: &RetrievalConfig,
) -> Result<RetrievalResult> {
    config.validate()?;
    let eligible = match config.strategy {
        Strategy::EmbedBaseline => graph.chunk_ids().len(),
        _ => graph.len(),
    };
    let mut result = match config.strategy {
        Strategy::GemGreedy => greedy(graph, prompt, config.budget)?,
        Strategy::GemBestFirst => best_first(graph, prompt, config.budget, config.edge_bias)?,
        Strategy::EmbedBaseline => embed_baseline(graph, prompt, config.budget)?,
    };
    result.truncated_budget = config.budget > eligible;
    Ok(result)
}

/// Embed `prompt` and select context from `graph`.
pub fn retrieve(
    graph: &GemGraph,
    prompt: &str,
    config: &RetrievalConfig,
    embedder: &dyn Embedder,
) -> Result<RetrievalResult> {
    config.validate()?;
    let prompt_embedding = embedder
        .embed(&[prompt.to_string()])?
        .pop()
        .ok_or_else(|| ProviderError::Malformed("no prompt embedding returned".into()))?;
    retrieve_embedded(graph, &prompt_embedding, config)
}

fn marker(graph: &GemGraph, position: usize, id: usize) -> Result<String> {
    let node = graph.node(id).ok_or(RetrievalError::UnknownNode(id))?;
    let label = match node.kind {
        NodeKind::Chunk => "chunk",
        NodeKind::Summary => "summary",
    };
    Ok(format!("[source {}: {label} {}]", position + 1, node.source))
}

/// Selected node texts in selection order, each preceded by a
/// `[source k: chunk i]` or `[source k: summary j]` marker, separated by blank
/// lines.
pub fn assemble_context(graph: &GemGraph, result: &RetrievalResult) -> Result<String> {
    let parts = result
        .node_ids
        .iter()
        .enumerate()
        .map(|(k, &id)| Ok(format!("{}\n{}", marker(graph, k, id)?, graph.nodes[id].text)))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.join("\n\n"))
}

/// Texts of the selected nodes, in selection order.
pub fn context_texts(graph: &GemGraph, result: &RetrievalResult) -> Result<Vec<String>> {
    result
        .node_ids
        .iter()
        .map(|&id| {
            graph
                .node(id)
                .map(|n| n.text.clone())
                .ok_or(RetrievalError::UnknownNode(id))
        })
        .collect()
}
