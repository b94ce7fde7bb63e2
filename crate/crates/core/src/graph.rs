//! Memory nodes and the complete weighted similarity graph.
//!
//! Each node carries a base embedding `v_i = E(text)` and `m` utility
//! questions whose embeddings are averaged with the base embedding,
//! `v_ij = (E(q_ij) + v_i) / 2`. The directed weight from `t` to `v` is the sum
//! over `t`'s questions of `cos(v_tj, v_v)`. The stored similarity is the mean
//! of both directions divided by `m`, clamped to `[0, 1]`, with a unit
//! diagonal. When `m = 0` the directed weight is the plain base-embedding
//! cosine.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;
use crate::parallel::try_map_bounded;
use crate::providers::{Embedder, Embedding, Generator, ProviderError};

pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("provider failure while building node {node}: {source}")]
    Provider {
        node: usize,
        #[source]
        source: ProviderError,
    },

    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,

    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("a graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),

    #[error("node {node} has {got} utility questions, expected {expected}")]
    QuestionCount {
        node: usize,
        expected: usize,
        got: usize,
    },

    #[error("node at position {position} has id {id}")]
    IdMismatch { position: usize, id: usize },

    #[error("invalid similarity matrix: {0}")]
    InvalidMatrix(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Chunk,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityQuestion {
    pub text: String,
    /// Mean of the question's own embedding and the parent's base embedding.
    pub embedding: Embedding,
    pub parent_node: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryNode {
    pub id: usize,
    pub kind: NodeKind,
    pub text: String,
    pub base_embedding: Embedding,
    pub questions: Vec<UtilityQuestion>,
    /// Chunk ordinal for chunk nodes, theme index for summary nodes.
    pub source: usize,
}

/// Provenance recorded alongside a built graph.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphMeta {
    pub graph_id: Option<String>,
    pub chunk_tokens: usize,
    pub embedder_id: String,
    pub generator_id: String,
    pub created_unix: u64,
    pub theme_count: Option<usize>,
    pub distinctness: Option<f64>,
    /// Effective engine configuration used for the build.
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GemGraph {
    pub nodes: Vec<MemoryNode>,
    pub similarity: Array2<f64>,
    /// Utility questions per node.
    pub m: usize,
    pub meta: GraphMeta,
}

impl GemGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> Option<&MemoryNode> {
        self.nodes.get(id)
    }

    pub fn chunk_ids(&self) -> Vec<usize> {
        self.ids_of(NodeKind::Chunk)
    }

    pub fn summary_ids(&self) -> Vec<usize> {
        self.ids_of(NodeKind::Summary)
    }

    fn ids_of(&self, kind: NodeKind) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.kind == kind)
            .map(|n| n.id)
            .collect()
    }

    /// Similarity matrix restricted to chunk nodes, in chunk-id order.
    pub fn chunk_similarity(&self) -> Array2<f64> {
        let ids = self.chunk_ids();
        Array2::from_shape_fn((ids.len(), ids.len()), |(i, j)| {
            self.similarity[[ids[i], ids[j]]]
        })
    }

    /// Symmetry, unit diagonal, off-diagonal range and shape.
    pub fn check_invariants(&self) -> Result<()> {
        check_similarity(&self.similarity)?;
        if self.similarity.nrows() != self.nodes.len() {
            return Err(GraphError::InvalidMatrix(format!(
                "matrix is {}x{} for {} nodes",
                self.similarity.nrows(),
                self.similarity.ncols(),
                self.nodes.len()
            )));
        }
        for (position, node) in self.nodes.iter().enumerate() {
            if node.id != position {
                return Err(GraphError::IdMismatch { position, id: node.id });
            }
            if node.questions.len() != self.m {
                return Err(GraphError::QuestionCount {
                    node: node.id,
                    expected: self.m,
                    got: node.questions.len(),
                });
            }
        }
        Ok(())
    }
}

/// Validate a similarity matrix: square, symmetric within
/// [`SYMMETRY_TOLERANCE`], unit diagonal, off-diagonals in `[0, 1]`.
pub fn check_similarity(s: &Array2<f64>) -> Result<()> {
    let (rows, cols) = s.dim();
    if rows != cols {
        return Err(GraphError::InvalidMatrix(format!("not square: {rows}x{cols}")));
    }
    for i in 0..rows {
        if s[[i, i]] != 1.0 {
            return Err(GraphError::InvalidMatrix(format!(
                "diagonal entry {i} is {}",
                s[[i, i]]
            )));
        }
        for j in (i + 1)..rows {
            let (a, b) = (s[[i, j]], s[[j, i]]);
            if !(a - b).abs().le(&SYMMETRY_TOLERANCE) {
                return Err(GraphError::InvalidMatrix(format!("asymmetric at ({i}, {j})")));
            }
            if !(0.0..=1.0).contains(&a) {
                return Err(GraphError::InvalidMatrix(format!(
                    "entry ({i}, {j}) = {a} outside [0, 1]"
                )));
            }
        }
    }
    Ok(())
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(GraphError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(GraphError::ZeroVector);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Directed edge weight from `t` to `v`.
pub fn raw_weight(t: &MemoryNode, v: &MemoryNode) -> Result<f64> {
    if t.questions.is_empty() {
        return cosine(&t.base_embedding, &v.base_embedding);
    }
    t.questions
        .iter()
        .map(|q| cosine(&q.embedding, &v.base_embedding))
        .sum()
}

/// Embed `text`, generate `m` utility questions and average their embeddings
/// with the base embedding.
pub fn build_node(
    text: &str,
    id: usize,
    kind: NodeKind,
    source: usize,
    m: usize,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
) -> Result<MemoryNode> {
    let wrap = |source| GraphError::Provider { node: id, source };
    let base_embedding = embedder
        .embed(&[text.to_string()])
        .map_err(wrap)?
        .pop()
        .ok_or_else(|| wrap(ProviderError::Malformed("no embedding returned".into())))?;

    let texts = generator.generate_questions(text, m).map_err(wrap)?;
    if texts.len() != m {
        return Err(GraphError::QuestionCount {
            node: id,
            expected: m,
            got: texts.len(),
        });
    }
    let question_embeddings = if texts.is_empty() {
        Vec::new()
    } else {
        embedder.embed(&texts).map_err(wrap)?
    };
    if question_embeddings.len() != texts.len() {
        return Err(wrap(ProviderError::Malformed(format!(
            "{} question embeddings for {} questions",
            question_embeddings.len(),
            texts.len()
        ))));
    }
    let mut questions = Vec::with_capacity(m);
    for (text, e) in texts.into_iter().zip(question_embeddings) {
        if e.dim() != base_embedding.dim() {
            return Err(GraphError::DimensionMismatch(base_embedding.dim(), e.dim()));
        }
        questions.push(UtilityQuestion {
            text,
            embedding: e.midpoint(&base_embedding),
            parent_node: id,
        });
    }
    Ok(MemoryNode {
        id,
        kind,
        text: text.to_string(),
        base_embedding,
        questions,
        source,
    })
}

/// Build chunk nodes concurrently, bounded by the providers' in-flight limits.
/// Node ids start at `first_id`.
pub fn build_chunk_nodes(
    chunks: &[Chunk],
    first_id: usize,
    m: usize,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
) -> Result<Vec<MemoryNode>> {
    let workers = embedder.max_in_flight().max(generator.max_in_flight());
    try_map_bounded(chunks, workers, |i, c| {
        build_node(&c.text, first_id + i, NodeKind::Chunk, c.ordinal, m, embedder, generator)
    })
}

/// Assemble the complete similarity graph over `nodes`.
pub fn build_graph(nodes: Vec<MemoryNode>, meta: GraphMeta) -> Result<GemGraph> {
    let n = nodes.len();
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let m = nodes[0].questions.len();
    for (position, node) in nodes.iter().enumerate() {
        if node.id != position {
            return Err(GraphError::IdMismatch { position, id: node.id });
        }
        if node.questions.len() != m {
            return Err(GraphError::QuestionCount {
                node: node.id,
                expected: m,
                got: node.questions.len(),
            });
        }
    }

    let scale = 2.0 * m.max(1) as f64;
    let mut s = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = (raw_weight(&nodes[i], &nodes[j])? + raw_weight(&nodes[j], &nodes[i])?) / scale;
            let w = w.clamp(0.0, 1.0);
            s[[i, j]] = w;
            s[[j, i]] = w;
        }
    }
    Ok(GemGraph {
        nodes,
        similarity: s,
        m,
        meta,
    })
}
