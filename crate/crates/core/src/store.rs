//! Graph JSON serialization and the on-disk graph store.
//!
//! File layout:
//!
//! ```json
//! {
//!   "meta": {...},
//!   "m": 5,
//!   "nodes": [{"id": 0, "kind": "chunk", "text": "...", "source": 0,
//!              "base_embedding": [...], "questions": [{"text": "...", "embedding": [...]}]}],
//!   "S": [1.0, 0.31, ...]
//! }
//! ```
//!
//! `S` is the similarity matrix flattened row-major. Vector fields are
//! optional so a topology-only export stays readable; such files cannot be
//! loaded back into a [`GemGraph`].

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{check_similarity, GemGraph, GraphError, GraphMeta, MemoryNode, NodeKind, UtilityQuestion};
use crate::providers::Embedding;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("graph {0} not found")]
    NotFound(String),

    #[error("invalid graph id {0:?}")]
    InvalidId(String),

    #[error("graph has no id in its metadata")]
    MissingId,

    #[error("node {0} has no stored vectors (exported without vectors?)")]
    MissingVectors(usize),

    #[error("S has {got} entries, expected {expected}")]
    MatrixShape { expected: usize, got: usize },

    #[error("node {node}: question belongs to node {parent}")]
    ParentMismatch { node: usize, parent: usize },

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub kind: NodeKind,
    pub text: String,
    /// Chunk ordinal or theme index.
    pub source: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_embedding: Option<Embedding>,
    pub questions: Vec<QuestionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub meta: GraphMeta,
    pub m: usize,
    pub nodes: Vec<NodeRecord>,
    #[serde(rename = "S")]
    pub similarity: Vec<f64>,
}

impl GraphFile {
    pub fn from_graph(graph: &GemGraph, vectors: bool) -> Self {
        let nodes = graph
            .nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id,
                kind: n.kind,
                text: n.text.clone(),
                source: n.source,
                base_embedding: vectors.then(|| n.base_embedding.clone()),
                questions: n
                    .questions
                    .iter()
                    .map(|q| QuestionRecord {
                        text: q.text.clone(),
                        embedding: vectors.then(|| q.embedding.clone()),
                    })
                    .collect(),
            })
            .collect();
        Self {
            meta: graph.meta.clone(),
            m: graph.m,
            nodes,
            similarity: graph.similarity.iter().copied().collect(),
        }
    }

    pub fn into_graph(self) -> Result<GemGraph> {
        let n = self.nodes.len();
        if self.similarity.len() != n * n {
            return Err(StoreError::MatrixShape {
                expected: n * n,
                got: self.similarity.len(),
            });
        }
        let similarity = Array2::from_shape_vec((n, n), self.similarity)
            .expect("length checked against n * n");
        let mut nodes = Vec::with_capacity(n);
        for (position, r) in self.nodes.into_iter().enumerate() {
            if r.id != position {
                return Err(GraphError::IdMismatch { position, id: r.id }.into());
            }
            let id = r.id;
            let base_embedding = r.base_embedding.ok_or(StoreError::MissingVectors(id))?;
            let questions = r
                .questions
                .into_iter()
                .map(|q| {
                    Ok(UtilityQuestion {
                        text: q.text,
                        embedding: q.embedding.ok_or(StoreError::MissingVectors(id))?,
                        parent_node: id,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            nodes.push(MemoryNode {
                id,
                kind: r.kind,
                text: r.text,
                base_embedding,
                questions,
                source: r.source,
            });
        }
        let graph = GemGraph {
            nodes,
            similarity,
            m: self.m,
            meta: self.meta,
        };
        check_similarity(&graph.similarity)?;
        graph.check_invariants()?;
        Ok(graph)
    }
}

pub fn to_json(graph: &GemGraph, vectors: bool) -> String {
    serde_json::to_string(&GraphFile::from_graph(graph, vectors)).expect("graph serializes")
}

pub fn from_json(json: &str) -> std::result::Result<GemGraph, StoreError> {
    let file: GraphFile = serde_json::from_str(json).map_err(|source| StoreError::Json {
        path: PathBuf::from("<string>"),
        source,
    })?;
    file.into_graph()
}

pub fn write_graph(path: &Path, graph: &GemGraph, vectors: bool) -> Result<()> {
    let io_err = |source| StoreError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    // write then rename so concurrent readers never see a partial file
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, to_json(graph, vectors)).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn read_graph_file(path: &Path) -> Result<GraphFile> {
    let bytes = fs::read(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_graph(path: &Path) -> Result<GemGraph> {
    read_graph_file(path)?.into_graph()
}

/// Listing entry for a stored graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub graph_id: String,
    pub nodes: usize,
    pub chunks: usize,
    pub summaries: usize,
    pub meta: GraphMeta,
}

/// A directory of `<graph_id>.json` files.
#[derive(Debug, Clone)]
pub struct GraphStore {
    dir: PathBuf,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl GraphStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(self.dir.join(format!("{id}.json")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.path_of(id).map(|p| p.is_file()).unwrap_or(false)
    }

    /// Persist `graph` under its metadata id and return that id.
    pub fn save(&self, graph: &GemGraph) -> Result<String> {
        let id = graph.meta.graph_id.clone().ok_or(StoreError::MissingId)?;
        write_graph(&self.path_of(&id)?, graph, true)?;
        Ok(id)
    }

    pub fn load_file(&self, id: &str) -> Result<GraphFile> {
        let path = self.path_of(id).map_err(|_| StoreError::NotFound(id.to_string()))?;
        if !path.is_file() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        read_graph_file(&path)
    }

    pub fn load(&self, id: &str) -> Result<GemGraph> {
        self.load_file(id)?.into_graph()
    }

    /// All stored graphs, sorted by id. Unreadable files are skipped with a
    /// warning.
    pub fn list(&self) -> Result<Vec<GraphSummary>> {
        let entries = fs::read_dir(&self.dir).map_err(|source| StoreError::Io {
            path: self.dir.clone(),
            source,
        })?;
        let mut out = Vec::new();
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).filter(|s| valid_id(s)) else {
                continue;
            };
            match read_graph_file(&path) {
                Ok(file) => {
                    let summaries = file.nodes.iter().filter(|n| n.kind == NodeKind::Summary).count();
                    out.push(GraphSummary {
                        graph_id: id.to_string(),
                        nodes: file.nodes.len(),
                        chunks: file.nodes.len() - summaries,
                        summaries,
                        meta: file.meta,
                    });
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        out.sort_by(|a, b| a.graph_id.cmp(&b.graph_id));
        Ok(out)
    }
}
