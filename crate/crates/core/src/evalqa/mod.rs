//! QA evaluation: datasets, metrics, end-to-end runs and the summary-node
//! fraction sweep.

mod dataset;
mod metrics;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    default_sidecar, load_dataset, write_simple, Dataset, DatasetError, DatasetFormat, Document,
    Gold, QaRecord,
};
pub use metrics::{exact_match, max_f1, normalize_answer, spearman, token_f1};

use crate::engine::Engine;
use crate::graph::{GemGraph, NodeKind};
use crate::parallel::try_map_bounded;
use crate::providers::{Embedder, Generator, ProviderError};
use crate::retrieval::{context_texts, retrieve, RetrievalConfig, RetrievalError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("record {index}: retrieval failed: {source}")]
    Retrieval {
        index: usize,
        #[source]
        source: RetrievalError,
    },

    #[error("record {index}: answering failed: {source}")]
    Answer {
        index: usize,
        #[source]
        source: ProviderError,
    },

    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("components list must be sorted ascending")]
    UnsortedComponents,

    #[error("query {index}: no document {doc_id:?}")]
    UnknownDocument { index: usize, doc_id: String },

    #[error("building {doc_id}: {source}")]
    Build {
        doc_id: String,
        #[source]
        source: Box<crate::Error>,
    },
}

impl EvalError {
    pub fn is_provider_failure(&self) -> bool {
        match self {
            EvalError::Answer { .. } => true,
            EvalError::Retrieval { source, .. } => matches!(source, RetrievalError::Provider(_)),
            EvalError::Build { source, .. } => source.is_provider_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Leave records whose document has no graph out of every denominator
    /// instead of scoring them as wrong.
    pub skip_missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub index: usize,
    pub doc_id: String,
    pub node_ids: Vec<usize>,
    pub answer: Option<String>,
    /// Multiple-choice records only.
    pub correct: Option<bool>,
    /// Free-text records only.
    pub f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub evaluated: usize,
    pub missing: usize,
    /// Over multiple-choice records; `None` when there are none.
    pub accuracy: Option<f64>,
    /// Over multiple-choice records flagged hard.
    pub hard_accuracy: Option<f64>,
    /// Mean best token F1 over free-text records.
    pub f1: Option<f64>,
    /// Share of all returned nodes that are summary nodes.
    pub eigen_fraction: f64,
    pub returned_nodes: usize,
    pub summary_nodes: usize,
    pub per_record: Vec<RecordOutcome>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn evaluate_record(
    index: usize,
    record: &QaRecord,
    graph: &GemGraph,
    config: &RetrievalConfig,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
) -> Result<RecordOutcome> {
    record
        .validate(index)
        .map_err(|e| EvalError::InvalidRecord { index, reason: e.to_string() })?;
    let retrieval = retrieve(graph, &record.question, config, embedder)
        .map_err(|source| EvalError::Retrieval { index, source })?;
    let context =
        context_texts(graph, &retrieval).map_err(|source| EvalError::Retrieval { index, source })?;
    let answer = generator
        .answer(&record.question, &context, record.options.as_deref())
        .map_err(|source| EvalError::Answer { index, source })?;
    let (correct, f1) = match &record.gold {
        Gold::Index(_) => {
            let gold = record.gold_option().expect("validated");
            (Some(exact_match(&answer, gold)), None)
        }
        Gold::Answers(golds) => (None, Some(max_f1(&answer, golds))),
    };
    Ok(RecordOutcome {
        index,
        doc_id: record.doc_id.clone(),
        node_ids: retrieval.node_ids,
        answer: Some(answer),
        correct,
        f1,
        error: None,
    })
}

/// Retrieve, answer and score every record against its document's graph.
/// Provider failures abort the run; a missing graph is a per-record failure.
pub fn run_eval(
    records: &[QaRecord],
    graphs: &HashMap<String, GemGraph>,
    config: &RetrievalConfig,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
    options: EvalOptions,
) -> Result<EvalReport> {
    let workers = embedder.max_in_flight().max(generator.max_in_flight());
    let outcomes = try_map_bounded(records, workers, |index, record| {
        match graphs.get(&record.doc_id) {
            Some(graph) => evaluate_record(index, record, graph, config, embedder, generator),
            None => {
                log::warn!("record {index}: no graph for document {:?}", record.doc_id);
                Ok(RecordOutcome {
                    index,
                    doc_id: record.doc_id.clone(),
                    node_ids: Vec::new(),
                    answer: None,
                    correct: None,
                    f1: None,
                    error: Some(format!("no graph for document {:?}", record.doc_id)),
                })
            }
        }
    })?;

    let mut accuracy = Vec::new();
    let mut hard = Vec::new();
    let mut f1 = Vec::new();
    let (mut returned, mut summaries, mut missing) = (0, 0, 0);
    for (record, outcome) in records.iter().zip(&outcomes) {
        if outcome.error.is_some() {
            missing += 1;
            if options.skip_missing {
                continue;
            }
        }
        if record.is_multiple_choice() {
            let score = if outcome.correct == Some(true) { 1.0 } else { 0.0 };
            accuracy.push(score);
            if record.is_hard {
                hard.push(score);
            }
        } else {
            f1.push(outcome.f1.unwrap_or(0.0));
        }
        if let Some(graph) = graphs.get(&record.doc_id) {
            returned += outcome.node_ids.len();
            summaries += outcome
                .node_ids
                .iter()
                .filter(|&&id| graph.nodes[id].kind == NodeKind::Summary)
                .count();
        }
    }
    Ok(EvalReport {
        records: records.len(),
        evaluated: records.len() - missing,
        missing,
        accuracy: mean(&accuracy),
        hard_accuracy: mean(&hard),
        f1: mean(&f1),
        eigen_fraction: if returned == 0 { 0.0 } else { summaries as f64 / returned as f64 },
        returned_nodes: returned,
        summary_nodes: summaries,
        per_record: outcomes,
    })
}

/// One query of a sweep: a prompt against one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepQuery {
    pub doc_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub num_components: usize,
    pub fraction: f64,
    pub returned_nodes: usize,
    pub summary_nodes: usize,
}

/// Share of retrieved nodes that are summaries, per summary count. Each
/// document's chunk graph and spectrum are computed once; synthesis runs
/// afresh for every setting.
pub fn eigen_fraction_sweep(
    engine: &Engine,
    documents: &[Document],
    queries: &[SweepQuery],
    components: &[usize],
) -> Result<Vec<SweepPoint>> {
    if components.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::UnsortedComponents);
    }
    let by_id: HashMap<&str, usize> = documents
        .iter()
        .enumerate()
        .map(|(i, d)| (d.doc_id.as_str(), i))
        .collect();
    for (index, q) in queries.iter().enumerate() {
        if !by_id.contains_key(q.doc_id.as_str()) {
            return Err(EvalError::UnknownDocument {
                index,
                doc_id: q.doc_id.clone(),
            });
        }
    }
    let build_err = |doc_id: &str| {
        let doc_id = doc_id.to_string();
        move |e: crate::Error| EvalError::Build {
            doc_id,
            source: Box::new(e),
        }
    };
    let bases = documents
        .iter()
        .map(|d| engine.build_chunk_graph(&d.text).map_err(build_err(&d.doc_id)))
        .collect::<Result<Vec<_>>>()?;

    let config = engine.config().retrieval();
    let mut points = Vec::with_capacity(components.len());
    for &k in components {
        let graphs = documents
            .iter()
            .zip(&bases)
            .map(|(d, base)| engine.synthesize(base, k).map_err(build_err(&d.doc_id)))
            .collect::<Result<Vec<_>>>()?;
        let (mut returned, mut summaries) = (0, 0);
        for (index, q) in queries.iter().enumerate() {
            let graph = &graphs[by_id[q.doc_id.as_str()]];
            let r = retrieve(graph, &q.prompt, &config, engine.embedder())
                .map_err(|source| EvalError::Retrieval { index, source })?;
            returned += r.node_ids.len();
            summaries += r
                .node_ids
                .iter()
                .filter(|&&id| graph.nodes[id].kind == NodeKind::Summary)
                .count();
        }
        let fraction = if returned == 0 { 0.0 } else { summaries as f64 / returned as f64 };
        log::info!("{k} components: {summaries}/{returned} summary nodes returned");
        points.push(SweepPoint {
            num_components: k,
            fraction,
            returned_nodes: returned,
            summary_nodes: summaries,
        });
    }
    Ok(points)
}
