use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalqa::{DatasetError, EvalError};
use crate::graph::GraphError;
use crate::providers::ProviderError;
use crate::retrieval::RetrievalError;
use crate::spectral::SpectralError;
use crate::store::StoreError;
use crate::synthesis::SynthesisError;

/// Pipeline step an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Chunking,
    Tagging,
    Graph,
    Spectral,
    Synthesis,
    Retrieval,
    Answer,
    Store,
    Dataset,
    Eval,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no chunks: the corpus is empty")]
    NoChunks,

    #[error("the corpus yields {0} chunk; a graph needs at least 2")]
    TooFewChunks(usize),

    #[error("{stage}: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },

    #[error("{stage}: {source}")]
    Graph {
        stage: Stage,
        #[source]
        source: GraphError,
    },

    #[error("spectral: {0}")]
    Spectral(#[from] SpectralError),

    #[error("synthesis: {0}")]
    Synthesis(#[from] SynthesisError),

    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),

    #[error("store: {0}")]
    Store(#[from] StoreError),

    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),

    #[error("eval: {0}")]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn graph(stage: Stage, source: GraphError) -> Self {
        match source {
            GraphError::Provider { source, .. } => Error::Provider { stage, source },
            source => Error::Graph { stage, source },
        }
    }

    pub fn stage(&self) -> Stage {
        match self {
            Error::Config(_) => Stage::Config,
            Error::NoChunks | Error::TooFewChunks(_) => Stage::Chunking,
            Error::Provider { stage, .. } | Error::Graph { stage, .. } => *stage,
            Error::Spectral(_) => Stage::Spectral,
            Error::Synthesis(_) => Stage::Synthesis,
            Error::Retrieval(_) => Stage::Retrieval,
            Error::Store(_) => Stage::Store,
            Error::Dataset(_) => Stage::Dataset,
            Error::Eval(_) => Stage::Eval,
        }
    }

    /// True when an external model backend failed, as opposed to bad input.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            Error::Provider { .. } => true,
            Error::Synthesis(SynthesisError::Provider { .. }) => true,
            Error::Synthesis(SynthesisError::Graph(GraphError::Provider { .. })) => true,
            Error::Retrieval(RetrievalError::Provider(_)) => true,
            Error::Eval(e) => e.is_provider_failure(),
            _ => false,
        }
    }
}
