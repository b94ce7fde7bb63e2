//! End-to-end build and query pipeline: chunk, tag, connect, decompose,
//! synthesize, then retrieve and answer.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::chunk;
use crate::error::{Error, Result, Stage};
use crate::graph::{build_chunk_nodes, build_graph, GemGraph, GraphMeta};
use crate::providers::{
    embedder_from_config, generator_from_config, Embedder, Generator, ProviderConfig,
};
use crate::retrieval::{context_texts, retrieve, RetrievalConfig, RetrievalResult, Strategy};
use crate::spectral::{analyze, SpectralConfig, SpectralReport};
use crate::synthesis::{build_summary_nodes, SynthesisConfig, ThemeStrategy};

/// Hex digits kept from the SHA-256 content hash.
const GRAPH_ID_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Tokens per chunk (`T`).
    pub chunk_tokens: usize,
    /// Utility questions per node (`m`).
    pub questions: usize,
    pub num_components: usize,
    /// Members per theme (`e`).
    pub top_components: usize,
    pub theme_strategy: ThemeStrategy,
    pub skip_top: bool,
    pub seed: u64,
    pub cutoff: f64,
    pub beta_close: f64,
    /// Context nodes per prompt (`B`).
    pub budget: usize,
    pub strategy: Strategy,
    pub edge_bias: f64,
    pub embedder: ProviderConfig,
    pub generator: ProviderConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let spectral = SpectralConfig::default();
        let synthesis = SynthesisConfig::default();
        let retrieval = RetrievalConfig::default();
        Self {
            chunk_tokens: 100,
            questions: 5,
            num_components: synthesis.num_components,
            top_components: synthesis.top_components,
            theme_strategy: synthesis.strategy,
            skip_top: synthesis.skip_top,
            seed: synthesis.seed,
            cutoff: spectral.cutoff,
            beta_close: spectral.beta_close,
            budget: retrieval.budget,
            strategy: retrieval.strategy,
            edge_bias: retrieval.edge_bias,
            embedder: ProviderConfig::mock(),
            generator: ProviderConfig::mock(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.chunk_tokens < 1 {
            return bad("chunk_tokens must be at least 1");
        }
        if self.budget < 1 {
            return bad("budget must be at least 1");
        }
        if self.top_components < 1 {
            return bad("top_components must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.edge_bias) {
            return bad("edge_bias must lie in [0, 1]");
        }
        if !self.cutoff.is_finite() || !self.beta_close.is_finite() {
            return bad("cutoff and beta_close must be finite");
        }
        self.embedder.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.generator.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn spectral(&self) -> SpectralConfig {
        SpectralConfig {
            cutoff: self.cutoff,
            beta_close: self.beta_close,
        }
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        SynthesisConfig {
            num_components: self.num_components,
            top_components: self.top_components,
            strategy: self.theme_strategy,
            seed: self.seed,
            skip_top: self.skip_top,
        }
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            budget: self.budget,
            strategy: self.strategy,
            edge_bias: self.edge_bias,
        }
    }

    /// The settings that shape a built graph; retrieval knobs are left out so
    /// they do not change the graph id.
    pub fn build_fingerprint(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            for key in ["budget", "strategy", "edge_bias"] {
                map.remove(key);
            }
        }
        v
    }
}

/// Content address of a build: SHA-256 over the corpus bytes and the
/// canonical (key-sorted) JSON of the build-relevant configuration.
pub fn graph_id(corpus: &[u8], config: &EngineConfig) -> String {
    let mut h = Sha256::new();
    h.update(corpus);
    h.update([0u8]);
    h.update(config.build_fingerprint().to_string().as_bytes());
    let mut id = hex::encode(h.finalize());
    id.truncate(GRAPH_ID_LEN);
    id
}

/// A finished build: the graph with summary nodes and the spectral report of
/// its chunk subgraph.
#[derive(Debug, Clone)]
pub struct Build {
    pub graph: GemGraph,
    pub report: SpectralReport,
}

/// Chunk graph and its decomposition, before synthesis.
#[derive(Debug, Clone)]
pub struct ChunkGraph {
    pub graph: GemGraph,
    pub report: SpectralReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub answer: String,
    pub retrieval: RetrievalResult,
}

#[derive(Clone)]
pub struct Engine {
    config: EngineConfig,
    embedder: Arc<dyn Embedder>,
    generator: Arc<dyn Generator>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("embedder", &self.embedder.id())
            .field("generator", &self.generator.id())
            .finish()
    }
}

impl Engine {
    /// Instantiate providers from the configuration.
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let embedder = embedder_from_config(&config.embedder)
            .map_err(|source| Error::Provider { stage: Stage::Config, source })?;
        let generator = generator_from_config(&config.generator)
            .map_err(|source| Error::Provider { stage: Stage::Config, source })?;
        Ok(Self {
            config,
            embedder,
            generator,
        })
    }

    pub fn with_providers(
        config: EngineConfig,
        embedder: Arc<dyn Embedder>,
        generator: Arc<dyn Generator>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            embedder,
            generator,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn generator(&self) -> &dyn Generator {
        self.generator.as_ref()
    }

    /// Chunk, tag and connect `text`, then decompose the chunk graph.
    pub fn build_chunk_graph(&self, text: &str) -> Result<ChunkGraph> {
        let c = &self.config;
        let chunks = chunk(text, c.chunk_tokens).map_err(|e| Error::Config(e.to_string()))?;
        if chunks.is_empty() {
            return Err(Error::NoChunks);
        }
        if chunks.len() < 2 {
            return Err(Error::TooFewChunks(chunks.len()));
        }
        log::info!("tagging {} chunks with {} questions each", chunks.len(), c.questions);
        let nodes = build_chunk_nodes(
            &chunks,
            0,
            c.questions,
            self.embedder.as_ref(),
            self.generator.as_ref(),
        )
        .map_err(|e| Error::graph(Stage::Tagging, e))?;
        let meta = GraphMeta {
            graph_id: Some(graph_id(text.as_bytes(), c)),
            chunk_tokens: c.chunk_tokens,
            embedder_id: self.embedder.id(),
            generator_id: self.generator.id(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            theme_count: None,
            distinctness: None,
            config: Some(serde_json::to_value(c).expect("config serializes")),
        };
        let mut graph = build_graph(nodes, meta).map_err(|e| Error::graph(Stage::Graph, e))?;
        let report = analyze(&graph.similarity, c.spectral())?;
        graph.meta.theme_count = Some(report.theme_count);
        graph.meta.distinctness = Some(report.distinctness);
        log::info!(
            "chunk graph: n = {}, themes = {}, distinctness = {:.4}",
            graph.len(),
            report.theme_count,
            report.distinctness
        );
        Ok(ChunkGraph { graph, report })
    }

    /// Add `num_components` summary nodes to a chunk graph. Requests beyond the
    /// number of available components are clamped.
    pub fn synthesize(&self, base: &ChunkGraph, num_components: usize) -> Result<GemGraph> {
        let mut synthesis = self.config.synthesis();
        let available = base.graph.len() - usize::from(synthesis.skip_top);
        if num_components > available {
            log::warn!(
                "{num_components} components requested, only {available} available; clamping"
            );
        }
        synthesis.num_components = num_components.min(available);
        synthesis.top_components = synthesis.top_components.min(base.graph.len());
        Ok(build_summary_nodes(
            &base.graph,
            &base.report,
            &synthesis,
            self.embedder.as_ref(),
            self.generator.as_ref(),
        )?)
    }

    /// Full build of one document.
    pub fn build(&self, text: &str) -> Result<Build> {
        let base = self.build_chunk_graph(text)?;
        let graph = self.synthesize(&base, self.config.num_components)?;
        Ok(Build {
            graph,
            report: base.report,
        })
    }

    /// Prompts must be embedded by the same model that embedded the graph.
    pub fn check_compatible(&self, graph: &GemGraph) -> Result<()> {
        let built = &graph.meta.embedder_id;
        let ours = self.embedder.id();
        if !built.is_empty() && *built != ours {
            return Err(Error::Config(format!(
                "graph was embedded with {built:?} but the configured embedder is {ours:?}"
            )));
        }
        Ok(())
    }

    pub fn retrieve(&self, graph: &GemGraph, prompt: &str) -> Result<RetrievalResult> {
        self.retrieve_with(graph, prompt, &self.config.retrieval())
    }

    pub fn retrieve_with(
        &self,
        graph: &GemGraph,
        prompt: &str,
        config: &RetrievalConfig,
    ) -> Result<RetrievalResult> {
        Ok(retrieve(graph, prompt, config, self.embedder.as_ref())?)
    }

    /// Retrieve context for `question` and answer it.
    pub fn ask(
        &self,
        graph: &GemGraph,
        question: &str,
        options: Option<&[String]>,
        config: &RetrievalConfig,
    ) -> Result<Answer> {
        let retrieval = self.retrieve_with(graph, question, config)?;
        let context = context_texts(graph, &retrieval)?;
        let answer = self
            .generator
            .answer(question, &context, options)
            .map_err(|source| Error::Provider { stage: Stage::Answer, source })?;
        Ok(Answer { answer, retrieval })
    }
}
