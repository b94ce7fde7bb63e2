//! Command-line interface.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gem_core::engine::graph_id;
use gem_core::evalqa::{
    eigen_fraction_sweep, load_dataset, run_eval, DatasetFormat, EvalOptions, SweepQuery,
};
use gem_core::graph::GemGraph;
use gem_core::providers::ProviderKind;
use gem_core::retrieval::{assemble_context, RetrievalConfig, Strategy};
use gem_core::spectral::{analyze, SpectralConfig};
use gem_core::store::{read_graph, write_graph, GraphStore};
use gem_core::synthesis::ThemeStrategy;
use gem_core::{Engine, EngineConfig};
use serde_json::{json, Value};

use crate::service::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "gem", version, about = "Build, query and serve graphical eigen memories")]
pub struct Cli {
    /// Graph store directory.
    #[arg(long, global = true, env = "GEM_STORE", default_value = "gem-store")]
    pub store: PathBuf,

    /// Engine configuration file (JSON); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a graph from a text file or a {doc_id: text} JSON file.
    Build(BuildArgs),
    /// Spectral report of a graph's chunk nodes.
    Spectrum(SpectrumArgs),
    /// Select context nodes for a prompt.
    Retrieve(QueryArgs),
    /// Retrieve context and answer a question.
    Ask(AskArgs),
    /// Run a QA dataset end to end.
    Eval(EvalArgs),
    /// Write a graph to a JSON file.
    Export(ExportArgs),
    /// Serve the store over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderChoice {
    Mock,
    Http,
}

/// Flags that override the engine configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineArgs {
    /// Tokens per chunk.
    #[arg(long)]
    pub chunk_tokens: Option<usize>,
    /// Utility questions per node.
    #[arg(long)]
    pub questions: Option<usize>,
    /// Summary nodes to add.
    #[arg(long)]
    pub num_components: Option<usize>,
    /// Chunks per theme.
    #[arg(long)]
    pub top_components: Option<usize>,
    #[arg(long, value_parser = ["eigen", "kmeans"])]
    pub theme_strategy: Option<String>,
    /// Start themes at the second eigenvector.
    #[arg(long)]
    pub skip_top: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub beta_close: Option<f64>,
    #[arg(long, value_enum)]
    pub provider: Option<ProviderChoice>,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Generation model.
    #[arg(long)]
    pub model: Option<String>,
    /// Embedding model.
    #[arg(long)]
    pub embed_model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Mock embedding dimension.
    #[arg(long)]
    pub dimension: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// Edge weight share for gem_best_first.
    #[arg(long)]
    pub edge_bias: Option<f64>,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    pub corpus: PathBuf,
    /// Build only this document of a JSON corpus.
    #[arg(long)]
    pub doc: Option<String>,
    /// Also write the graph here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rebuild even if the store holds this graph.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Graph file or stored graph id.
    pub graph: String,
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long)]
    pub beta_close: Option<f64>,
    /// Include eigenvectors.
    #[arg(long)]
    pub vectors: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Graph file or stored graph id.
    pub graph: String,
    #[arg(long)]
    pub prompt: String,
    /// Include the assembled context text.
    #[arg(long)]
    pub context: bool,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    #[command(flatten)]
    pub query: QueryArgs,
    /// Answer option (repeat for multiple choice).
    #[arg(long = "option")]
    pub options: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "simple", value_parser = parse_format)]
    pub format: DatasetFormat,
    /// Document sidecar for the simple format (default <stem>.docs.json).
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Skip this many documents (file order).
    #[arg(long, default_value_t = 0)]
    pub skip_docs: usize,
    /// Use at most this many documents.
    #[arg(long)]
    pub max_docs: Option<usize>,
    /// Leave records without a graph out of the metrics.
    #[arg(long)]
    pub skip_missing: bool,
    /// Write the full report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Instead of answering, sweep these summary counts (comma separated) and
    /// report the share of summary nodes retrieved.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<usize>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

fn parse_format(s: &str) -> std::result::Result<DatasetFormat, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Graph file or stored graph id.
    pub graph: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Omit embeddings.
    #[arg(long)]
    pub no_vectors: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(
    file: Option<&Path>,
    engine: &EngineArgs,
    retrieval: &RetrievalArgs,
) -> Result<EngineConfig> {
    let mut c = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => EngineConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                c.$field = v;
            }
        };
    }
    set!(chunk_tokens, engine.chunk_tokens);
    set!(questions, engine.questions);
    set!(num_components, engine.num_components);
    set!(top_components, engine.top_components);
    set!(seed, engine.seed);
    set!(cutoff, engine.cutoff);
    set!(beta_close, engine.beta_close);
    set!(budget, retrieval.budget);
    set!(strategy, retrieval.strategy);
    set!(edge_bias, retrieval.edge_bias);
    if let Some(s) = &engine.theme_strategy {
        c.theme_strategy = if s == "kmeans" { ThemeStrategy::Kmeans } else { ThemeStrategy::Eigen };
    }
    if engine.skip_top {
        c.skip_top = true;
    }
    for p in [&mut c.embedder, &mut c.generator] {
        if let Some(kind) = engine.provider {
            p.kind = match kind {
                ProviderChoice::Mock => ProviderKind::Mock,
                ProviderChoice::Http => ProviderKind::Http,
            };
        }
        if let Some(e) = &engine.endpoint {
            p.endpoint = Some(e.clone());
        }
        if let Some(k) = &engine.api_key_env {
            p.api_key_env = Some(k.clone());
        }
        if let Some(d) = engine.dimension {
            p.dimension = d;
        }
    }
    if let Some(m) = &engine.model {
        c.generator.model_name = m.clone();
    }
    if let Some(m) = &engine.embed_model {
        c.embedder.model_name = m.clone();
    }
    c.validate()?;
    Ok(c)
}

/// A path to a graph file, or an id in the store.
fn load_graph(store: &Path, reference: &str) -> Result<GemGraph> {
    let path = Path::new(reference);
    if path.is_file() {
        return read_graph(path).with_context(|| format!("loading {reference}"));
    }
    let store = GraphStore::open(store)?;
    store
        .load(reference)
        .with_context(|| format!("loading graph {reference} from {}", store.dir().display()))
}

/// Documents of a corpus file: a JSON object of texts, or one plain text.
fn read_corpus(path: &Path) -> Result<Vec<(Option<String>, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let value: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(map) = value else {
            bail!("{}: expected an object mapping doc_id to text", path.display());
        };
        return map
            .into_iter()
            .map(|(id, v)| match v {
                Value::String(s) => Ok((Some(id), s)),
                _ => bail!("{}: document {id:?} is not a string", path.display()),
            })
            .collect();
    }
    Ok(vec![(None, text)])
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn stage_context(e: gem_core::Error) -> anyhow::Error {
    let stage = e.stage();
    anyhow::Error::new(e).context(format!("stage {stage}"))
}

/// Build one document, reusing a stored graph with the same content id.
fn build_one(
    engine: &Engine,
    store: &GraphStore,
    text: &str,
    force: bool,
) -> Result<(GemGraph, bool)> {
    let id = graph_id(text.as_bytes(), engine.config());
    if !force && store.contains(&id) {
        return Ok((store.load(&id)?, true));
    }
    let built = engine.build(text).map_err(stage_context)?;
    store.save(&built.graph)?;
    Ok((built.graph, false))
}

fn graph_line(doc: Option<&str>, g: &GemGraph, store: &GraphStore, cached: bool) -> Result<Value> {
    let id = g.meta.graph_id.clone().unwrap_or_default();
    Ok(json!({
        "graph_id": id,
        "doc_id": doc,
        "nodes": g.len(),
        "chunks": g.chunk_ids().len(),
        "summaries": g.summary_ids().len(),
        "theme_count": g.meta.theme_count,
        "distinctness": g.meta.distinctness,
        "path": store.path_of(&id)?,
        "cached": cached,
    }))
}

fn cmd_build(cli: &Cli, args: &BuildArgs) -> Result<()> {
    let config = resolve_config(cli.config.as_deref(), &args.engine, &RetrievalArgs::default())?;
    let engine = Engine::new(config).map_err(stage_context)?;
    let store = GraphStore::open(&cli.store)?;
    let mut docs = read_corpus(&args.corpus)?;
    if let Some(want) = &args.doc {
        docs.retain(|(id, _)| id.as_deref() == Some(want.as_str()));
        if docs.is_empty() {
            bail!("no document {want:?} in {}", args.corpus.display());
        }
    }
    if args.out.is_some() && docs.len() != 1 {
        bail!("--out needs exactly one document (use --doc)");
    }
    for (doc, text) in &docs {
        let (graph, cached) = build_one(&engine, &store, text, args.force)
            .with_context(|| format!("building {}", doc.as_deref().unwrap_or("corpus")))?;
        if let Some(out) = &args.out {
            write_graph(out, &graph, true)?;
        }
        println!("{}", graph_line(doc.as_deref(), &graph, &store, cached)?);
    }
    Ok(())
}

fn cmd_spectrum(cli: &Cli, args: &SpectrumArgs) -> Result<()> {
    let graph = load_graph(&cli.store, &args.graph)?;
    let defaults = SpectralConfig::default();
    let config = SpectralConfig {
        cutoff: args.cutoff.unwrap_or(defaults.cutoff),
        beta_close: args.beta_close.unwrap_or(defaults.beta_close),
    };
    let report = analyze(&graph.chunk_similarity(), config)?;
    let mut value = serde_json::to_value(&report)?;
    if !args.vectors {
        if let Some(map) = value.as_object_mut() {
            map.remove("eigenvectors");
        }
    }
    print_json(&value)
}

fn query_engine(cli: &Cli, args: &QueryArgs, graph: &GemGraph) -> Result<(Engine, RetrievalConfig)> {
    let mut config = resolve_config(cli.config.as_deref(), &args.engine, &args.retrieval)?;
    // a graph file records the configuration it was built with
    if cli.config.is_none() && args.engine.provider.is_none() {
        if let Some(built) = graph
            .meta
            .config
            .as_ref()
            .and_then(|v| serde_json::from_value::<EngineConfig>(v.clone()).ok())
        {
            config.embedder = built.embedder;
            config.generator = built.generator;
        }
    }
    let engine = Engine::new(config).map_err(stage_context)?;
    engine.check_compatible(graph).map_err(stage_context)?;
    let retrieval = engine.config().retrieval();
    Ok((engine, retrieval))
}

fn cmd_retrieve(cli: &Cli, args: &QueryArgs) -> Result<()> {
    let graph = load_graph(&cli.store, &args.graph)?;
    let (engine, config) = query_engine(cli, args, &graph)?;
    let result = engine
        .retrieve_with(&graph, &args.prompt, &config)
        .map_err(stage_context)?;
    let mut value = serde_json::to_value(&result)?;
    if args.context {
        value["context"] = Value::String(assemble_context(&graph, &result)?);
    }
    print_json(&value)
}

fn cmd_ask(cli: &Cli, args: &AskArgs) -> Result<()> {
    let graph = load_graph(&cli.store, &args.query.graph)?;
    let (engine, config) = query_engine(cli, &args.query, &graph)?;
    let options = (!args.options.is_empty()).then_some(args.options.as_slice());
    let answer = engine
        .ask(&graph, &args.query.prompt, options, &config)
        .map_err(stage_context)?;
    let mut value = serde_json::to_value(&answer)?;
    if args.query.context {
        value["context"] = Value::String(assemble_context(&graph, &answer.retrieval)?);
    }
    print_json(&value)
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let config = resolve_config(cli.config.as_deref(), &args.engine, &args.retrieval)?;
    let engine = Engine::new(config).map_err(stage_context)?;
    let dataset = load_dataset(&args.dataset, args.format, args.docs.as_deref())?;
    let end = args
        .max_docs
        .map_or(usize::MAX, |n| args.skip_docs.saturating_add(n));
    let dataset = dataset.select_documents(args.skip_docs..end);
    log::info!(
        "{} documents, {} records",
        dataset.documents.len(),
        dataset.records.len()
    );

    if !args.sweep.is_empty() {
        let queries: Vec<SweepQuery> = dataset
            .records
            .iter()
            .filter(|r| dataset.document(&r.doc_id).is_some())
            .map(|r| SweepQuery {
                doc_id: r.doc_id.clone(),
                prompt: r.question.clone(),
            })
            .collect();
        let points = eigen_fraction_sweep(&engine, &dataset.documents, &queries, &args.sweep)?;
        let value = json!({ "queries": queries.len(), "sweep": points });
        if let Some(path) = &args.report {
            fs::write(path, serde_json::to_string_pretty(&value)?)?;
        }
        return print_json(&value);
    }

    let store = GraphStore::open(&cli.store)?;
    let mut graphs = HashMap::new();
    for doc in &dataset.documents {
        match build_one(&engine, &store, &doc.text, false) {
            Ok((g, _)) => {
                graphs.insert(doc.doc_id.clone(), g);
            }
            Err(e) if args.skip_missing => log::warn!("document {}: {e:#}", doc.doc_id),
            Err(e) => return Err(e.context(format!("building document {}", doc.doc_id))),
        }
    }
    let report = run_eval(
        &dataset.records,
        &graphs,
        &engine.config().retrieval(),
        engine.embedder(),
        engine.generator(),
        EvalOptions {
            skip_missing: args.skip_missing,
        },
    )?;
    if let Some(path) = &args.report {
        fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&json!({
        "records": report.records,
        "evaluated": report.evaluated,
        "missing": report.missing,
        "accuracy": report.accuracy,
        "hard_accuracy": report.hard_accuracy,
        "f1": report.f1,
        "eigen_fraction": report.eigen_fraction,
    }))
}

fn cmd_export(cli: &Cli, args: &ExportArgs) -> Result<()> {
    let graph = load_graph(&cli.store, &args.graph)?;
    write_graph(&args.out, &graph, !args.no_vectors)?;
    Ok(())
}

fn cmd_serve(cli: &Cli, args: &ServeArgs) -> Result<()> {
    let config = resolve_config(cli.config.as_deref(), &args.engine, &args.retrieval)?;
    let engine = Engine::new(config).map_err(stage_context)?;
    let store = GraphStore::open(&cli.store)?;
    let state = AppState::new(store, engine);
    let addr = format!("{}:{}", args.host, args.port);
    tokio::runtime::Runtime::new()?
        .block_on(serve(state, &addr))
        .with_context(|| format!("serving on {addr}"))
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Build(a) => cmd_build(&cli, a),
        Command::Spectrum(a) => cmd_spectrum(&cli, a),
        Command::Retrieve(a) => cmd_retrieve(&cli, a),
        Command::Ask(a) => cmd_ask(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Export(a) => cmd_export(&cli, a),
        Command::Serve(a) => cmd_serve(&cli, a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"chunk_tokens": 50, "questions": 2, "budget": 3}"#).unwrap();
        let engine = EngineArgs {
            questions: Some(7),
            ..EngineArgs::default()
        };
        let c = resolve_config(Some(&path), &engine, &RetrievalArgs::default()).unwrap();
        assert_eq!((c.chunk_tokens, c.questions, c.budget), (50, 7, 3));
        assert_eq!(c.num_components, 2);
    }

    #[test]
    fn invalid_flags_are_rejected() {
        let retrieval = RetrievalArgs {
            budget: Some(0),
            ..RetrievalArgs::default()
        };
        assert!(resolve_config(None, &EngineArgs::default(), &retrieval).is_err());
        let engine = EngineArgs {
            provider: Some(ProviderChoice::Http),
            ..EngineArgs::default()
        };
        assert!(resolve_config(None, &engine, &RetrievalArgs::default()).is_err());
    }

    #[test]
    fn parses_command_lines() {
        let cli = Cli::try_parse_from([
            "gem", "retrieve", "g.json", "--prompt", "hi", "--budget", "2", "--strategy", "gem_best_first",
        ])
        .unwrap();
        match cli.command {
            Command::Retrieve(q) => {
                assert_eq!(q.retrieval.budget, Some(2));
                assert_eq!(q.retrieval.strategy, Some(Strategy::GemBestFirst));
            }
            other => panic!("{other:?}"),
        }
        let cli = Cli::try_parse_from(["gem", "eval", "--dataset", "d.jsonl", "--sweep", "0,2,4"]).unwrap();
        match cli.command {
            Command::Eval(e) => assert_eq!(e.sweep, vec![0, 2, 4]),
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["gem", "retrieve", "g", "--prompt", "x", "--strategy", "nope"]).is_err());
    }
}
