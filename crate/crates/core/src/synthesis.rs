//! Summary ("eigentheme") nodes.
//!
//! For each of the first `num_components` eigenvectors of the chunk graph's
//! Laplacian, the `e` largest-magnitude components select member chunks. Their
//! texts, in document order, are summarized into a new node that receives its
//! own utility questions and is connected to every other node with the usual
//! similarity rule. A k-means grouping over base embeddings is available as an
//! alternative theme source.
//!
//! Synthesis is a single pass: a graph that already holds summary nodes is
//! rejected, and the enlarged graph is never re-decomposed.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::token_count;
use crate::graph::{build_graph, build_node, GemGraph, GraphError, NodeKind};
use crate::parallel::try_map_bounded;
use crate::providers::{Embedder, Generator, ProviderError};
use crate::spectral::{top_components, SpectralError, SpectralReport};

const KMEANS_MAX_ITERATIONS: usize = 200;
const KMEANS_TOLERANCE: f64 = 1e-6;
const KMEANS_RESTARTS: usize = 10;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("graph already contains summary nodes")]
    AlreadySynthesized,

    #[error("spectral report covers {report} nodes but the graph has {graph} chunk nodes")]
    ReportMismatch { report: usize, graph: usize },

    #[error("requested {requested} components but only {available} are available")]
    TooManyComponents { requested: usize, available: usize },

    #[error("k = {k} is out of range 1..={n}")]
    InvalidClusterCount { k: usize, n: usize },

    #[error("summarizing theme {theme}: {source}")]
    Provider {
        theme: usize,
        #[source]
        source: ProviderError,
    },

    #[error(transparent)]
    Spectral(#[from] SpectralError),

    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, SynthesisError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThemeStrategy {
    #[default]
    Eigen,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeSpec {
    pub theme_index: usize,
    pub member_ids: Vec<usize>,
    pub strategy: ThemeStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub num_components: usize,
    /// Members taken from each theme (`e`).
    pub top_components: usize,
    pub strategy: ThemeStrategy,
    pub seed: u64,
    /// Start from the second eigenvector instead of the first.
    pub skip_top: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            num_components: 2,
            top_components: 5,
            strategy: ThemeStrategy::Eigen,
            seed: 0,
            skip_top: false,
        }
    }
}

/// Member sets for the leading eigenvectors. `report` must describe the graph's
/// chunk nodes in id order.
pub fn eigen_themes(
    graph: &GemGraph,
    report: &SpectralReport,
    num_components: usize,
    e: usize,
    skip_top: bool,
) -> Result<Vec<ThemeSpec>> {
    let chunks = graph.chunk_ids();
    if report.eigenvectors.len() != chunks.len() {
        return Err(SynthesisError::ReportMismatch {
            report: report.eigenvectors.len(),
            graph: chunks.len(),
        });
    }
    let first = usize::from(skip_top);
    let available = chunks.len().saturating_sub(first);
    if num_components > available {
        return Err(SynthesisError::TooManyComponents {
            requested: num_components,
            available,
        });
    }
    report.eigenvectors[first..first + num_components]
        .iter()
        .enumerate()
        .map(|(theme_index, vector)| {
            let member_ids = top_components(vector, e)?
                .into_iter()
                .map(|i| chunks[i])
                .collect();
            Ok(ThemeSpec {
                theme_index,
                member_ids,
                strategy: ThemeStrategy::Eigen,
            })
        })
        .collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Seeded k-means++ initialization: distinct starting points, each drawn with
/// probability proportional to squared distance from the chosen set.
fn seed_centers(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, points[chosen[0]]))
        .collect();
    while chosen.len() < k {
        let open: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
        let total: f64 = open.iter().map(|&i| dist[i]).sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = *open.last().expect("k <= n");
            for &i in &open {
                target -= dist[i];
                if target < 0.0 && dist[i] > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            open[sample(rng, open.len(), 1).index(0)]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            dist[i] = dist[i].min(squared_distance(p, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

/// Refill empty clusters with the point farthest from its own centroid, taken
/// from a cluster that can spare one.
fn fill_empty(points: &[&[f64]], centers: &[Vec<f64>], labels: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                squared_distance(points[a], &centers[labels[a]])
                    .total_cmp(&squared_distance(points[b], &centers[labels[b]]))
                    .then(b.cmp(&a))
            })
            .expect("k <= n leaves a cluster with a spare point");
        labels[donor] = empty;
    }
}

/// One Lloyd run from k-means++ seeds. Returns labels and inertia.
fn lloyd(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.len();
    let dim = points[0].len();
    let mut centers = seed_centers(points, k, rng);
    let mut labels: Vec<usize> = vec![0; n];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest(p, &centers).0;
        }
        fill_empty(points, &centers, &mut labels, k);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            movement = movement.max(squared_distance(&new, &centers[c]).sqrt());
            centers[c] = new;
        }
        if movement < KMEANS_TOLERANCE {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| squared_distance(p, &centers[l]))
        .sum();
    (labels, inertia)
}

/// Partition the chunk nodes into `k` groups with Lloyd's algorithm over base
/// embeddings, keeping the lowest-inertia of several seeded restarts. Groups
/// are listed by their smallest member id.
pub fn kmeans_groups(graph: &GemGraph, k: usize, seed: u64) -> Result<Vec<ThemeSpec>> {
    let ids = graph.chunk_ids();
    let n = ids.len();
    if k < 1 || k > n {
        return Err(SynthesisError::InvalidClusterCount { k, n });
    }
    let points: Vec<&[f64]> = ids
        .iter()
        .map(|&id| graph.nodes[id].base_embedding.values())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(&points, k, &mut rng);
        // strict comparison keeps the earliest run on ties
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let labels = best.expect("at least one restart").0;

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(ids[i]);
    }
    groups.sort_by_key(|g| g[0]);
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(theme_index, member_ids)| ThemeSpec {
            theme_index,
            member_ids,
            strategy: ThemeStrategy::Kmeans,
        })
        .collect())
}

/// The `e` members of a k-means group closest to its centroid.
fn central_members(graph: &GemGraph, members: &[usize], e: usize) -> Vec<usize> {
    if members.len() <= e {
        return members.to_vec();
    }
    let dim = graph.nodes[members[0]].base_embedding.dim();
    let mut centroid = vec![0.0; dim];
    for &id in members {
        for (c, v) in centroid.iter_mut().zip(graph.nodes[id].base_embedding.values()) {
            *c += v / members.len() as f64;
        }
    }
    let mut ranked = members.to_vec();
    ranked.sort_by(|&a, &b| {
        squared_distance(graph.nodes[a].base_embedding.values(), &centroid)
            .total_cmp(&squared_distance(graph.nodes[b].base_embedding.values(), &centroid))
            .then(a.cmp(&b))
    });
    ranked.truncate(e);
    ranked
}

/// Summary token budget: the graph's chunk size, or its longest node.
fn summary_budget(graph: &GemGraph) -> usize {
    if graph.meta.chunk_tokens > 0 {
        return graph.meta.chunk_tokens;
    }
    graph
        .nodes
        .iter()
        .map(|n| token_count(&n.text))
        .max()
        .unwrap_or(1)
        .max(1)
}

/// Summarize each theme into a new node and rebuild the similarity matrix over
/// the enlarged node set. The input graph is left untouched.
pub fn add_summary_nodes(
    graph: &GemGraph,
    themes: &[ThemeSpec],
    e: usize,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
) -> Result<GemGraph> {
    if !graph.summary_ids().is_empty() {
        return Err(SynthesisError::AlreadySynthesized);
    }
    if themes.is_empty() {
        return Ok(graph.clone());
    }
    let max_tokens = summary_budget(graph);
    let first_id = graph.len();
    let workers = embedder.max_in_flight().max(generator.max_in_flight());

    let summaries = try_map_bounded(themes, workers, |i, theme| {
        let mut members = match theme.strategy {
            ThemeStrategy::Eigen => theme.member_ids.clone(),
            ThemeStrategy::Kmeans => central_members(graph, &theme.member_ids, e),
        };
        members.sort_by_key(|&id| graph.nodes[id].source);
        let texts: Vec<String> = members.iter().map(|&id| graph.nodes[id].text.clone()).collect();
        let text = generator
            .summarize(&texts, max_tokens)
            .map_err(|source| SynthesisError::Provider {
                theme: theme.theme_index,
                source,
            })?;
        if text.trim().is_empty() {
            return Err(SynthesisError::Provider {
                theme: theme.theme_index,
                source: ProviderError::Malformed("empty summary".into()),
            });
        }
        build_node(
            &text,
            first_id + i,
            NodeKind::Summary,
            theme.theme_index,
            graph.m,
            embedder,
            generator,
        )
        .map_err(SynthesisError::from)
    })?;

    let mut nodes = graph.nodes.clone();
    nodes.extend(summaries);
    Ok(build_graph(nodes, graph.meta.clone())?)
}

/// Theme selection per `config` followed by [`add_summary_nodes`].
pub fn build_summary_nodes(
    graph: &GemGraph,
    report: &SpectralReport,
    config: &SynthesisConfig,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
) -> Result<GemGraph> {
    if !graph.summary_ids().is_empty() {
        return Err(SynthesisError::AlreadySynthesized);
    }
    if config.num_components == 0 {
        return Ok(graph.clone());
    }
    let themes = match config.strategy {
        ThemeStrategy::Eigen => eigen_themes(
            graph,
            report,
            config.num_components,
            config.top_components,
            config.skip_top,
        )?,
        ThemeStrategy::Kmeans => kmeans_groups(graph, config.num_components, config.seed)?,
    };
    let out = add_summary_nodes(graph, &themes, config.top_components, embedder, generator)?;
    out.check_invariants().map_err(SynthesisError::from)?;
    Ok(out)
}
