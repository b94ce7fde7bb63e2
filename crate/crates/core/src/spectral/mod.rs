//! Spectrum of the memory graph.
//!
//! The operator is `L = D^{-1/2} (S - I) D^{-1/2}` where `D` holds the
//! off-diagonal row sums of `S`. With non-negative weights and no isolated
//! nodes its eigenvalues sum to zero, lie in `[-1, 1]`, and the top one is
//! exactly 1 (eigenvector proportional to `sqrt(d)`).
//!
//! Eigenpairs are reported in non-increasing order of `|λ|`. Theme count and
//! distinctness are derived from that ordering:
//!
//! - `β_i = λ_i / λ_1` for `i >= 2`; the theme count is the smallest `d >= 2`
//!   with `β_d >= β_close` and `β_d - β_{d+1} > c`, or 1 when none exists.
//! - distinctness `Λ = Σ λ_i²`.

mod eigen;

pub use eigen::{symmetric_eigen, SymmetricEigen};

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::check_similarity;

/// Degrees at or below this are treated as isolated nodes.
pub const DEGREE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid similarity matrix: {0}")]
    InvalidMatrix(String),

    #[error("node {node} is isolated (off-diagonal degree {degree:e})")]
    IsolatedNode { node: usize, degree: f64 },

    #[error("eigensolver did not converge (residual norm {residual:e})")]
    NonConvergence { residual: f64 },

    #[error("component count {e} out of range 1..={n}")]
    ComponentRange { e: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, SpectralError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    /// Minimum gap between adjacent ratios that marks the theme boundary.
    pub cutoff: f64,
    /// How close to 1 the last in-theme ratio must be.
    pub beta_close: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            cutoff: 0.5,
            beta_close: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Sorted by non-increasing magnitude.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[k]` pairs with `eigenvalues[k]`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Same eigenvalues in non-increasing signed order.
    pub signed_eigenvalues: Vec<f64>,
    /// `λ_i / λ_1` for `i >= 2`.
    pub ratios: Vec<f64>,
    pub theme_count: usize,
    pub distinctness: f64,
    pub cutoff: f64,
    pub beta_close: f64,
    /// Largest `‖L x - λ x‖₂` over all pairs.
    pub max_residual: f64,
}

/// Off-diagonal row sums of `S`.
pub fn degrees(s: &Array2<f64>) -> Vec<f64> {
    s.rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum())
        .collect()
}

pub fn laplacian(s: &Array2<f64>) -> Result<Array2<f64>> {
    check_similarity(s).map_err(|e| SpectralError::InvalidMatrix(e.to_string()))?;
    let d = degrees(s);
    if let Some((node, &degree)) = d.iter().enumerate().find(|(_, &x)| x <= DEGREE_EPSILON) {
        return Err(SpectralError::IsolatedNode { node, degree });
    }
    let inv_sqrt: Vec<f64> = d.iter().map(|x| 1.0 / x.sqrt()).collect();
    let n = s.nrows();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            s[[i, j]] * inv_sqrt[i] * inv_sqrt[j]
        }
    }))
}

/// Magnitude descending, then signed value descending, then original index.
fn magnitude_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then(values[b].total_cmp(&values[a]))
            .then(a.cmp(&b))
    });
    idx
}

/// Flip `x` so its largest-magnitude entry (lowest index on ties) is positive.
fn canonical_sign(x: &mut [f64]) {
    let mut pivot = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[pivot].abs() {
            pivot = i;
        }
    }
    if x.get(pivot).is_some_and(|v| *v < 0.0) {
        x.iter_mut().for_each(|v| *v = -*v);
    }
}

pub fn decompose(l: &Array2<f64>, config: SpectralConfig) -> Result<SpectralReport> {
    let n = l.nrows();
    if n != l.ncols() {
        return Err(SpectralError::InvalidMatrix(format!("not square: {n}x{}", l.ncols())));
    }
    let eig = symmetric_eigen(l).ok_or(SpectralError::NonConvergence {
        residual: f64::INFINITY,
    })?;

    let order = magnitude_order(&eig.values);
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.values[k]).collect();
    let mut eigenvectors: Vec<Vec<f64>> = order
        .iter()
        .map(|&k| eig.vectors.column(k).to_vec())
        .collect();
    eigenvectors.iter_mut().for_each(|x| canonical_sign(x));

    let mut max_residual: f64 = 0.0;
    for (lambda, x) in eigenvalues.iter().zip(&eigenvectors) {
        let r: f64 = (0..n)
            .map(|i| {
                let lx: f64 = (0..n).map(|j| l[[i, j]] * x[j]).sum();
                (lx - lambda * x[i]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        max_residual = max_residual.max(r);
    }
    if !max_residual.le(&(1e-8 * n.max(1) as f64)) {
        return Err(SpectralError::NonConvergence { residual: max_residual });
    }

    let mut signed_eigenvalues = eigenvalues.clone();
    signed_eigenvalues.sort_by(|a, b| b.total_cmp(a));

    Ok(SpectralReport {
        ratios: ratios(&eigenvalues),
        theme_count: estimate_themes(&eigenvalues, config.cutoff, config.beta_close),
        distinctness: distinctness(&eigenvalues),
        eigenvalues,
        eigenvectors,
        signed_eigenvalues,
        cutoff: config.cutoff,
        beta_close: config.beta_close,
        max_residual,
    })
}

/// Laplacian of `s` followed by [`decompose`].
pub fn analyze(s: &Array2<f64>, config: SpectralConfig) -> Result<SpectralReport> {
    decompose(&laplacian(s)?, config)
}

fn ratios(eigenvalues: &[f64]) -> Vec<f64> {
    match eigenvalues.first() {
        Some(&top) if top != 0.0 => eigenvalues[1..].iter().map(|l| l / top).collect(),
        _ => Vec::new(),
    }
}

/// Number of essential themes from the first significant gap in the ratios.
pub fn estimate_themes(eigenvalues: &[f64], cutoff: f64, beta_close: f64) -> usize {
    let beta = ratios(eigenvalues);
    // beta[i] holds β_{i+2}
    for d in 2..eigenvalues.len() {
        let (cur, next) = (beta[d - 2], beta[d - 1]);
        if cur >= beta_close && cur - next > cutoff {
            return d;
        }
    }
    1
}

/// `Σ λ_i²`.
pub fn distinctness(eigenvalues: &[f64]) -> f64 {
    eigenvalues.iter().map(|l| l * l).sum()
}

/// Indices of the `e` largest-magnitude entries of `eigenvector`, in
/// descending magnitude, ties to the lower index.
pub fn top_components(eigenvector: &[f64], e: usize) -> Result<Vec<usize>> {
    let n = eigenvector.len();
    if e < 1 || e > n {
        return Err(SpectralError::ComponentRange { e, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| match eigenvector[b].abs().total_cmp(&eigenvector[a].abs()) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    idx.truncate(e);
    Ok(idx)
}
