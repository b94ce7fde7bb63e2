//! Dense symmetric eigensolver (cyclic Jacobi rotations).
//!
//! O(n^3) per sweep; convergence is quadratic once the off-diagonal mass is
//! small, so a handful of sweeps suffice for the graph sizes this crate deals
//! with. Eigenvectors come out orthonormal to working precision.

use ndarray::Array2;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in the solver's native (unsorted) order.
    pub values: Vec<f64>,
    /// Column `k` is the unit eigenvector for `values[k]`.
    pub vectors: Array2<f64>,
    pub sweeps: usize,
}

/// Returns `None` if the off-diagonal mass fails to vanish within the sweep
/// limit. Only the upper triangle of `a` is read.
pub fn symmetric_eigen(a: &Array2<f64>) -> Option<SymmetricEigen> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            m[[i, j]] = m[[j, i]];
        }
    }
    let mut v = Array2::<f64>::eye(n);

    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 2 || scale == 0.0 {
        return Some(SymmetricEigen {
            values: (0..n).map(|i| m[[i, i]]).collect(),
            vectors: v,
            sweeps: 0,
        });
    }
    let target = (f64::EPSILON * scale).powi(2);

    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * m[[i, j]] * m[[i, j]])
            .sum();
        if off <= target {
            return Some(SymmetricEigen {
                values: (0..n).map(|i| m[[i, i]]).collect(),
                vectors: v,
                sweeps: sweep,
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                m[[p, p]] -= t * apq;
                m[[q, q]] += t * apq;
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = m[[k, p]];
                        let akq = m[[k, q]];
                        let new_kp = c * akp - s * akq;
                        let new_kq = s * akp + c * akq;
                        m[[k, p]] = new_kp;
                        m[[p, k]] = new_kp;
                        m[[k, q]] = new_kq;
                        m[[q, k]] = new_kq;
                    }
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    None
}
