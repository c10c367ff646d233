//! Dense matrix kernels, truncated/randomized SVD, symmetric normalization,
//! and the reverse-mode gradient tape.

pub mod eigen;
pub mod fdcheck;
pub mod mat;
pub mod sparse;
pub mod svd;
pub mod tape;

pub use mat::Mat;
pub use sparse::SparseStructure;
pub use svd::{randomized_svd, svd_truncated, SvdFactors};
pub use tape::{Gradients, NodeId, Tape};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Degree-normalized operator with self-loops for a dense symmetric
/// non-negative matrix: D^{-1/2} (S + I) D^{-1/2} with D_ii = sum_j (S+I)_ij.
///
/// Not idempotent: normalizing an already-normalized matrix changes it again,
/// since the row sums of the output are not one.
pub fn sym_normalize(s: &Mat) -> Result<Mat> {
    s.check_square()?;
    let n = s.rows();
    if !s.is_symmetric(1e-9) {
        return Err(Error::InvalidArgument(
            "sym_normalize requires a symmetric matrix".into(),
        ));
    }
    if s.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "sym_normalize requires non-negative entries".into(),
        ));
    }
    // Row sums of S + I are at least one, so no zero-degree case exists.
    let mut d = vec![0.0; n];
    for i in 0..n {
        let mut acc = 1.0; // self-loop
        for &v in s.row(i) {
            acc += v;
        }
        d[i] = acc.sqrt();
    }
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = s[(i, j)] + if i == j { 1.0 } else { 0.0 };
            out[(i, j)] = v / (d[i] * d[j]);
        }
    }
    Ok(out)
}

/// Sparse counterpart of [`sym_normalize`]; the returned structure carries
/// the normalized off-diagonal weights plus the normalized self-loops.
pub fn sym_normalize_sparse(s: &SparseStructure) -> SparseStructure {
    let n = s.n();
    let d: Vec<f64> = s
        .degree_with_self_loops()
        .iter()
        .map(|&v| v.sqrt())
        .collect();
    let entries: Vec<(usize, usize, f64)> = s
        .upper_entries()
        .into_iter()
        .map(|(i, j, w)| (i, j, w / (d[i] * d[j])))
        .collect();
    let diag: Vec<f64> = (0..n).map(|i| 1.0 / (d[i] * d[i])).collect();
    SparseStructure::from_entries_with_diag(n, &entries, Some(&diag))
}

/// Residual of one graph-signal descent step against direct aggregation:
/// || (x - grad g(x)) - A_hat x ||_F with the regularization weight at 1/2,
/// where A_hat is the normalized self-looped adjacency. Both sides are
/// evaluated independently; the value is expected to vanish.
pub fn laplacian_step_residual(x: &Mat, graph: &Graph) -> Result<f64> {
    if graph.n_nodes() == 0 {
        return Err(Error::InvalidGraph("empty graph".into()));
    }
    if x.rows() != graph.n_nodes() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} rows", graph.n_nodes()),
            got: format!("{} rows", x.rows()),
        });
    }
    let a_hat = sym_normalize(&graph.adjacency_matrix())?;
    let n = graph.n_nodes();
    // One descent step on g(z) = ||z - x||^2 + lambda * x^T L x evaluated at
    // x with unit step and lambda = 1/2 gives x - L x with L = I - A_hat.
    let lap = Mat::eye(n).sub(&a_hat);
    let step = x.sub(&lap.matmul(x));
    let direct = a_hat.matmul(x);
    Ok(step.sub(&direct).frobenius_norm())
}
