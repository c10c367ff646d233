//! Truncated and randomized SVD.
//!
//! The exact path goes through a symmetric eigensolve: directly on the input
//! when it is symmetric, otherwise on the Gram matrix of the smaller side.
//! The randomized path is a Gaussian range finder with power iterations.

use crate::error::{Error, Result};
use crate::numkit::eigen::{orthonormalize_columns, sym_eigen_desc};
use crate::numkit::mat::Mat;
use crate::seeds;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// Left singular vectors, one column per retained component.
    pub u: Mat,
    /// Singular values, descending.
    pub s: Vec<f64>,
    /// Right singular vectors, one row per retained component.
    pub vt: Mat,
    pub rank: usize,
}

impl SvdFactors {
    /// U diag(S) V^T.
    pub fn reconstruct(&self) -> Mat {
        let mut us = self.u.clone();
        for j in 0..self.rank {
            for i in 0..us.rows() {
                us[(i, j)] *= self.s[j];
            }
        }
        us.matmul(&self.vt)
    }
}

fn check_rank(r: usize, max: usize) -> Result<()> {
    if r == 0 || r > max {
        return Err(Error::RankOutOfRange { r, max });
    }
    Ok(())
}

/// Flip signs so each U column's largest-magnitude entry is positive; the
/// matching V^T row flips with it. Removes the sign ambiguity of the
/// factorization so results are reproducible and permutation-equivariant.
fn canonicalize_signs(u: &mut Mat, vt: &mut Mat) {
    for j in 0..u.cols() {
        let mut best = 0.0f64;
        let mut best_val = 0.0f64;
        for i in 0..u.rows() {
            let v = u[(i, j)];
            if v.abs() > best {
                best = v.abs();
                best_val = v;
            }
        }
        if best_val < 0.0 {
            for i in 0..u.rows() {
                u[(i, j)] = -u[(i, j)];
            }
            if j < vt.rows() {
                for k in 0..vt.cols() {
                    vt[(j, k)] = -vt[(j, k)];
                }
            }
        }
    }
}

/// Best rank-`r` factorization of `m`.
pub fn svd_truncated(m: &Mat, r: usize) -> Result<SvdFactors> {
    let min_dim = m.rows().min(m.cols());
    check_rank(r, min_dim)?;
    if m.rows() == m.cols() && m.is_symmetric(1e-9) {
        return svd_symmetric(m, r);
    }
    svd_gram(m, r)
}

/// SVD of a symmetric matrix straight from its eigendecomposition:
/// singular values are |eigenvalues|, U picks up the eigenvalue sign.
fn svd_symmetric(m: &Mat, r: usize) -> Result<SvdFactors> {
    let (vals, vecs) = sym_eigen_desc(m)?;
    let n = m.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        vals[j]
            .abs()
            .partial_cmp(&vals[i].abs())
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut u = Mat::zeros(n, r);
    let mut vt = Mat::zeros(r, n);
    let mut s = Vec::with_capacity(r);
    for (k, &idx) in order.iter().take(r).enumerate() {
        let lambda = vals[idx];
        s.push(lambda.abs());
        let sign = if lambda < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            let v = vecs[(i, idx)];
            vt[(k, i)] = v;
            u[(i, k)] = sign * v;
        }
    }
    canonicalize_signs(&mut u, &mut vt);
    // canonicalize_signs flips u columns; keep vt consistent with sign(lambda):
    // flipping u_k and vt_k together preserves u s vt^T, which is all we need.
    Ok(SvdFactors { u, s, vt, rank: r })
}

/// General path: eigensolve the Gram matrix on the smaller side.
fn svd_gram(m: &Mat, r: usize) -> Result<SvdFactors> {
    let (rows, cols) = m.shape();
    if cols <= rows {
        let gram = m.matmul_tn(m); // cols x cols
        let (vals, vecs) = sym_eigen_desc(&gram)?;
        let mut u = Mat::zeros(rows, r);
        let mut vt = Mat::zeros(r, cols);
        let mut s = Vec::with_capacity(r);
        let scale = vals[0].max(0.0);
        for k in 0..r {
            let sigma = vals[k].max(0.0).sqrt();
            s.push(sigma);
            for i in 0..cols {
                vt[(k, i)] = vecs[(i, k)];
            }
            if sigma > 1e-12 * scale.sqrt().max(1e-300) {
                // u_k = A v_k / sigma
                for i in 0..rows {
                    let mut acc = 0.0;
                    let row = m.row(i);
                    for (j, &vv) in row.iter().enumerate() {
                        acc += vv * vecs[(j, k)];
                    }
                    u[(i, k)] = acc / sigma;
                }
            }
        }
        canonicalize_signs(&mut u, &mut vt);
        Ok(SvdFactors { u, s, vt, rank: r })
    } else {
        let f = svd_gram(&m.transpose(), r)?;
        Ok(SvdFactors {
            u: f.vt.transpose(),
            s: f.s,
            vt: f.u.transpose(),
            rank: r,
        })
    }
}

/// Randomized rank-`r` SVD (Gaussian sketch, QR range finder, power
/// iterations with re-orthonormalization).
pub fn randomized_svd(
    m: &Mat,
    r: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SvdFactors> {
    let min_dim = m.rows().min(m.cols());
    check_rank(r, min_dim)?;
    let ell = r + oversample;
    if ell > min_dim {
        return Err(Error::InvalidArgument(format!(
            "rank {r} + oversample {oversample} exceeds min dimension {min_dim}"
        )));
    }
    let mut rng = seeds::rng(seed, "randomized-svd", 0);
    let omega = Mat::from_fn(m.cols(), ell, |_, _| {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
    });
    let mut q = orthonormalize_columns(&m.matmul(&omega));
    for _ in 0..power_iters {
        let z = orthonormalize_columns(&m.matmul_tn(&q));
        q = orthonormalize_columns(&m.matmul(&z));
    }
    // B = Q^T A, ell x cols; exact SVD of the small matrix.
    let b = q.matmul_tn(m);
    let small = svd_truncated(&b, r.min(b.rows().min(b.cols())))?;
    let mut u = q.matmul(&small.u);
    let mut vt = small.vt;
    canonicalize_signs(&mut u, &mut vt);
    Ok(SvdFactors {
        u,
        s: small.s,
        vt,
        rank: r,
    })
}

/// Gaussian matrix helper used by tests and the range finder.
pub fn gaussian_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = seeds::rng(seed, "gaussian-mat", 0);
    Mat::from_fn(rows, cols, |_, _| rng.sample(rand_distr::StandardNormal))
}
