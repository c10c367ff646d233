//! Symmetric eigensolver (Householder tridiagonalization followed by implicit
//! QL with shifts) and a Cholesky factorization for SPD solves. Both are
//! deterministic: no pivot randomization, fixed iteration order.

use crate::error::{Error, Result};
use crate::numkit::mat::Mat;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns of an orthogonal matrix.
pub fn sym_eigen_desc(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    a.check_square()?;
    let n = a.rows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let mut z = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut z, &mut d, &mut e);
    tql2(&mut d, &mut e, &mut z)?;
    // Sort descending with a deterministic index sort.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap().then(i.cmp(&j)));
    let vals: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            vecs[(i, new_j)] = z[(i, old_j)];
        }
    }
    Ok((vals, vecs))
}

/// Householder reduction to tridiagonal form with accumulated transforms.
fn tred2(z: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut scale = 0.0;
            for k in 0..=l {
                scale += z[(i, k)].abs();
            }
            if scale == 0.0 {
                e[i] = z[(i, l)];
            } else {
                for k in 0..=l {
                    z[(i, k)] /= scale;
                    h += z[(i, k)] * z[(i, k)];
                }
                let f = z[(i, l)];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[(i, l)] = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    z[(j, i)] = z[(i, j)] / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += z[(j, k)] * z[(i, k)];
                    }
                    for k in (j + 1)..=l {
                        g_acc += z[(k, j)] * z[(i, k)];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * z[(i, j)];
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = z[(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let delta = f * e[k] + g * z[(i, k)];
                        z[(j, k)] -= delta;
                    }
                }
            }
        } else {
            e[i] = z[(i, l)];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += z[(i, k)] * z[(k, j)];
                }
                for k in 0..i {
                    let delta = g * z[(k, i)];
                    z[(k, j)] -= delta;
                }
            }
        }
        d[i] = z[(i, i)];
        z[(i, i)] = 1.0;
        for j in 0..i {
            z[(j, i)] = 0.0;
            z[(i, j)] = 0.0;
        }
    }
}

/// QL with implicit shifts on a tridiagonal matrix, rotating `z` along.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut Mat) -> Result<()> {
    let n = d.len();
    if n == 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NonConvergence { iterations: 60 });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            let sign_r = if g >= 0.0 { r.abs() } else { -r.abs() };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[(k, i + 1)];
                    z[(k, i + 1)] = s * z[(k, i)] + c * f;
                    z[(k, i)] = c * z[(k, i)] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    a.check_square()?;
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if acc <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "Cholesky pivot {acc:.3e} at index {i}; matrix not positive definite"
                    )));
                }
                l[(i, j)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solve A X = B given the Cholesky factor L of A (A = L L^T).
pub fn cholesky_solve(l: &Mat, b: &Mat) -> Mat {
    let n = l.rows();
    assert_eq!(b.rows(), n);
    let m = b.cols();
    let mut x = b.clone();
    // Forward: L y = b.
    for i in 0..n {
        for j in 0..m {
            let mut acc = x[(i, j)];
            for k in 0..i {
                acc -= l[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = acc / l[(i, i)];
        }
    }
    // Backward: L^T x = y.
    for i in (0..n).rev() {
        for j in 0..m {
            let mut acc = x[(i, j)];
            for k in (i + 1)..n {
                acc -= l[(k, i)] * x[(k, j)];
            }
            x[(i, j)] = acc / l[(i, i)];
        }
    }
    x
}

/// Inverse of an SPD matrix via its Cholesky factor.
pub fn spd_inverse(a: &Mat) -> Result<Mat> {
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, &Mat::eye(a.rows())))
}

/// Modified Gram-Schmidt orthonormalization of the columns of `a`, run twice
/// for stability. Columns that vanish are dropped.
pub fn orthonormalize_columns(a: &Mat) -> Mat {
    let (n, m) = a.shape();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut v: Vec<f64> = (0..n).map(|i| a[(i, j)]).collect();
        for _pass in 0..2 {
            for q in &cols {
                let mut dot = 0.0;
                for i in 0..n {
                    dot += q[i] * v[i];
                }
                for i in 0..n {
                    v[i] -= dot * q[i];
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in &mut v {
                *x /= norm;
            }
            cols.push(v);
        }
    }
    let mut out = Mat::zeros(n, cols.len());
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn random_symmetric(n: usize, seed: u64) -> Mat {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        for seed in 0..5 {
            let n = 12;
            let a = random_symmetric(n, seed);
            let (vals, vecs) = sym_eigen_desc(&a).unwrap();
            // A = V diag(vals) V^T
            let mut lam = Mat::zeros(n, n);
            for i in 0..n {
                lam[(i, i)] = vals[i];
            }
            let rec = vecs.matmul(&lam).matmul(&vecs.transpose());
            assert!(rec.sub(&a).frobenius_norm() < 1e-10 * a.frobenius_norm().max(1.0));
            // V orthogonal
            let vtv = vecs.matmul_tn(&vecs);
            assert!(vtv.sub(&Mat::eye(n)).frobenius_norm() < 1e-10);
            // descending
            for w in vals.windows(2) {
                assert!(w[0] >= w[1] - 1e-12);
            }
        }
    }

    #[test]
    fn eigen_known_diagonal() {
        let a = Mat::from_rows(&[
            vec![2.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 5.0],
        ]);
        let (vals, _) = sym_eigen_desc(&a).unwrap();
        assert!((vals[0] - 5.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
        assert!((vals[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        for seed in 0..3 {
            let n = 10;
            let b = random_symmetric(n, seed + 100);
            // SPD: B B^T + n I
            let mut a = b.matmul_nt(&b);
            for i in 0..n {
                a[(i, i)] += n as f64;
            }
            let l = cholesky(&a).unwrap();
            let rhs = random_symmetric(n, seed + 200);
            let x = cholesky_solve(&l, &rhs);
            let res = a.matmul(&x).sub(&rhs).frobenius_norm();
            assert!(res < 1e-9 * rhs.frobenius_norm());
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn mgs_produces_orthonormal_columns() {
        let a = random_symmetric(8, 42);
        let q = orthonormalize_columns(&a);
        let qtq = q.matmul_tn(&q);
        assert!(qtq.sub(&Mat::eye(q.cols())).frobenius_norm() < 1e-10);
    }
}
