//! Latent structure induction: self-expressive coefficient fitting, spectral
//! structure generation, bootstrapping against the original adjacency, and
//! threshold truncation.

use crate::error::{Error, Result};
use crate::graph::{edge_homophily_ratio, Graph};
use crate::numkit::eigen::spd_inverse;
use crate::numkit::{randomized_svd, svd_truncated, Mat, SparseStructure, SvdFactors};
use serde::{Deserialize, Serialize};

/// Self-expressive coefficient matrix with zero diagonal.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub q: Mat,
    pub lambda1: f64,
}

/// Where a structure came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub round: usize,
    pub config_hash: u64,
    pub svd_path: SvdPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SvdPath {
    Exact,
    Randomized,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance {
            round: 0,
            config_hash: 0,
            svd_path: SvdPath::Exact,
        }
    }
}

/// Learned latent structure: dense symmetric matrix with entries in [0, 1].
#[derive(Debug, Clone)]
pub struct LatentStructure {
    s: Mat,
    pub provenance: Provenance,
}

impl LatentStructure {
    pub fn new(s: Mat, provenance: Provenance) -> Result<Self> {
        s.check_square()?;
        if !s.is_symmetric(1e-9) {
            return Err(Error::InvalidArgument(
                "latent structure must be symmetric".into(),
            ));
        }
        if s.data().iter().any(|&v| !v.is_finite() || !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(
                "latent structure entries must be finite and in [0, 1]".into(),
            ));
        }
        Ok(LatentStructure { s, provenance })
    }

    pub fn matrix(&self) -> &Mat {
        &self.s
    }

    pub fn n(&self) -> usize {
        self.s.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Closed-form ridge with the diagonal constraint folded in.
    ExactReducedRidge,
    /// Gradient descent with the diagonal projected to zero after each step.
    ProjectedGradient,
    /// Exact up to 512 nodes, projected gradient beyond.
    Auto,
}

/// Configuration for the structure inducer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InducerConfig {
    /// Ridge weight of the self-expressive objective.
    pub lambda1: f64,
    /// Subspace dimension per class; the SVD rank is K*d + 1.
    pub subspace_dim_k: usize,
    /// Blend weight toward the original adjacency. None picks the
    /// edge-homophily ratio of the input graph: heterophilic graphs lean on
    /// the learned structure, homophilic ones keep more of the original.
    pub zeta: Option<f64>,
    /// Truncation threshold for the soft structure.
    pub sigma: f64,
    pub solver: SolverKind,
    /// Structure-learning rounds.
    pub rounds: usize,
}

impl Default for InducerConfig {
    fn default() -> Self {
        InducerConfig {
            lambda1: 0.8,
            subspace_dim_k: 4,
            zeta: None,
            sigma: 0.85,
            solver: SolverKind::Auto,
            rounds: 2,
        }
    }
}

impl InducerConfig {
    pub fn svd_rank(&self, n_classes: usize) -> usize {
        self.subspace_dim_k * n_classes + 1
    }

    pub fn validate(&self, n_nodes: usize, n_classes: usize) -> Result<()> {
        if self.lambda1 <= 0.0 {
            return Err(Error::InvalidArgument("lambda1 must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::InvalidArgument("sigma must be in [0, 1]".into()));
        }
        if let Some(z) = self.zeta {
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::InvalidArgument("zeta must be in [0, 1]".into()));
            }
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be at least 1".into()));
        }
        let r = self.svd_rank(n_classes);
        if r > n_nodes {
            return Err(Error::RankOutOfRange { r, max: n_nodes });
        }
        Ok(())
    }

    pub fn resolve_zeta(&self, graph: &Graph) -> f64 {
        match self.zeta {
            Some(z) => z,
            None => edge_homophily_ratio(graph).unwrap_or(0.0),
        }
    }
}

/// Outcome of a self-expressive fit.
#[derive(Debug, Clone)]
pub struct FitInfo {
    pub solver_used: SolverKind,
    pub objective: f64,
    /// Objective of the all-zero coefficient matrix, ||X||_F^2.
    pub baseline_objective: f64,
    pub epochs_run: usize,
    pub objective_history: Vec<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SelfExpressiveFit {
    pub coefficients: Coefficients,
    pub info: FitInfo,
}

/// ||X - QX||_F^2 + lambda1 ||Q||_F^2.
pub fn self_expressive_objective(x: &Mat, q: &Mat, lambda1: f64) -> f64 {
    let residual = x.sub(&q.matmul(x));
    let r = residual.frobenius_norm();
    let f = q.frobenius_norm();
    r * r + lambda1 * f * f
}

const EXACT_SOLVER_MAX_N: usize = 512;

/// Fit the zero-diagonal self-expressive coefficients of the rows of `x`.
pub fn fit_self_expressive(x: &Mat, lambda1: f64, solver: SolverKind) -> Result<SelfExpressiveFit> {
    let n = x.rows();
    if n == 0 || x.cols() == 0 {
        return Err(Error::InvalidArgument(
            "feature matrix must be non-empty".into(),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "self-expression needs at least two rows".into(),
        ));
    }
    if lambda1 <= 0.0 {
        return Err(Error::InvalidArgument("lambda1 must be positive".into()));
    }
    let solver_used = match solver {
        SolverKind::Auto => {
            if n <= EXACT_SOLVER_MAX_N {
                SolverKind::ExactReducedRidge
            } else {
                SolverKind::ProjectedGradient
            }
        }
        s => s,
    };
    match solver_used {
        SolverKind::ExactReducedRidge => fit_exact(x, lambda1),
        SolverKind::ProjectedGradient => fit_projected_gradient(x, lambda1),
        SolverKind::Auto => unreachable!(),
    }
}

/// Closed form: with C = (X X^T + lambda I)^{-1}, the row-i ridge regression
/// of x_i on all other rows is Q_ij = -C_ij / C_ii (and zero on the
/// diagonal). Equivalent to excluding row i from the regression basis.
fn fit_exact(x: &Mat, lambda1: f64) -> Result<SelfExpressiveFit> {
    let n = x.rows();
    let mut g = x.matmul_nt(x);
    for i in 0..n {
        g[(i, i)] += lambda1;
    }
    let c = spd_inverse(&g)?;
    let mut q = Mat::zeros(n, n);
    for i in 0..n {
        let cii = c[(i, i)];
        for j in 0..n {
            if j != i {
                q[(i, j)] = -c[(i, j)] / cii;
            }
        }
    }
    let objective = self_expressive_objective(x, &q, lambda1);
    let baseline = {
        let f = x.frobenius_norm();
        f * f
    };
    Ok(SelfExpressiveFit {
        coefficients: Coefficients { q, lambda1 },
        info: FitInfo {
            solver_used: SolverKind::ExactReducedRidge,
            objective,
            baseline_objective: baseline,
            epochs_run: 0,
            objective_history: vec![objective],
            warning: None,
        },
    })
}

const PG_MAX_EPOCHS: usize = 400;
const PG_REL_TOL: f64 = 1e-10;

/// Gradient descent on the relaxed objective with a Lipschitz step size and
/// the diagonal projected back to zero after each step. The shared Gram
/// matrix X X^T is precomputed once.
fn fit_projected_gradient(x: &Mat, lambda1: f64) -> Result<SelfExpressiveFit> {
    let n = x.rows();
    let gram = x.matmul_nt(x);
    // Largest eigenvalue of the Gram matrix via power iteration.
    let mut v = Mat::from_fn(n, 1, |i, _| 1.0 + (i as f64 * 0.37).sin());
    let mut sigma_max = 0.0;
    for _ in 0..100 {
        let w = gram.matmul(&v);
        let norm = w.frobenius_norm();
        if norm == 0.0 {
            break;
        }
        sigma_max = norm / v.frobenius_norm();
        v = w.scale(1.0 / norm);
    }
    let lipschitz = 2.0 * (sigma_max + lambda1);
    let step = 1.0 / lipschitz;

    let mut q = Mat::zeros(n, n);
    let baseline = {
        let f = x.frobenius_norm();
        f * f
    };
    let mut history = vec![baseline];
    let mut warning = None;
    let mut epochs = 0;
    for epoch in 0..PG_MAX_EPOCHS {
        epochs = epoch + 1;
        // grad = 2 (Q G - G + lambda1 Q)
        let qg = q.matmul(&gram);
        let mut grad = qg.sub(&gram);
        grad.add_assign(&q.scale(lambda1));
        let mut next = q.sub(&grad.scale(2.0 * step));
        for i in 0..n {
            next[(i, i)] = 0.0;
        }
        q = next;
        let obj = self_expressive_objective(x, &q, lambda1);
        let prev = *history.last().unwrap();
        if obj > prev + 1e-12 * prev.abs().max(1.0) {
            warning = Some(format!(
                "objective did not decrease at epoch {epoch}: {prev} -> {obj}"
            ));
        }
        history.push(obj);
        if (prev - obj).abs() <= PG_REL_TOL * prev.abs().max(1e-300) {
            break;
        }
    }
    let objective = *history.last().unwrap();
    Ok(SelfExpressiveFit {
        coefficients: Coefficients { q, lambda1 },
        info: FitInfo {
            solver_used: SolverKind::ProjectedGradient,
            objective,
            baseline_objective: baseline,
            epochs_run: epochs,
            objective_history: history,
            warning,
        },
    })
}

const RANDOMIZED_SVD_MAX_EXACT_N: usize = 2048;
const RANDOMIZED_SVD_OVERSAMPLE: usize = 8;
const RANDOMIZED_SVD_POWER_ITERS: usize = 2;
const RANDOMIZED_SVD_SEED: u64 = 0x5eed_0001;

/// Generate the latent structure from fitted coefficients.
///
/// Steps: symmetrize Q; rank-r factorization with r = K*d + 1; form
/// L = U sqrt(Sigma) and scale its rows to unit norm (zero rows stay zero);
/// zero the negative entries; build the similarity L' L'^T; divide by the
/// largest absolute entry of L and clip into [0, 1].
pub fn generate_structure(
    coefficients: &Coefficients,
    n_classes: usize,
    subspace_dim_k: usize,
) -> Result<LatentStructure> {
    let q = &coefficients.q;
    q.check_square()?;
    let n = q.rows();
    let r = subspace_dim_k * n_classes + 1;
    if r > n {
        return Err(Error::RankOutOfRange { r, max: n });
    }
    let q_sym = q.add(&q.transpose()).scale(0.5);
    let (factors, svd_path): (SvdFactors, SvdPath) = if n <= RANDOMIZED_SVD_MAX_EXACT_N {
        (svd_truncated(&q_sym, r)?, SvdPath::Exact)
    } else {
        (
            randomized_svd(
                &q_sym,
                r,
                RANDOMIZED_SVD_OVERSAMPLE,
                RANDOMIZED_SVD_POWER_ITERS,
                RANDOMIZED_SVD_SEED,
            )?,
            SvdPath::Randomized,
        )
    };
    let mut l = factors.u.clone();
    for j in 0..r {
        let root = factors.s[j].max(0.0).sqrt();
        for i in 0..n {
            l[(i, j)] *= root;
        }
    }
    let l = l.row_unit();
    let max_abs = l.max_abs();
    if max_abs == 0.0 {
        return LatentStructure::new(
            Mat::zeros(n, n),
            Provenance {
                svd_path,
                ..Provenance::default()
            },
        );
    }
    let l_pos = l.map(|v| v.max(0.0));
    let similarity = l_pos.matmul_nt(&l_pos);
    let s = similarity.map(|v| (v / max_abs).clamp(0.0, 1.0));
    // Clamp wipes any rounding asymmetry only if both triangles round the
    // same way; symmetrize explicitly to be safe.
    let s = s.add(&s.transpose()).scale(0.5);
    LatentStructure::new(
        s,
        Provenance {
            svd_path,
            ..Provenance::default()
        },
    )
}

/// Blend toward the original adjacency: zeta * A + (1 - zeta) * S, entrywise.
pub fn bootstrap(structure: &LatentStructure, adjacency: &Mat, zeta: f64) -> Result<LatentStructure> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::InvalidArgument("zeta must be in [0, 1]".into()));
    }
    if adjacency.shape() != structure.matrix().shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", structure.matrix().shape()),
            got: format!("{:?}", adjacency.shape()),
        });
    }
    let blended = structure
        .matrix()
        .zip_with(adjacency, |s, a| zeta * a + (1.0 - zeta) * s);
    LatentStructure::new(blended, structure.provenance.clone())
}

/// Keep off-diagonal entries at or above `sigma` with their continuous
/// values. The diagonal is not part of the truncated structure; self-loops
/// enter later through normalization. An empty result is legal.
pub fn threshold(structure: &LatentStructure, sigma: f64) -> Result<SparseStructure> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::InvalidArgument("sigma must be in [0, 1]".into()));
    }
    Ok(SparseStructure::from_dense_where(structure.matrix(), |w| {
        w > 0.0 && w >= sigma
    }))
}

/// Feature-similarity baseline: cosine k-nearest-neighbor structure,
/// symmetrized by union. Zero-norm feature rows cannot be compared and are
/// excluded (reported in the result).
#[derive(Debug, Clone)]
pub struct KnnStructure {
    pub structure: SparseStructure,
    pub excluded_rows: Vec<usize>,
}

pub fn knn_similarity_structure(x: &Mat, k: usize) -> Result<KnnStructure> {
    let n = x.rows();
    if k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be below the node count {n}"
        )));
    }
    let unit = x.row_unit();
    let excluded_rows: Vec<usize> = (0..n).filter(|&i| x.row_norm(i) == 0.0).collect();
    let excluded: Vec<bool> = {
        let mut m = vec![false; n];
        for &i in &excluded_rows {
            m[i] = true;
        }
        m
    };
    let mut entries: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
    for i in 0..n {
        if excluded[i] {
            continue;
        }
        let mut sims: Vec<(usize, f64)> = Vec::with_capacity(n - 1);
        for j in 0..n {
            if j == i || excluded[j] {
                continue;
            }
            let mut dot = 0.0;
            for (a, b) in unit.row(i).iter().zip(unit.row(j)) {
                dot += a * b;
            }
            sims.push((j, dot));
        }
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(j, sim) in sims.iter().take(k) {
            let key = (i.min(j), i.max(j));
            let slot = entries.entry(key).or_insert(sim);
            if sim > *slot {
                *slot = sim;
            }
        }
    }
    let flat: Vec<(usize, usize, f64)> =
        entries.into_iter().map(|((i, j), w)| (i, j, w)).collect();
    Ok(KnnStructure {
        structure: SparseStructure::from_upper_entries(n, &flat),
        excluded_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::svd::gaussian_mat;

    /// Literal per-row oracle: ridge regression of row i on the other rows,
    /// solved as an (n-1)-sized dense system by Gaussian elimination.
    fn reduced_ridge_oracle(x: &Mat, lambda1: f64) -> Mat {
        let n = x.rows();
        let f = x.cols();
        let mut q = Mat::zeros(n, n);
        for i in 0..n {
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let m = others.len();
            // A = X_others X_others^T + lambda I, b = X_others x_i
            let mut a = vec![vec![0.0; m + 1]; m];
            for (r, &jr) in others.iter().enumerate() {
                for (c, &jc) in others.iter().enumerate() {
                    let mut dot = 0.0;
                    for t in 0..f {
                        dot += x[(jr, t)] * x[(jc, t)];
                    }
                    a[r][c] = dot;
                }
                a[r][r] += lambda1;
                let mut dot = 0.0;
                for t in 0..f {
                    dot += x[(jr, t)] * x[(i, t)];
                }
                a[r][m] = dot;
            }
            // Gaussian elimination with partial pivoting.
            for col in 0..m {
                let mut piv = col;
                for r in (col + 1)..m {
                    if a[r][col].abs() > a[piv][col].abs() {
                        piv = r;
                    }
                }
                a.swap(col, piv);
                let d = a[col][col];
                for c in col..=m {
                    a[col][c] /= d;
                }
                for r in 0..m {
                    if r != col && a[r][col] != 0.0 {
                        let factor = a[r][col];
                        for c in col..=m {
                            a[r][c] -= factor * a[col][c];
                        }
                    }
                }
            }
            for (r, &j) in others.iter().enumerate() {
                q[(i, j)] = a[r][m];
            }
        }
        q
    }

    #[test]
    fn exact_solver_matches_row_exclusion_oracle() {
        for seed in 0..4 {
            let x = gaussian_mat(8, 5, seed);
            let fit = fit_self_expressive(&x, 0.5, SolverKind::ExactReducedRidge).unwrap();
            let oracle = reduced_ridge_oracle(&x, 0.5);
            assert!(
                fit.coefficients.q.sub(&oracle).max_abs() < 1e-9,
                "closed form diverges from the literal exclusion solve"
            );
        }
    }

    #[test]
    fn huge_ridge_shrinks_coefficients_to_zero() {
        let x = gaussian_mat(6, 4, 9).row_unit();
        let fit = fit_self_expressive(&x, 1e6, SolverKind::ExactReducedRidge).unwrap();
        assert!(fit.coefficients.q.max_abs() <= 1e-5);
    }

    #[test]
    fn duplicate_rows_dominate_each_other() {
        // Rows 0 and 1 identical, row 2 orthogonal to both.
        let x = Mat::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ]);
        let fit = fit_self_expressive(&x, 0.01, SolverKind::ExactReducedRidge).unwrap();
        let q = &fit.coefficients.q;
        let oracle = reduced_ridge_oracle(&x, 0.01);
        assert!(q.sub(&oracle).max_abs() < 1e-9);
        assert!(q[(0, 1)] > 10.0 * q[(0, 2)].abs());
        assert!(q[(1, 0)] > 10.0 * q[(1, 2)].abs());
    }

    #[test]
    fn diagonal_is_exactly_zero() {
        let x = gaussian_mat(10, 6, 17);
        for solver in [SolverKind::ExactReducedRidge, SolverKind::ProjectedGradient] {
            let fit = fit_self_expressive(&x, 0.3, solver).unwrap();
            for i in 0..10 {
                assert_eq!(fit.coefficients.q[(i, i)], 0.0);
            }
        }
    }

    #[test]
    fn projected_gradient_matches_exact_objective() {
        let x = gaussian_mat(16, 8, 23);
        let exact = fit_self_expressive(&x, 0.7, SolverKind::ExactReducedRidge).unwrap();
        let pg = fit_self_expressive(&x, 0.7, SolverKind::ProjectedGradient).unwrap();
        let rel = (pg.info.objective - exact.info.objective).abs() / exact.info.objective;
        assert!(rel < 1e-3, "relative objective gap {rel}");
        assert!(pg.info.objective <= pg.info.baseline_objective);
    }

    #[test]
    fn projected_gradient_objective_is_monotone() {
        let x = gaussian_mat(12, 5, 31);
        let pg = fit_self_expressive(&x, 0.4, SolverKind::ProjectedGradient).unwrap();
        for w in pg.info.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
        assert!(pg.info.warning.is_none());
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(fit_self_expressive(&Mat::zeros(0, 0), 1.0, SolverKind::Auto).is_err());
        assert!(fit_self_expressive(&Mat::zeros(4, 0), 1.0, SolverKind::Auto).is_err());
        assert!(fit_self_expressive(&gaussian_mat(4, 2, 0), 0.0, SolverKind::Auto).is_err());
    }

    #[test]
    fn zero_coefficients_give_zero_structure() {
        let q = Coefficients {
            q: Mat::zeros(8, 8),
            lambda1: 1.0,
        };
        let s = generate_structure(&q, 2, 2).unwrap();
        assert_eq!(s.matrix().max_abs(), 0.0);
    }

    #[test]
    fn rank_above_node_count_is_rejected() {
        let q = Coefficients {
            q: Mat::zeros(5, 5),
            lambda1: 1.0,
        };
        assert!(matches!(
            generate_structure(&q, 2, 3),
            Err(Error::RankOutOfRange { r: 7, max: 5 })
        ));
    }

    #[test]
    fn structure_is_symmetric_unit_interval_for_random_q() {
        for seed in 0..6 {
            let q = Coefficients {
                q: gaussian_mat(12, 12, 40 + seed),
                lambda1: 1.0,
            };
            let s = generate_structure(&q, 2, 2).unwrap();
            assert!(s.matrix().is_symmetric(1e-12));
            for &v in s.matrix().data() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn structure_is_permutation_equivariant() {
        use rand::seq::SliceRandom;
        use rand_chacha::rand_core::SeedableRng;
        let n = 10;
        let qmat = gaussian_mat(n, n, 77);
        let s = generate_structure(
            &Coefficients {
                q: qmat.clone(),
                lambda1: 1.0,
            },
            2,
            2,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let qp = Mat::from_fn(n, n, |i, j| qmat[(perm[i], perm[j])]);
        let sp = generate_structure(
            &Coefficients {
                q: qp,
                lambda1: 1.0,
            },
            2,
            2,
        )
        .unwrap();
        let expected = Mat::from_fn(n, n, |i, j| s.matrix()[(perm[i], perm[j])]);
        assert!(
            sp.matrix().sub(&expected).max_abs() < 1e-8,
            "permuting the coefficients must permute the structure"
        );
    }

    #[test]
    fn bootstrap_limits_and_arithmetic() {
        let s = LatentStructure::new(
            Mat::from_rows(&[vec![0.0, 0.2], vec![0.2, 0.0]]),
            Provenance::default(),
        )
        .unwrap();
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let full = bootstrap(&s, &a, 1.0).unwrap();
        assert!(full.matrix().sub(&a).max_abs() < 1e-15);
        let none = bootstrap(&s, &a, 0.0).unwrap();
        assert!(none.matrix().sub(s.matrix()).max_abs() < 1e-15);
        let half = bootstrap(&s, &a, 0.5).unwrap();
        assert!((half.matrix()[(0, 1)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_composes_affinely() {
        let s = LatentStructure::new(
            Mat::from_rows(&[vec![0.0, 0.4], vec![0.4, 0.0]]),
            Provenance::default(),
        )
        .unwrap();
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let (z1, z2) = (0.3, 0.25);
        let twice = bootstrap(&bootstrap(&s, &a, z1).unwrap(), &a, z2).unwrap();
        let combined = 1.0 - (1.0 - z1) * (1.0 - z2);
        let once = bootstrap(&s, &a, combined).unwrap();
        assert!(twice.matrix().sub(once.matrix()).max_abs() < 1e-12);
    }

    #[test]
    fn threshold_keep_rules() {
        let mut m = Mat::zeros(3, 3);
        m[(0, 1)] = 0.95;
        m[(1, 0)] = 0.95;
        m[(0, 2)] = 0.90;
        m[(2, 0)] = 0.90;
        m[(1, 2)] = 0.92;
        m[(2, 1)] = 0.92;
        let s = LatentStructure::new(m, Provenance::default()).unwrap();
        let kept = threshold(&s, 0.91).unwrap();
        assert_eq!(kept.nnz_undirected(), 2);
        assert_eq!(kept.value_at(0, 1), 0.95);
        assert_eq!(kept.value_at(1, 2), 0.92);
        assert_eq!(kept.value_at(0, 2), 0.0);

        let all = threshold(&s, 0.0).unwrap();
        assert_eq!(all.nnz_undirected(), 3);
        let none = threshold(&s, 0.99).unwrap();
        assert!(none.is_empty_structure());
        // Kept values never fall below sigma.
        assert!(kept.min_value().unwrap() >= 0.91);
    }

    #[test]
    fn knn_duplicates_and_orthogonal_rows() {
        let x = Mat::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]);
        let knn = knn_similarity_structure(&x, 1).unwrap();
        assert!((knn.structure.value_at(0, 1) - 1.0).abs() < 1e-12);
        let ortho = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let knn1 = knn_similarity_structure(&ortho, 1).unwrap();
        assert_eq!(knn1.structure.value_at(0, 1), 0.0);
        // the edge exists structurally even though the similarity is zero
        assert_eq!(knn1.structure.nnz_undirected(), 1);
    }

    #[test]
    fn knn_excludes_zero_norm_rows() {
        let x = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.1]]);
        let knn = knn_similarity_structure(&x, 1).unwrap();
        assert_eq!(knn.excluded_rows, vec![1]);
        assert_eq!(knn.structure.value_at(0, 1), 0.0);
        assert!(knn.structure.value_at(0, 2) > 0.9);
    }
}
