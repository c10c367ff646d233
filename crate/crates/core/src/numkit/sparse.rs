//! Symmetric sparse matrix in CSR form.
//!
//! Used for thresholded structures and for normalized aggregation operators.
//! The full symmetric pattern is stored (both (i,j) and (j,i)), so products
//! need no transpose handling.

use crate::numkit::mat::Mat;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseStructure {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseStructure {
    /// Build from off-diagonal upper-triangle entries (i < j); each entry is
    /// mirrored. Diagonal weights can be supplied separately.
    pub fn from_upper_entries(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        Self::from_entries_with_diag(n, entries, None)
    }

    pub fn from_entries_with_diag(
        n: usize,
        entries: &[(usize, usize, f64)],
        diag: Option<&[f64]>,
    ) -> Self {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, w) in entries {
            assert!(i < j && j < n, "entries must be strict upper triangle");
            per_row[i].push((j, w));
            per_row[j].push((i, w));
        }
        if let Some(d) = diag {
            assert_eq!(d.len(), n);
            for (i, &w) in d.iter().enumerate() {
                if w != 0.0 {
                    per_row[i].push((i, w));
                }
            }
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(j, _)| j);
            for &(j, w) in row.iter() {
                indices.push(j);
                values.push(w);
            }
            indptr.push(indices.len());
        }
        SparseStructure {
            n,
            indptr,
            indices,
            values,
        }
    }

    /// Off-diagonal entries of a dense symmetric matrix that meet `keep`.
    pub fn from_dense_where(m: &Mat, keep: impl Fn(f64) -> bool) -> Self {
        assert_eq!(m.rows(), m.cols());
        let n = m.rows();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = m[(i, j)];
                if keep(w) {
                    entries.push((i, j, w));
                }
            }
        }
        Self::from_upper_entries(n, &entries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entry count including mirrored halves and diagonal.
    pub fn stored_len(&self) -> usize {
        self.values.len()
    }

    /// Number of undirected off-diagonal entries.
    pub fn nnz_undirected(&self) -> usize {
        let mut count = 0;
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                if self.indices[k] > i {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn is_empty_structure(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    /// Upper-triangle (i < j) entries.
    pub fn upper_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz_undirected());
        for i in 0..self.n {
            for (j, w) in self.row_entries(i) {
                if j > i {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn value_at(&self, i: usize, j: usize) -> f64 {
        for (jj, w) in self.row_entries(i) {
            if jj == j {
                return w;
            }
        }
        0.0
    }

    /// Row sums of S + I (degree vector of the self-looped structure).
    pub fn degree_with_self_loops(&self) -> Vec<f64> {
        let mut d = vec![1.0; self.n];
        for i in 0..self.n {
            for (j, w) in self.row_entries(i) {
                if j != i {
                    d[i] += w;
                }
            }
        }
        d
    }

    /// Dense product S * X.
    pub fn spmm(&self, x: &Mat) -> Mat {
        assert_eq!(x.rows(), self.n, "spmm shape mismatch");
        let cols = x.cols();
        let mut out = Mat::zeros(self.n, cols);
        for i in 0..self.n {
            let out_row_range = i * cols..(i + 1) * cols;
            let mut acc = vec![0.0; cols];
            for k in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[k];
                let w = self.values[k];
                let xr = x.row(j);
                for (a, &xv) in acc.iter_mut().zip(xr) {
                    *a += w * xv;
                }
            }
            out.data_mut()[out_row_range].copy_from_slice(&acc);
        }
        out
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.row_entries(i) {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Minimum stored off-diagonal value (None when structurally empty).
    pub fn min_value(&self) -> Option<f64> {
        self.values
            .iter()
            .cloned()
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            })
    }
}
