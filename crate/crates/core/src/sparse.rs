//! Compressed sparse row storage and a banded LU factorization with partial
//! pivoting.
//!
//! The structured meshes number nodes lexicographically, so every assembled
//! operator has a bandwidth of roughly one grid row. A band factorization is
//! then a direct sparse solver with fill confined to the band, and it is
//! bit-for-bit deterministic.

use crate::error::{Error, Result};

/// Sparse matrix in CSR form. Column indices are sorted within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed
    /// in the order they were pushed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            debug_assert!(r < nrows && c < ncols);
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            // stable sort keeps the summation order of duplicates fixed
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut acc = 0.0;
                while k < row.len() && row[k].0 == c {
                    acc += row[k].1;
                    k += 1;
                }
                indices.push(c);
                data.push(acc);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Iterates over the stored entries of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.data[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.data[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                out[c] += v * xr;
            }
        }
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        CsrMatrix::from_triplets(self.ncols, self.nrows, &triplets)
    }

    /// Entrywise `self + alpha * other` for matrices of equal shape.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            triplets.extend(self.row(r).map(|(c, v)| (r, c, v)));
            triplets.extend(other.row(r).map(|(c, v)| (r, c, alpha * v)));
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    /// Adds `diag[i]` to entry `(i, i)`.
    pub fn add_diagonal(&self, diag: &[f64]) -> CsrMatrix {
        assert_eq!(self.nrows, self.ncols);
        assert_eq!(diag.len(), self.nrows);
        let mut triplets = Vec::with_capacity(self.nnz() + self.nrows);
        for r in 0..self.nrows {
            triplets.extend(self.row(r).map(|(c, v)| (r, c, v)));
            triplets.push((r, r, diag[r]));
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    /// Row-major dense copy; meant for small matrices in tests and oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        out
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for r in 0..self.nrows {
            for (c, _) in self.row(r) {
                if c < r {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Reciprocal-condition threshold below which a factorization is rejected.
const MIN_RCOND: f64 = 1e-14;

/// LU factorization `P A = L U` of a square band matrix with partial pivoting.
///
/// Column-major band storage; row interchanges widen the upper band of `U`
/// to `kl + ku`. Multipliers are kept unpermuted (LINPACK order), so solves
/// interleave the row swaps with the elimination steps.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    // upper bandwidth of U after fill
    ku_fill: usize,
    ld: usize,
    // ab[j * ld + (ku_fill + i - j)] holds entry (i, j)
    ab: Vec<f64>,
    pivots: Vec<usize>,
    condition_estimate: f64,
}

impl BandLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::InvalidInput(format!(
                "cannot factor a {}x{} matrix",
                a.nrows, a.ncols
            )));
        }
        let n = a.nrows;
        let (kl, ku) = a.bandwidths();
        let ku_fill = (kl + ku).min(n.saturating_sub(1));
        let ld = kl + ku_fill + 1;
        let diag_row = ku_fill;
        let mut ab = vec![0.0; ld * n];
        for r in 0..n {
            for (c, v) in a.row(r) {
                ab[c * ld + diag_row + r - c] += v;
            }
        }
        let idx = |i: usize, j: usize| j * ld + diag_row + i - j;

        let scale = a.max_abs();
        let mut pivots = vec![0usize; n];
        let (mut umax, mut umin) = (0.0f64, f64::INFINITY);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut pmax = ab[idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = ab[idx(i, k)].abs();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            pivots[k] = p;
            let last_col = (k + ku_fill).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    ab.swap(idx(k, j), idx(p, j));
                }
            }
            let pivot = ab[idx(k, k)];
            umax = umax.max(pivot.abs());
            umin = umin.min(pivot.abs());
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::SingularSystem {
                    condition: f64::INFINITY,
                });
            }
            for i in k + 1..=last_row {
                let l = ab[idx(i, k)] / pivot;
                ab[idx(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let ukj = ab[idx(k, j)];
                        ab[idx(i, j)] -= l * ukj;
                    }
                }
            }
        }
        let condition_estimate = if n == 0 { 1.0 } else { umax / umin };
        if n > 0 && (umin <= MIN_RCOND * scale || condition_estimate > 1.0 / MIN_RCOND) {
            return Err(Error::SingularSystem {
                condition: condition_estimate,
            });
        }
        Ok(Self {
            n,
            kl,
            ku_fill,
            ld,
            ab,
            pivots,
            condition_estimate,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Ratio of the largest to the smallest pivot of `U`; a cheap lower bound
    /// proxy for the condition number.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.ab[j * self.ld + self.ku_fill + i - j]
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        // forward: apply P and L
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n.saturating_sub(1)) {
                    x[i] -= self.at(i, k) * xk;
                }
            }
        }
        // backward: U
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in k + 1..=(k + self.ku_fill).min(n - 1) {
                acc -= self.at(k, j) * x[j];
            }
            x[k] = acc / self.at(k, k);
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        // U^T w = b
        for k in 0..n {
            let lo = k.saturating_sub(self.ku_fill);
            let mut acc = x[k];
            for j in lo..k {
                acc -= self.at(j, k) * x[j];
            }
            x[k] = acc / self.at(k, k);
        }
        // L^T then P^T, in reverse elimination order
        for k in (0..n).rev() {
            let mut acc = x[k];
            for i in k + 1..=(k + self.kl).min(n.saturating_sub(1)) {
                acc -= self.at(i, k) * x[i];
            }
            x[k] = acc;
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        // nonsymmetric, needs pivoting in the first column
        let t = vec![
            (0, 0, 1e-3),
            (0, 1, 2.0),
            (1, 0, 3.0),
            (1, 1, 1.0),
            (1, 2, -1.0),
            (2, 1, 0.5),
            (2, 2, 4.0),
            (2, 3, 1.0),
            (3, 2, -2.0),
            (3, 3, 5.0),
        ];
        CsrMatrix::from_triplets(4, 4, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.5), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 1), 3.5);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn solve_and_transpose_solve_invert_the_matrix() {
        let a = sample();
        let lu = BandLu::factor(&a).unwrap();
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = a.matvec(&x);
        let got = lu.solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-12);
        }
        let bt = a.transpose_matvec(&x);
        let got = lu.solve_transpose(&bt);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)]);
        match BandLu::factor(&a) {
            Err(Error::SingularSystem { condition }) => assert!(condition > 1e13),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn transpose_matches_transpose_matvec() {
        let a = sample();
        let x = vec![0.3, 1.0, -1.0, 2.0];
        assert_eq!(a.transpose().matvec(&x), a.transpose_matvec(&x));
    }
}
