//! Complex sparse matrices in canonical row-major form.
//!
//! Rows are sorted by column, duplicates are merged and exact zeros are
//! dropped, so two operators with the same entries compare equal.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::exec::Exec;
use crate::{Error, Result};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
    hermitian: bool,
    basis_id: String,
}

fn canonical_row(mut row: Vec<(usize, C64)>) -> Vec<(usize, C64)> {
    row.sort_by_key(|&(c, _)| c);
    let mut out: Vec<(usize, C64)> = Vec::with_capacity(row.len());
    for (c, v) in row {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => out.push((c, v)),
        }
    }
    out.retain(|&(_, v)| v != ZERO);
    out
}

impl SparseOp {
    /// Builds from per-row entry lists; rows need not be sorted or merged.
    pub fn from_rows(
        nrows: usize,
        ncols: usize,
        rows: Vec<Vec<(usize, C64)>>,
        basis_id: impl Into<String>,
    ) -> Self {
        assert_eq!(rows.len(), nrows, "row count mismatch");
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (c, v) in canonical_row(row) {
                assert!(c < ncols, "column index {c} out of range {ncols}");
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseOp { nrows, ncols, row_ptr, col_idx, vals, hermitian: false, basis_id: basis_id.into() }
    }

    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, C64)>,
        basis_id: impl Into<String>,
    ) -> Self {
        let mut rows = vec![Vec::new(); nrows];
        for (r, c, v) in triplets {
            assert!(r < nrows, "row index {r} out of range {nrows}");
            rows[r].push((c, v));
        }
        Self::from_rows(nrows, ncols, rows, basis_id)
    }

    pub fn zeros(nrows: usize, ncols: usize, basis_id: impl Into<String>) -> Self {
        Self::from_rows(nrows, ncols, vec![Vec::new(); nrows], basis_id).flagged(nrows == ncols)
    }

    pub fn identity(n: usize, basis_id: impl Into<String>) -> Self {
        Self::diagonal(&vec![1.0; n], basis_id)
    }

    pub fn diagonal(d: &[f64], basis_id: impl Into<String>) -> Self {
        let rows = d.iter().enumerate().map(|(i, &x)| vec![(i, C64::new(x, 0.0))]).collect();
        Self::from_rows(d.len(), d.len(), rows, basis_id).flagged(true)
    }

    pub fn from_dense(m: &DMatrix<C64>, basis_id: impl Into<String>) -> Self {
        let rows = (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| (c, m[(r, c)])).collect())
            .collect();
        Self::from_rows(m.nrows(), m.ncols(), rows, basis_id)
    }

    fn flagged(mut self, hermitian: bool) -> Self {
        self.hermitian = hermitian && self.nrows == self.ncols;
        self
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Dimension of a square operator.
    pub fn dim(&self) -> usize {
        debug_assert_eq!(self.nrows, self.ncols);
        self.nrows
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn basis_id(&self) -> &str {
        &self.basis_id
    }

    pub fn with_basis_id(mut self, id: impl Into<String>) -> Self {
        self.basis_id = id.into();
        self
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn row(&self, r: usize) -> (&[usize], &[C64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.vals[a..b])
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cs, vs) = self.row(r);
            cs.iter().zip(vs).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let (cs, vs) = self.row(r);
        match cs.binary_search(&c) {
            Ok(k) => vs[k],
            Err(_) => ZERO,
        }
    }

    fn rows_vec(&self) -> Vec<Vec<(usize, C64)>> {
        (0..self.nrows)
            .map(|r| {
                let (cs, vs) = self.row(r);
                cs.iter().copied().zip(vs.iter().copied()).collect()
            })
            .collect()
    }

    pub fn map_values(&self, f: impl Fn(C64) -> C64) -> SparseOp {
        let mut out = self.clone();
        for v in out.vals.iter_mut() {
            *v = f(*v);
        }
        let row_ptr_ok = out.vals.iter().all(|v| *v != ZERO);
        if row_ptr_ok {
            out.hermitian = false;
            out
        } else {
            SparseOp::from_rows(out.nrows, out.ncols, out.rows_vec(), out.basis_id.clone())
        }
    }

    pub fn scale(&self, c: C64) -> SparseOp {
        let herm = self.hermitian && c.im == 0.0;
        self.map_values(|v| v * c).flagged(herm)
    }

    pub fn scale_re(&self, c: f64) -> SparseOp {
        self.scale(C64::new(c, 0.0))
    }

    pub fn conj(&self) -> SparseOp {
        let herm = self.hermitian;
        self.map_values(|v| v.conj()).flagged(herm)
    }

    pub fn transpose(&self) -> SparseOp {
        let mut rows = vec![Vec::new(); self.ncols];
        for (r, c, v) in self.entries() {
            rows[c].push((r, v));
        }
        SparseOp::from_rows(self.ncols, self.nrows, rows, self.basis_id.clone()).flagged(self.hermitian)
    }

    pub fn adjoint(&self) -> SparseOp {
        if self.hermitian {
            return self.clone();
        }
        let mut rows = vec![Vec::new(); self.ncols];
        for (r, c, v) in self.entries() {
            rows[c].push((r, v.conj()));
        }
        SparseOp::from_rows(self.ncols, self.nrows, rows, self.basis_id.clone())
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, other: &SparseOp, c: C64) -> SparseOp {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols), "shape mismatch");
        let rows = (0..self.nrows)
            .map(|r| {
                let (ca, va) = self.row(r);
                let (cb, vb) = other.row(r);
                let mut row: Vec<(usize, C64)> = ca.iter().copied().zip(va.iter().copied()).collect();
                row.extend(cb.iter().zip(vb).map(|(&k, &v)| (k, v * c)));
                row
            })
            .collect();
        let herm = self.hermitian && other.hermitian && c.im == 0.0;
        SparseOp::from_rows(self.nrows, self.ncols, rows, self.basis_id.clone()).flagged(herm)
    }

    pub fn add(&self, other: &SparseOp) -> SparseOp {
        self.add_scaled(other, C64::new(1.0, 0.0))
    }

    pub fn sub(&self, other: &SparseOp) -> SparseOp {
        self.add_scaled(other, C64::new(-1.0, 0.0))
    }

    pub fn matmul(&self, other: &SparseOp, exec: Exec) -> SparseOp {
        assert_eq!(self.ncols, other.nrows, "inner dimension mismatch");
        let rows = exec.map_range(self.nrows, |r| {
            let mut acc: Vec<(usize, C64)> = Vec::new();
            let (ca, va) = self.row(r);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                acc.extend(cb.iter().zip(vb).map(|(&c, &b)| (c, a * b)));
            }
            acc
        });
        SparseOp::from_rows(self.nrows, other.ncols, rows, self.basis_id.clone())
    }

    /// `ab - ba`.
    pub fn commutator(a: &SparseOp, b: &SparseOp, exec: Exec) -> SparseOp {
        a.matmul(b, exec).sub(&b.matmul(a, exec))
    }

    /// `(X + X*)/2`, stored exactly Hermitian.
    pub fn hermitian_part(&self) -> SparseOp {
        let adj = self.adjoint();
        let half = C64::new(0.5, 0.0);
        let rows = (0..self.nrows)
            .map(|r| {
                let (ca, va) = self.row(r);
                let (cb, vb) = adj.row(r);
                let mut row: Vec<(usize, C64)> = ca.iter().map(|&c| (c, ZERO)).collect();
                row.extend(cb.iter().map(|&c| (c, ZERO)));
                let mut row = canonical_row_keep(row);
                for e in row.iter_mut() {
                    let x = match ca.binary_search(&e.0) {
                        Ok(k) => va[k],
                        Err(_) => ZERO,
                    };
                    let y = match cb.binary_search(&e.0) {
                        Ok(k) => vb[k],
                        Err(_) => ZERO,
                    };
                    // (x + conj(x_T)) / 2 with a fixed operand order so the
                    // transposed entry is the exact conjugate.
                    e.1 = if r <= e.0 { (x + y) * half } else { (y + x) * half };
                }
                row
            })
            .collect();
        SparseOp::from_rows(self.nrows, self.ncols, rows, self.basis_id.clone()).flagged(true)
    }

    /// Largest `|x_rc - conj(x_cr)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        self.entries()
            .map(|(r, c, v)| (v - self.get(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Sets the Hermitian flag after an exact check.
    pub fn into_hermitian(self) -> Result<SparseOp> {
        let d = self.hermiticity_defect();
        if d == 0.0 {
            Ok(self.flagged(true))
        } else {
            Err(Error::NotHermitian(d))
        }
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols, "vector length mismatch");
        (0..self.nrows)
            .map(|r| {
                let (cs, vs) = self.row(r);
                cs.iter().zip(vs).fold(ZERO, |acc, (&c, &v)| acc + v * x[c])
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        m
    }

    /// Kronecker product, `a` on the slow (outer) index.
    pub fn kron(a: &SparseOp, b: &SparseOp) -> SparseOp {
        let (br, bc) = (b.nrows, b.ncols);
        let mut rows = vec![Vec::new(); a.nrows * br];
        for (ra, ca, va) in a.entries() {
            for (rb, cb, vb) in b.entries() {
                rows[ra * br + rb].push((ca * bc + cb, va * vb));
            }
        }
        let id = format!("{}⊗{}", a.basis_id, b.basis_id);
        SparseOp::from_rows(a.nrows * br, a.ncols * bc, rows, id).flagged(a.hermitian && b.hermitian)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &SparseOp) -> f64 {
        self.sub(other).max_abs()
    }

    /// Maximum absolute row sum; an upper bound for the spectral norm of a
    /// Hermitian operator.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().map(|v| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).sum()
    }

    /// Submatrix on the given row and column index lists.
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> SparseOp {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let out = rows
            .iter()
            .map(|&r| {
                let (cs, vs) = self.row(r);
                cs.iter()
                    .zip(vs)
                    .filter(|(&c, _)| col_map[c] != usize::MAX)
                    .map(|(&c, &v)| (col_map[c], v))
                    .collect()
            })
            .collect();
        let herm = self.hermitian && rows == cols;
        SparseOp::from_rows(rows.len(), cols.len(), out, self.basis_id.clone()).flagged(herm)
    }

    /// Keeps only the listed columns in place (other columns zeroed).
    pub fn mask_cols(&self, keep: &[bool]) -> SparseOp {
        let rows = (0..self.nrows)
            .map(|r| {
                let (cs, vs) = self.row(r);
                cs.iter().zip(vs).filter(|(&c, _)| keep[c]).map(|(&c, &v)| (c, v)).collect()
            })
            .collect();
        SparseOp::from_rows(self.nrows, self.ncols, rows, self.basis_id.clone())
    }

    /// `P X P^T` for the permutation sending index `i` to `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> SparseOp {
        assert_eq!(perm.len(), self.nrows);
        assert_eq!(self.nrows, self.ncols);
        let mut rows = vec![Vec::new(); self.nrows];
        for (r, c, v) in self.entries() {
            rows[perm[r]].push((perm[c], v));
        }
        SparseOp::from_rows(self.nrows, self.ncols, rows, self.basis_id.clone()).flagged(self.hermitian)
    }
}

fn canonical_row_keep(mut row: Vec<(usize, C64)>) -> Vec<(usize, C64)> {
    row.sort_by_key(|&(c, _)| c);
    row.dedup_by_key(|e| e.0);
    row
}

/// Max-abs entry of a dense matrix.
pub fn dense_max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sample() -> SparseOp {
        SparseOp::from_triplets(
            3,
            3,
            vec![(0, 1, c(1.0, 2.0)), (0, 1, c(1.0, 0.0)), (2, 0, c(0.0, -1.0)), (1, 1, c(0.0, 0.0))],
            "t",
        )
    }

    #[test]
    fn canonical_merges_and_drops_zeros() {
        let a = sample();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), c(2.0, 2.0));
        assert_eq!(a.get(1, 1), c(0.0, 0.0));
    }

    #[test]
    fn adjoint_matches_dense() {
        let a = sample();
        assert_eq!(a.adjoint().to_dense(), a.to_dense().adjoint());
    }

    #[test]
    fn matmul_matches_dense() {
        let a = sample();
        let b = a.adjoint().add(&SparseOp::identity(3, "t"));
        let p = a.matmul(&b, Exec::Sequential).to_dense();
        let q = a.to_dense() * b.to_dense();
        assert!(dense_max_abs(&(p - q)) < 1e-15);
        assert_eq!(a.matmul(&b, Exec::Parallel), a.matmul(&b, Exec::Sequential));
    }

    #[test]
    fn hermitian_part_is_exact() {
        let a = sample();
        let h = a.hermitian_part();
        assert!(h.is_hermitian());
        assert_eq!(h.hermiticity_defect(), 0.0);
        let d = (a.to_dense() + a.to_dense().adjoint()) * c(0.5, 0.0);
        assert!(dense_max_abs(&(h.to_dense() - d)) < 1e-15);
    }

    #[test]
    fn kron_matches_dense() {
        let a = sample();
        let b = SparseOp::diagonal(&[1.0, -2.0], "b");
        let k = SparseOp::kron(&a, &b).to_dense();
        let kd = a.to_dense().kronecker(&b.to_dense());
        assert_eq!(k, kd);
    }

    #[test]
    fn permute_and_restrict() {
        let a = sample();
        let p = a.permute(&[2, 0, 1]);
        assert_eq!(p.get(2, 0), a.get(0, 1));
        let r = a.restrict(&[0, 2], &[0, 1]);
        assert_eq!(r.get(0, 1), a.get(0, 1));
        assert_eq!(r.get(1, 0), a.get(2, 0));
    }
}
