//! Dense Hermitian spectral calculus and solves on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::{Error, Result};

/// Eigen-decomposition with eigenvalues sorted ascending.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors, in the order of `values`.
    pub vectors: DMatrix<C64>,
}

impl Eigh {
    pub fn new(h: &DMatrix<C64>) -> Eigh {
        assert_eq!(h.nrows(), h.ncols(), "eigh needs a square matrix");
        let n = h.nrows();
        if n == 0 {
            return Eigh { values: vec![], vectors: DMatrix::zeros(0, 0) };
        }
        let se = h.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
        let values = order.iter().map(|&k| se.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(n, n, |r, c| se.eigenvectors[(r, order[c])]);
        Eigh { values, vectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, k: usize) -> DVector<C64> {
        self.vectors.column(k).into_owned()
    }

    /// `V f(Λ) V*`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64) -> DMatrix<C64> {
        let mut scaled = self.vectors.clone();
        for (k, &l) in self.values.iter().enumerate() {
            let s = f(l);
            scaled.column_mut(k).iter_mut().for_each(|z| *z *= s);
        }
        scaled * self.vectors.adjoint()
    }

    pub fn apply_fn_real(&self, f: impl Fn(f64) -> f64) -> DMatrix<C64> {
        self.apply_fn(|x| C64::new(f(x), 0.0))
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }

    /// Groups of indices whose eigenvalues differ consecutively by at most `tol`.
    pub fn clusters(&self, tol: f64) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (k, &v) in self.values.iter().enumerate() {
            match out.last_mut() {
                Some(g) if (v - self.values[*g.last().unwrap()]).abs() <= tol => g.push(k),
                _ => out.push(vec![k]),
            }
        }
        out
    }
}

pub fn lambda_min(h: &DMatrix<C64>) -> f64 {
    Eigh::new(h).min()
}

/// Spectral norm (largest singular value).
pub fn op_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let g = if m.nrows() >= m.ncols() { m.adjoint() * m } else { m * m.adjoint() };
    Eigh::new(&g).max().max(0.0).sqrt()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn solve(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    a.clone().lu().solve(b).ok_or(Error::Singular)
}

pub fn solve_vec(a: &DMatrix<C64>, b: &[C64]) -> Result<Vec<C64>> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b);
    Ok(solve(a, &rhs)?.column(0).iter().copied().collect())
}

pub fn inverse(a: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    a.clone().try_inverse().ok_or(Error::Singular)
}

pub fn mat_vec(m: &DMatrix<C64>, v: &[C64]) -> Vec<C64> {
    let x = DVector::from_column_slice(v);
    (m * x).iter().copied().collect()
}

/// `exp(i s h)` for Hermitian `h`.
pub fn exp_i(h: &DMatrix<C64>, s: f64) -> DMatrix<C64> {
    Eigh::new(h).apply_fn(|l| C64::from_polar(1.0, s * l))
}

pub fn identity(n: usize) -> DMatrix<C64> {
    DMatrix::identity(n, n)
}

pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}
