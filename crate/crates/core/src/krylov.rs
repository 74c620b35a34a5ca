//! Matrix-free kernels on sparse operators: exponential action and
//! restarted Lanczos for the low end of the spectrum.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::dense::{inner, vec_norm, Eigh};
use crate::sparse::SparseOp;

/// `exp(c·X) v` by scaled Taylor steps with per-step norm at most one.
pub fn expm_apply(x: &SparseOp, c: C64, v: &[C64]) -> Vec<C64> {
    let steps = (c.norm() * x.norm_inf()).ceil().max(1.0) as usize;
    let h = c / steps as f64;
    let mut out = v.to_vec();
    for _ in 0..steps {
        let mut term = out.clone();
        let mut sum = out.clone();
        for k in 1..200 {
            term = x.matvec(&term);
            let f = h / k as f64;
            for t in term.iter_mut() {
                *t *= f;
            }
            for (s, t) in sum.iter_mut().zip(&term) {
                *s += t;
            }
            if vec_norm(&term) <= 1e-18 * vec_norm(&sum).max(1e-300) {
                break;
            }
        }
        out = sum;
    }
    out
}

#[derive(Clone, Debug)]
pub struct LanczosResult {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
    /// `‖X v − λ v‖` per returned pair.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Lowest `k` eigenpairs of a Hermitian sparse operator.
pub fn lanczos_lowest(x: &SparseOp, k: usize, tol: f64, max_basis: usize, max_restarts: usize) -> LanczosResult {
    let n = x.dim();
    let m_max = max_basis.min(n).max(k + 1).min(n);
    let mut start: Vec<C64> = (0..n)
        .map(|i| C64::new(1.0 + ((i * 7919) % 113) as f64 / 113.0, 0.0))
        .collect();
    let mut best = LanczosResult { values: vec![], vectors: vec![], residuals: vec![], converged: false };
    for _ in 0..=max_restarts {
        let nrm = vec_norm(&start);
        let mut q: Vec<Vec<C64>> = vec![start.iter().map(|z| z / nrm).collect()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..m_max {
            let mut w = x.matvec(&q[j]);
            let a = inner(&q[j], &w).re;
            alpha.push(a);
            // full reorthogonalisation, applied twice
            for _ in 0..2 {
                for qi in &q {
                    let p = inner(qi, &w);
                    for (wi, qv) in w.iter_mut().zip(qi) {
                        *wi -= p * qv;
                    }
                }
            }
            let b = vec_norm(&w);
            if j + 1 == m_max || b < 1e-14 {
                beta.push(b);
                break;
            }
            beta.push(b);
            q.push(w.iter().map(|z| z / b).collect());
        }
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                C64::new(alpha[r], 0.0)
            } else if r + 1 == c {
                C64::new(beta[r], 0.0)
            } else if c + 1 == r {
                C64::new(beta[c], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let e = Eigh::new(&t);
        let kk = k.min(m);
        let mut values = Vec::with_capacity(kk);
        let mut vectors = Vec::with_capacity(kk);
        let mut residuals = Vec::with_capacity(kk);
        for i in 0..kk {
            let mut v = vec![C64::new(0.0, 0.0); n];
            for (j, qj) in q.iter().enumerate().take(m) {
                let s = e.vectors[(j, i)];
                for (vi, qv) in v.iter_mut().zip(qj) {
                    *vi += s * qv;
                }
            }
            let nv = vec_norm(&v);
            v.iter_mut().for_each(|z| *z /= nv);
            let xv = x.matvec(&v);
            let lam = e.values[i];
            let r: Vec<C64> = xv.iter().zip(&v).map(|(a, b)| a - b * lam).collect();
            residuals.push(vec_norm(&r));
            values.push(lam);
            vectors.push(v);
        }
        let converged = residuals.iter().all(|&r| r <= tol);
        start = vectors.iter().fold(vec![C64::new(0.0, 0.0); n], |mut acc, v| {
            acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            acc
        });
        best = LanczosResult { values, vectors, residuals, converged };
        if converged || m == n {
            best.converged = best.residuals.iter().all(|&r| r <= tol);
            break;
        }
    }
    best
}
