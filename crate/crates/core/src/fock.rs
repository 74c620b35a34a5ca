//! Truncated bosonic Fock space over a finite mode set and the
//! second-quantization primitives as sparse matrices.
//!
//! States are occupation tuples with total quanta at most `n_total_max`
//! and per-mode occupancy at most `per_mode_cap`, listed in lexicographic
//! order. Identities that need creation operators to act without
//! truncation are checked on [`OccBasis::interior`] columns.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::{inner, op_norm};
use crate::exec::Exec;
use crate::sparse::SparseOp;
use crate::{Error, Result};

pub const DEFAULT_DIM_CAP: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub omega: f64,
    pub weight: f64,
    #[serde(default)]
    pub reservoir: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Mode>", into = "Vec<Mode>")]
pub struct ModeSet {
    modes: Vec<Mode>,
}

impl TryFrom<Vec<Mode>> for ModeSet {
    type Error = Error;
    fn try_from(modes: Vec<Mode>) -> Result<Self> {
        ModeSet::new(modes)
    }
}

impl From<ModeSet> for Vec<Mode> {
    fn from(m: ModeSet) -> Self {
        m.modes
    }
}

impl ModeSet {
    pub fn new(modes: Vec<Mode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidModes("mode set is empty".into()));
        }
        for (j, m) in modes.iter().enumerate() {
            if !(m.omega > 0.0 && m.omega.is_finite()) {
                return Err(Error::InvalidModes(format!("mode {j}: omega must be positive")));
            }
            if !(m.weight > 0.0 && m.weight.is_finite()) {
                return Err(Error::InvalidModes(format!("mode {j}: weight must be positive")));
            }
        }
        let mut last: HashMap<u8, f64> = HashMap::new();
        for m in &modes {
            if let Some(&prev) = last.get(&m.reservoir) {
                if m.omega <= prev {
                    return Err(Error::InvalidModes(format!(
                        "reservoir {}: frequencies must be strictly increasing",
                        m.reservoir
                    )));
                }
            }
            last.insert(m.reservoir, m.omega);
        }
        Ok(ModeSet { modes })
    }

    /// Modes with the given frequencies, unit weights, one reservoir.
    pub fn from_omegas(omegas: &[f64]) -> Result<Self> {
        Self::new(omegas.iter().map(|&omega| Mode { omega, weight: 1.0, reservoir: 0 }).collect())
    }

    /// Midpoint grid on `(0, omega_max]` with weight `h` per mode.
    pub fn uniform(count: usize, omega_max: f64) -> Result<Self> {
        let h = omega_max / count as f64;
        Self::new(
            (0..count)
                .map(|j| Mode { omega: (j as f64 + 0.5) * h, weight: h, reservoir: 0 })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.omega).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.weight).collect()
    }
}

#[derive(Clone, Debug)]
pub struct OccBasis {
    mode_count: usize,
    n_total_max: usize,
    per_mode_cap: usize,
    states: Vec<Vec<u8>>,
    totals: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    id: String,
}

/// Number of tuples of length `m` with entries in `[0, cap]` and sum `<= n`.
pub fn count_states(m: usize, n: usize, cap: usize) -> usize {
    // ways[s] = number of tuples so far with sum exactly s
    let mut ways = vec![0usize; n + 1];
    ways[0] = 1;
    for _ in 0..m {
        let mut next = vec![0usize; n + 1];
        for (s, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for k in 0..=cap.min(n - s) {
                next[s + k] = next[s + k].saturating_add(w);
            }
        }
        ways = next;
    }
    ways.iter().fold(0usize, |a, &b| a.saturating_add(b))
}

impl OccBasis {
    pub fn new(mode_count: usize, n_total_max: usize, per_mode_cap: usize) -> Result<Self> {
        Self::with_dim_cap(mode_count, n_total_max, per_mode_cap, DEFAULT_DIM_CAP)
    }

    pub fn with_dim_cap(mode_count: usize, n_total_max: usize, per_mode_cap: usize, dim_cap: usize) -> Result<Self> {
        if mode_count == 0 {
            return Err(Error::InvalidModes("basis needs at least one mode".into()));
        }
        let cap = per_mode_cap.min(n_total_max).min(u8::MAX as usize);
        let dim = count_states(mode_count, n_total_max, cap);
        if dim > dim_cap {
            return Err(Error::TruncationTooLarge { dim, cap: dim_cap });
        }
        let mut states = Vec::with_capacity(dim);
        let mut cur = vec![0u8; mode_count];
        enumerate(&mut cur, 0, n_total_max, cap, &mut states);
        let totals = states.iter().map(|s| s.iter().map(|&x| x as usize).sum()).collect();
        let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(OccBasis {
            mode_count,
            n_total_max,
            per_mode_cap: cap,
            states,
            totals,
            index,
            id: format!("fock(m={mode_count},n={n_total_max},cap={cap})"),
        })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    pub fn n_total_max(&self) -> usize {
        self.n_total_max
    }

    /// Effective per-mode cap (never above `n_total_max`).
    pub fn per_mode_cap(&self) -> usize {
        self.per_mode_cap
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn total(&self, i: usize) -> usize {
        self.totals[i]
    }

    pub fn index_of(&self, tuple: &[u8]) -> Option<usize> {
        self.index.get(tuple).copied()
    }

    /// True when only the total-quanta cap constrains the basis.
    pub fn is_total_only(&self) -> bool {
        self.per_mode_cap >= self.n_total_max
    }

    /// States on which every single creation operator stays inside the basis.
    pub fn interior(&self) -> Vec<bool> {
        self.states
            .iter()
            .zip(&self.totals)
            .map(|(s, &t)| t < self.n_total_max && s.iter().all(|&x| (x as usize) < self.per_mode_cap))
            .collect()
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        self.interior().iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }

    /// Indices with total quanta at most `n`.
    pub fn sector_indices(&self, n: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.totals[i] <= n).collect()
    }
}

/// Basis for the mode set with the default dimension cap.
pub fn build_basis(modes: &ModeSet, n_total_max: usize, per_mode_cap: usize) -> Result<OccBasis> {
    OccBasis::new(modes.len(), n_total_max, per_mode_cap)
}

fn enumerate(cur: &mut Vec<u8>, pos: usize, budget: usize, cap: usize, out: &mut Vec<Vec<u8>>) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    for k in 0..=cap.min(budget) {
        cur[pos] = k as u8;
        enumerate(cur, pos + 1, budget - k, cap, out);
    }
    cur[pos] = 0;
}

fn check_len(basis: &OccBasis, f: &[C64]) {
    assert_eq!(f.len(), basis.mode_count(), "one-particle vector has wrong length");
}

fn check_square(basis: &OccBasis, h: &DMatrix<C64>) {
    assert_eq!(h.shape(), (basis.mode_count(), basis.mode_count()), "one-particle matrix has wrong shape");
}

fn is_exactly_hermitian(h: &DMatrix<C64>) -> bool {
    h.nrows() == h.ncols()
        && (0..h.nrows()).all(|r| (0..h.ncols()).all(|c| h[(r, c)] == h[(c, r)].conj()))
}

fn ladder_rows(basis: &OccBasis, exec: Exec, f: impl Fn(&[u8], &mut Vec<u8>) -> Vec<(usize, C64)> + Sync + Send) -> Vec<Vec<(usize, C64)>> {
    exec.map_range(basis.dim(), |r| {
        let mut scratch = basis.state(r).to_vec();
        f(basis.state(r), &mut scratch)
    })
}

/// `a(f) = Σ_j conj(f_j) a_j`.
pub fn annihilation(basis: &OccBasis, f: &[C64]) -> SparseOp {
    check_len(basis, f);
    let rows = ladder_rows(basis, Exec::default(), |t, s| {
        let mut row = Vec::new();
        for (j, fj) in f.iter().enumerate() {
            if *fj == C64::new(0.0, 0.0) {
                continue;
            }
            s[j] += 1;
            if let Some(col) = basis.index_of(s) {
                row.push((col, fj.conj() * (s[j] as f64).sqrt()));
            }
            s[j] = t[j];
        }
        row
    });
    SparseOp::from_rows(basis.dim(), basis.dim(), rows, basis.id())
}

/// Single-mode annihilation operator `a_j`.
pub fn lowering(basis: &OccBasis, j: usize) -> SparseOp {
    let mut f = vec![C64::new(0.0, 0.0); basis.mode_count()];
    f[j] = C64::new(1.0, 0.0);
    annihilation(basis, &f)
}

/// `a*(f)`: the adjoint of [`annihilation`] on the truncated space.
pub fn creation(basis: &OccBasis, f: &[C64]) -> SparseOp {
    annihilation(basis, f).adjoint()
}

/// `φ(f) = (a(f) + a*(f))/√2`, exactly Hermitian as stored.
pub fn segal_field(basis: &OccBasis, f: &[C64]) -> SparseOp {
    let a = annihilation(basis, f);
    a.add(&a.adjoint())
        .scale_re(std::f64::consts::FRAC_1_SQRT_2)
        .into_hermitian()
        .expect("segal field is Hermitian by construction")
}

/// `dΓ(h) = Σ_{jk} h_jk a*_j a_k`.
pub fn dgamma(basis: &OccBasis, h: &DMatrix<C64>) -> SparseOp {
    check_square(basis, h);
    let m = basis.mode_count();
    let rows = ladder_rows(basis, Exec::default(), |t, s| {
        let mut row = Vec::new();
        for j in 0..m {
            if t[j] == 0 {
                continue;
            }
            for k in 0..m {
                let hjk = h[(j, k)];
                if hjk == C64::new(0.0, 0.0) {
                    continue;
                }
                if j == k {
                    row.push((basis.index_of(t).unwrap(), hjk * t[j] as f64));
                    continue;
                }
                // column state s = t - e_j + e_k
                s[j] -= 1;
                s[k] += 1;
                if let Some(col) = basis.index_of(s) {
                    let amp = ((t[j] as usize * s[k] as usize) as f64).sqrt();
                    row.push((col, hjk * amp));
                }
                s[j] = t[j];
                s[k] = t[k];
            }
        }
        row
    });
    let op = SparseOp::from_rows(basis.dim(), basis.dim(), rows, basis.id());
    if is_exactly_hermitian(h) {
        op.into_hermitian().expect("dΓ of a Hermitian matrix is Hermitian")
    } else {
        op
    }
}

pub fn number(basis: &OccBasis) -> SparseOp {
    let d: Vec<f64> = (0..basis.dim()).map(|i| basis.total(i) as f64).collect();
    SparseOp::diagonal(&d, basis.id())
}

/// `dΓ(diag(omega))`.
pub fn free_field(basis: &OccBasis, omegas: &[f64]) -> SparseOp {
    assert_eq!(omegas.len(), basis.mode_count());
    let d: Vec<f64> = basis
        .states()
        .iter()
        .map(|s| s.iter().zip(omegas).map(|(&n, &w)| n as f64 * w).sum())
        .collect();
    SparseOp::diagonal(&d, basis.id())
}

type Amplitudes = BTreeMap<Vec<u8>, C64>;

fn create_into(dst: &OccBasis, col: &[C64], from: &Amplitudes, into: &mut Amplitudes) {
    for (t, &c) in from {
        for (j, &bj) in col.iter().enumerate() {
            if bj == C64::new(0.0, 0.0) || t[j] as usize >= dst.per_mode_cap() {
                continue;
            }
            let mut u = t.clone();
            u[j] += 1;
            *into.entry(u).or_insert(C64::new(0.0, 0.0)) += c * bj * (t[j] as f64 + 1.0).sqrt();
        }
    }
}

fn factorial_norm(state: &[u8]) -> f64 {
    let mut p = 1.0;
    for &n in state {
        for k in 2..=n as u64 {
            p *= k as f64;
        }
    }
    1.0 / p.sqrt()
}

/// Column of `Γ(b)` (and optionally `dΓ(b,q)`) at a source occupation state.
fn expand_column(dst: &OccBasis, state: &[u8], b: &DMatrix<C64>, q: Option<&DMatrix<C64>>) -> (Amplitudes, Amplitudes) {
    let vac = vec![0u8; dst.mode_count()];
    let mut plain: Amplitudes = BTreeMap::from([(vac, C64::new(1.0, 0.0))]);
    let mut marked: Amplitudes = BTreeMap::new();
    for (k, &nk) in state.iter().enumerate() {
        let bcol: Vec<C64> = b.column(k).iter().copied().collect();
        let qcol: Option<Vec<C64>> = q.map(|q| q.column(k).iter().copied().collect());
        for _ in 0..nk {
            let mut next_plain = BTreeMap::new();
            create_into(dst, &bcol, &plain, &mut next_plain);
            if let Some(qc) = &qcol {
                let mut next_marked = BTreeMap::new();
                create_into(dst, &bcol, &marked, &mut next_marked);
                create_into(dst, qc, &plain, &mut next_marked);
                marked = next_marked;
            }
            plain = next_plain;
        }
    }
    let s = factorial_norm(state);
    for v in plain.values_mut().chain(marked.values_mut()) {
        *v *= s;
    }
    (plain, marked)
}

fn assemble_columns(src: &OccBasis, dst: &OccBasis, cols: Vec<Amplitudes>, id: String) -> SparseOp {
    let trips = cols.into_iter().enumerate().flat_map(|(c, amps)| {
        amps.into_iter().filter_map(move |(t, v)| dst.index_of(&t).map(|r| (r, c, v)))
    });
    SparseOp::from_triplets(dst.dim(), src.dim(), trips.collect::<Vec<_>>(), id)
}

/// `Γ(b)` from `src` to `dst`; `b` is `dst.mode_count × src.mode_count`.
pub fn gamma_between(src: &OccBasis, dst: &OccBasis, b: &DMatrix<C64>) -> Result<SparseOp> {
    assert_eq!(b.shape(), (dst.mode_count(), src.mode_count()), "b has wrong shape");
    let nb = op_norm(b);
    if nb > 1.0 + 1e-12 {
        return Err(Error::NotContraction(nb));
    }
    let cols = Exec::default().map_range(src.dim(), |c| expand_column(dst, src.state(c), b, None).0);
    Ok(assemble_columns(src, dst, cols, format!("{}->{}", src.id(), dst.id())))
}

/// `Γ(b)` on a single basis.
pub fn gamma(basis: &OccBasis, b: &DMatrix<C64>) -> Result<SparseOp> {
    Ok(gamma_between(basis, basis, b)?.with_basis_id(basis.id()))
}

/// `dΓ(b, q) = Σ_j b ⊗ … ⊗ q ⊗ … ⊗ b` from `src` to `dst`.
pub fn dgamma2_between(src: &OccBasis, dst: &OccBasis, b: &DMatrix<C64>, q: &DMatrix<C64>) -> SparseOp {
    assert_eq!(b.shape(), (dst.mode_count(), src.mode_count()), "b has wrong shape");
    assert_eq!(q.shape(), b.shape(), "q has wrong shape");
    let cols = Exec::default().map_range(src.dim(), |c| expand_column(dst, src.state(c), b, Some(q)).1);
    assemble_columns(src, dst, cols, format!("{}->{}", src.id(), dst.id()))
}

pub fn dgamma2(basis: &OccBasis, b: &DMatrix<C64>, q: &DMatrix<C64>) -> SparseOp {
    dgamma2_between(basis, basis, b, q).with_basis_id(basis.id())
}

/// Geometric localization into the two-factor space.
#[derive(Clone, Debug)]
pub struct Localization {
    /// `Γ̌(b)` from the source basis to `target`.
    pub op: SparseOp,
    /// Joint basis of `Γ(h0) ⊗ Γ(h∞)`: the first `split.0` modes belong to `h0`.
    pub target: OccBasis,
    pub split: (usize, usize),
    /// Stacked `(b0; b∞)`.
    pub b: DMatrix<C64>,
}

pub fn isometry_defect(b0: &DMatrix<C64>, binf: &DMatrix<C64>) -> f64 {
    let m = b0.ncols();
    let g = b0.adjoint() * b0 + binf.adjoint() * binf - DMatrix::<C64>::identity(m, m);
    g.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `Γ̌(b) = I Γ(b)` with `I` the canonical identification of `Γ(h0 ⊕ h∞)`
/// with `Γ(h0) ⊗ Γ(h∞)`. On occupation tuples `I` is concatenation, so the
/// joint total cap of the target matches the source.
pub fn split_localize(basis: &OccBasis, b0: &DMatrix<C64>, binf: &DMatrix<C64>) -> Result<Localization> {
    assert_eq!(b0.ncols(), basis.mode_count());
    assert_eq!(binf.ncols(), basis.mode_count());
    let defect = isometry_defect(b0, binf);
    if defect > 1e-10 {
        return Err(Error::IsometryDefect(defect));
    }
    let (m0, mi) = (b0.nrows(), binf.nrows());
    let target = OccBasis::new(m0 + mi, basis.n_total_max(), basis.per_mode_cap())?;
    let b = stack(b0, binf);
    let op = gamma_between(basis, &target, &b)?;
    Ok(Localization { op, target, split: (m0, mi), b })
}

pub fn stack(top: &DMatrix<C64>, bottom: &DMatrix<C64>) -> DMatrix<C64> {
    assert_eq!(top.ncols(), bottom.ncols());
    let (r0, r1) = (top.nrows(), bottom.nrows());
    DMatrix::from_fn(r0 + r1, top.ncols(), |r, c| if r < r0 { top[(r, c)] } else { bottom[(r - r0, c)] })
}

pub fn block_diag(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

fn cols_residual(x: &SparseOp, keep: &[bool]) -> f64 {
    x.mask_cols(keep).max_abs()
}

/// `[a(f), a*(g)] − ⟨f,g⟩` on interior columns.
pub fn ccr_residual(basis: &OccBasis, f: &[C64], g: &[C64]) -> f64 {
    let a = annihilation(basis, f);
    let ad = creation(basis, g);
    let c = SparseOp::commutator(&a, &ad, Exec::default());
    let id = SparseOp::identity(basis.dim(), basis.id());
    cols_residual(&c.add_scaled(&id, -inner(f, g)), &basis.interior())
}

/// `i[φ(f),φ(g)] + Im⟨f,g⟩` on interior columns.
pub fn field_commutator_residual(basis: &OccBasis, f: &[C64], g: &[C64]) -> f64 {
    let c = SparseOp::commutator(&segal_field(basis, f), &segal_field(basis, g), Exec::default())
        .scale(C64::new(0.0, 1.0));
    let id = SparseOp::identity(basis.dim(), basis.id());
    cols_residual(&c.add_scaled(&id, C64::new(inner(f, g).im, 0.0)), &basis.interior())
}

/// `[dΓ(g), dΓ(h)] − dΓ([g,h])` on the whole truncated space.
pub fn dgamma_commutator_residual(basis: &OccBasis, g: &DMatrix<C64>, h: &DMatrix<C64>) -> f64 {
    let lhs = SparseOp::commutator(&dgamma(basis, g), &dgamma(basis, h), Exec::default());
    let rhs = dgamma(basis, &(g * h - h * g));
    lhs.max_abs_diff(&rhs)
}

/// `Γ(b) a*(f) − a*(b f) Γ(b)` on interior columns.
pub fn gamma_intertwining_residual(basis: &OccBasis, b: &DMatrix<C64>, f: &[C64]) -> Result<f64> {
    let gb = gamma(basis, b)?;
    let bf: Vec<C64> = crate::dense::mat_vec(b, f);
    let lhs = gb.matmul(&creation(basis, f), Exec::default());
    let rhs = creation(basis, &bf).matmul(&gb, Exec::default());
    Ok(cols_residual(&lhs.sub(&rhs), &basis.interior()))
}

/// Residuals of the two localization intertwinings.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LocalizationResiduals {
    pub isometry: f64,
    pub dgamma: f64,
    pub field: f64,
}

/// Checks `Γ̌*Γ̌ = Γ(b*b)`, the `dΓ` intertwining with `q = g b − b h`, and
/// the field intertwining for `(f0, f∞)` against `f`.
pub fn localization_residuals(
    basis: &OccBasis,
    loc: &Localization,
    g0: &DMatrix<C64>,
    ginf: &DMatrix<C64>,
    h: &DMatrix<C64>,
    f0: &[C64],
    finf: &[C64],
    f: &[C64],
) -> Result<LocalizationResiduals> {
    let ex = Exec::default();
    let gc = &loc.op;
    let gc_adj = gc.adjoint();
    let bb = loc.b.adjoint() * &loc.b;
    let isometry = gc_adj.matmul(gc, ex).max_abs_diff(&gamma(basis, &bb)?);

    let g = block_diag(g0, ginf);
    let lhs = dgamma(&loc.target, &g).matmul(gc, ex).sub(&gc.matmul(&dgamma(basis, h), ex));
    let q = &g * &loc.b - &loc.b * h;
    let rhs = dgamma2_between(basis, &loc.target, &loc.b, &q);
    let dgamma_res = lhs.max_abs_diff(&rhs);

    let big_f: Vec<C64> = f0.iter().chain(finf).copied().collect();
    let bf = crate::dense::mat_vec(&loc.b, f);
    let lhs = segal_field(&loc.target, &big_f).matmul(gc, ex).sub(&gc.matmul(&segal_field(basis, f), ex));
    let diff_out: Vec<C64> = big_f.iter().zip(&bf).map(|(x, y)| x - y).collect();
    let bstar_f: Vec<C64> = crate::dense::mat_vec(&loc.b.adjoint(), &big_f);
    let diff_in: Vec<C64> = bstar_f.iter().zip(f).map(|(x, y)| x - y).collect();
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let rhs = creation(&loc.target, &diff_out)
        .matmul(gc, ex)
        .add(&gc.matmul(&annihilation(basis, &diff_in), ex))
        .scale(s);
    let field = cols_residual(&lhs.sub(&rhs), &basis.interior());
    Ok(LocalizationResiduals { isometry, dgamma: dgamma_res, field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{real, Eigh};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    fn rmat(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<C64> {
        DMatrix::from_fn(n, m, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn rherm(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<C64> {
        let a = rmat(rng, n, n);
        (&a + a.adjoint()) * real(0.5)
    }

    fn contraction(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<C64> {
        let a = rmat(rng, n, n);
        let s = op_norm(&a);
        a * real(0.95 / s)
    }

    /// Independent count by brute-force enumeration of the full cube.
    fn brute_count(m: usize, n: usize, cap: usize) -> usize {
        let c = cap.min(n) + 1;
        (0..c.pow(m as u32))
            .filter(|&x| {
                let mut y = x;
                let mut s = 0;
                for _ in 0..m {
                    s += y % c;
                    y /= c;
                }
                s <= n
            })
            .count()
    }

    #[test]
    fn dimensions() {
        assert_eq!(OccBasis::new(2, 2, 2).unwrap().dim(), 6);
        assert_eq!(OccBasis::new(1, 3, 3).unwrap().dim(), 4);
        assert_eq!(OccBasis::new(3, 2, 2).unwrap().dim(), 10);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(matches!(OccBasis::new(0, 2, 2), Err(Error::InvalidModes(_))));
        assert!(matches!(OccBasis::with_dim_cap(4, 6, 6, 100), Err(Error::TruncationTooLarge { .. })));
        assert!(ModeSet::from_omegas(&[1.0, 1.0]).is_err());
        assert!(ModeSet::from_omegas(&[-1.0]).is_err());
    }

    #[test]
    fn lexicographic_and_index_inverse() {
        let b = OccBasis::new(3, 3, 2).unwrap();
        for w in b.states().windows(2) {
            assert!(w[0] < w[1]);
        }
        for (i, s) in b.states().iter().enumerate() {
            assert_eq!(b.index_of(s), Some(i));
        }
        assert_eq!(b.state(0), &[0, 0, 0]);
    }

    #[test]
    fn single_mode_annihilation() {
        let b = OccBasis::new(1, 2, 2).unwrap();
        let a = annihilation(&b, &[real(1.0)]);
        assert_eq!(a.get(0, 1), real(1.0));
        assert_eq!(a.get(1, 2), real(2f64.sqrt()));
        assert_eq!(a.nnz(), 2);
        let z = annihilation(&b, &[real(0.0)]);
        assert_eq!(z.nnz(), 0);
    }

    #[test]
    fn field_vacuum_variance() {
        let b = OccBasis::new(1, 4, 4).unwrap();
        let phi = segal_field(&b, &[real(1.0)]);
        let p2 = phi.matmul(&phi, Exec::Sequential);
        assert!((p2.get(0, 0) - real(0.5)).norm() < 1e-15);
        assert!(phi.is_hermitian());
    }

    #[test]
    fn annihilation_kills_vacuum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = OccBasis::new(3, 3, 3).unwrap();
        let a = annihilation(&b, &rvec(&mut rng, 3));
        let mut vac = vec![real(0.0); b.dim()];
        vac[0] = real(1.0);
        assert!(a.matvec(&vac).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn dgamma_examples() {
        let b = OccBasis::new(2, 3, 3).unwrap();
        let w = [0.7, 1.9];
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![real(w[0]), real(w[1])]));
        let d = dgamma(&b, &h);
        for (i, s) in b.states().iter().enumerate() {
            let e = s[0] as f64 * w[0] + s[1] as f64 * w[1];
            assert!((d.get(i, i).re - e).abs() < 1e-15);
        }
        let n = dgamma(&b, &DMatrix::identity(2, 2));
        assert_eq!(n, number(&b).with_basis_id(b.id()));
    }

    #[test]
    fn gamma_examples() {
        let b = OccBasis::new(2, 3, 3).unwrap();
        let id = gamma(&b, &DMatrix::identity(2, 2)).unwrap();
        assert!(id.max_abs_diff(&SparseOp::identity(b.dim(), b.id())) < 1e-15);
        let z = gamma(&b, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(z.nnz(), 1);
        assert_eq!(z.get(0, 0), real(1.0));
        let big = DMatrix::identity(2, 2) * real(1.5);
        assert!(matches!(gamma(&b, &big), Err(Error::NotContraction(_))));
    }

    #[test]
    fn gamma_matches_permanent_oracle() {
        // <n|Γ(b)|m> = perm(B_{n,m}) / sqrt(∏ n! ∏ m!)
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let basis = OccBasis::new(3, 3, 3).unwrap();
        let b = contraction(&mut rng, 3);
        let g = gamma(&basis, &b).unwrap();
        for (c, m) in basis.states().iter().enumerate() {
            for (r, n) in basis.states().iter().enumerate() {
                let tm: usize = m.iter().map(|&x| x as usize).sum();
                let tn: usize = n.iter().map(|&x| x as usize).sum();
                if tm != tn {
                    assert_eq!(g.get(r, c), real(0.0));
                    continue;
                }
                let rows: Vec<usize> = n.iter().enumerate().flat_map(|(j, &k)| std::iter::repeat(j).take(k as usize)).collect();
                let cols: Vec<usize> = m.iter().enumerate().flat_map(|(j, &k)| std::iter::repeat(j).take(k as usize)).collect();
                let p = permanent(&rows, &cols, &b);
                let expect = p * factorial_norm(n) * factorial_norm(m);
                assert!((g.get(r, c) - expect).norm() < 1e-13, "{n:?} {m:?}");
            }
        }
    }

    fn permanent(rows: &[usize], cols: &[usize], b: &DMatrix<C64>) -> C64 {
        fn rec(i: usize, used: &mut Vec<bool>, rows: &[usize], cols: &[usize], b: &DMatrix<C64>) -> C64 {
            if i == rows.len() {
                return real(1.0);
            }
            let mut s = real(0.0);
            for k in 0..cols.len() {
                if !used[k] {
                    used[k] = true;
                    s += b[(rows[i], cols[k])] * rec(i + 1, used, rows, cols, b);
                    used[k] = false;
                }
            }
            s
        }
        rec(0, &mut vec![false; cols.len()], rows, cols, b)
    }

    #[test]
    fn dgamma2_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let basis = OccBasis::new(2, 3, 3).unwrap();
        let h = rherm(&mut rng, 2);
        let d = dgamma2(&basis, &DMatrix::identity(2, 2), &h);
        assert!(d.max_abs_diff(&dgamma(&basis, &h)) < 1e-14);
        let z = dgamma2(&basis, &contraction(&mut rng, 2), &DMatrix::zeros(2, 2));
        assert_eq!(z.nnz(), 0);
    }

    #[test]
    fn dgamma2_number_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let basis = OccBasis::new(2, 2, 2).unwrap();
        let b = contraction(&mut rng, 2);
        let q = rmat(&mut rng, 2, 2);
        let d = dgamma2(&basis, &b, &q).to_dense();
        let qn = op_norm(&q);
        for _ in 0..200 {
            let psi = rvec(&mut rng, basis.dim());
            let phi = rvec(&mut rng, basis.dim());
            let val = inner(&psi, &crate::dense::mat_vec(&d, &phi)).norm();
            for rho in [0.0, 0.5, 1.0] {
                let w = |v: &[C64], e: f64| -> f64 {
                    v.iter()
                        .enumerate()
                        .map(|(i, z)| z.norm_sqr() * (basis.total(i) as f64 + 1.0).powf(2.0 * e))
                        .sum::<f64>()
                        .sqrt()
                };
                assert!(val <= qn * w(&psi, rho) * w(&phi, 1.0 - rho) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn localization_by_mode_subset_is_unitary() {
        let basis = OccBasis::new(3, 3, 3).unwrap();
        let mut b0 = DMatrix::zeros(1, 3);
        b0[(0, 1)] = real(1.0);
        let mut bi = DMatrix::zeros(2, 3);
        bi[(0, 0)] = real(1.0);
        bi[(1, 2)] = real(1.0);
        let loc = split_localize(&basis, &b0, &bi).unwrap();
        let p = loc.op.adjoint().matmul(&loc.op, Exec::Sequential);
        assert!(p.max_abs_diff(&SparseOp::identity(basis.dim(), "")) < 1e-15);
        assert_eq!(loc.target.dim(), basis.dim());
    }

    #[test]
    fn localization_rejects_non_isometry() {
        let basis = OccBasis::new(2, 2, 2).unwrap();
        let b0 = DMatrix::identity(2, 2);
        let bi = DMatrix::identity(2, 2);
        assert!(matches!(split_localize(&basis, &b0, &bi), Err(Error::IsometryDefect(_))));
    }

    #[test]
    fn localization_intertwinings() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = OccBasis::new(2, 3, 3).unwrap();
        // smooth partition: b0 = cos θ, b∞ = sin θ per mode
        let th: [f64; 2] = [0.3, 1.1];
        let b0 = DMatrix::from_fn(2, 2, |r, c| if r == c { real(th[r].cos()) } else { real(0.0) });
        let bi = DMatrix::from_fn(2, 2, |r, c| if r == c { real(th[r].sin()) } else { real(0.0) });
        let loc = split_localize(&basis, &b0, &bi).unwrap();
        let h = rherm(&mut rng, 2);
        let g0 = rherm(&mut rng, 2);
        let gi = rherm(&mut rng, 2);
        let f = rvec(&mut rng, 2);
        let f0 = crate::dense::mat_vec(&b0, &f);
        let fi = crate::dense::mat_vec(&bi, &f);
        let r = localization_residuals(&basis, &loc, &g0, &gi, &h, &f0, &fi, &f).unwrap();
        assert!(r.isometry < 1e-13 && r.dgamma < 1e-12 && r.field < 1e-13, "{r:?}");
        // general (f0, f∞): the identity carries the correction terms
        let f0 = rvec(&mut rng, 2);
        let fi = rvec(&mut rng, 2);
        let r = localization_residuals(&basis, &loc, &g0, &gi, &h, &f0, &fi, &f).unwrap();
        assert!(r.field < 1e-13, "{r:?}");
    }

    #[test]
    fn number_operator_spectrum() {
        let b = OccBasis::new(2, 2, 2).unwrap();
        let e = Eigh::new(&number(&b).to_dense());
        assert_eq!(e.values.iter().map(|x| x.round() as i64).collect::<Vec<_>>(), vec![0, 1, 1, 2, 2, 2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_dimension_matches_enumeration(m in 1usize..4, n in 0usize..5, cap in 0usize..5) {
            let b = OccBasis::new(m, n, cap).unwrap();
            prop_assert_eq!(b.dim(), brute_count(m, n, cap));
            prop_assert_eq!(b.dim(), count_states(m, n, cap.min(n)));
        }

        #[test]
        fn prop_ccr_below_cutoff(seed in 0u64..1000, m in 1usize..4, n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = OccBasis::new(m, n, n).unwrap();
            let f = rvec(&mut rng, m);
            let g = rvec(&mut rng, m);
            prop_assert!(ccr_residual(&b, &f, &g) < 1e-13);
            prop_assert!(field_commutator_residual(&b, &f, &g) < 1e-13);
            prop_assert!(segal_field(&b, &f).is_hermitian());
        }

        #[test]
        fn prop_dgamma_lie_and_grading(seed in 0u64..1000, m in 1usize..4, n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = OccBasis::new(m, n, n).unwrap();
            let g = rmat(&mut rng, m, m);
            let h = rmat(&mut rng, m, m);
            prop_assert!(dgamma_commutator_residual(&b, &g, &h) < 1e-12);
            let d = dgamma(&b, &h);
            for (r, c, _) in d.entries() {
                prop_assert_eq!(b.total(r), b.total(c));
            }
        }

        #[test]
        fn prop_gamma_multiplicative(seed in 0u64..1000, n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let basis = OccBasis::new(2, n, n).unwrap();
            let b = contraction(&mut rng, 2);
            let c = contraction(&mut rng, 2);
            let lhs = gamma(&basis, &b).unwrap().matmul(&gamma(&basis, &c).unwrap(), Exec::Sequential);
            let rhs = gamma(&basis, &(&b * &c)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-13);
            let f = rvec(&mut rng, 2);
            prop_assert!(gamma_intertwining_residual(&basis, &b, &f).unwrap() < 1e-13);
        }
    }
}
