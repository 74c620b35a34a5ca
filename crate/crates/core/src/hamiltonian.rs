//! Truncated Pauli-Fierz Hamiltonian on `C^ν ⊗ Γ(h)`, conjugate operators
//! built from modified radial translations, and the commutator, virial and
//! positive-commutator certificates derived from them.
//!
//! Vectors are indexed as `i·dim(F) + s` with `i` the small-system level.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::coupling::{apply_one_particle, l2_norm, sample_coupling, CouplingProfile, SmallSystem};
use crate::dense::{inner, mat_vec, op_norm, solve_vec, vec_norm, Eigh};
use crate::exec::Exec;
use crate::fock::{dgamma, free_field, lowering, number, ModeSet, OccBasis};
use crate::krylov::lanczos_lowest;
use crate::sparse::SparseOp;
use crate::{Error, Result};

/// Largest dimension handled by dense eigendecomposition.
pub const DENSE_EIG_MAX: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConjugateVariant {
    /// `m ≡ 1`.
    Translations,
    /// `m(ω) = |ω|/√(ω² + 1/n)`.
    RegularizedN { n: f64 },
    MDelta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateSpec {
    pub delta0: f64,
    pub delta_inf: f64,
    pub mu: f64,
    pub variant: ConjugateVariant,
}

impl ConjugateSpec {
    pub fn new(delta0: f64, delta_inf: f64, mu: f64, variant: ConjugateVariant) -> Result<Self> {
        if !(delta0 > 0.0 && delta0 <= 1.0) || !(delta_inf >= 1.0 && delta_inf.is_finite()) || !(mu > 0.0) {
            return Err(Error::InvalidInput("conjugate parameters outside (0,1] x [1,inf), mu > 0".into()));
        }
        if let ConjugateVariant::RegularizedN { n } = variant {
            if !(n > 0.0) {
                return Err(Error::InvalidInput("regularization parameter must be positive".into()));
            }
        }
        Ok(ConjugateSpec { delta0, delta_inf, mu, variant })
    }

    pub fn translations() -> Self {
        ConjugateSpec { delta0: 1.0, delta_inf: 1.0, mu: 0.1, variant: ConjugateVariant::Translations }
    }

    pub fn m_delta(delta0: f64, delta_inf: f64, mu: f64) -> Result<Self> {
        Self::new(delta0, delta_inf, mu, ConjugateVariant::MDelta)
    }

    /// The multiplier `m(ω)` (even in `ω`).
    pub fn m(&self, omega: f64) -> f64 {
        match self.variant {
            ConjugateVariant::Translations => 1.0,
            ConjugateVariant::RegularizedN { n } => omega.abs() / (omega * omega + 1.0 / n).sqrt(),
            ConjugateVariant::MDelta => m_delta(omega, self),
        }
    }
}

fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let psi = |t: f64| (-1.0 / t).exp();
    psi(x) / (psi(x) + psi(1.0 - x))
}

/// Even smooth cutoff: `1` on `|ω| ≤ 1/2`, `0` on `|ω| ≥ 1`, nonincreasing in `|ω|`.
pub fn chi(omega: f64) -> f64 {
    smooth_step(2.0 * (1.0 - omega.abs()))
}

/// `d(ω) = χ(ω)ω^{−μ/4} + χ(ω/2) − χ(ω) + (1 − χ(ω/2))ω^{μ/4}`, extended evenly.
pub fn aux_d(omega: f64, mu: f64) -> f64 {
    let w = omega.abs();
    let (c1, c2) = (chi(w), chi(w / 2.0));
    c1 * w.powf(-mu / 4.0) + c2 - c1 + (1.0 - c2) * w.powf(mu / 4.0)
}

pub fn m_delta(omega: f64, spec: &ConjugateSpec) -> f64 {
    let (d0, di) = (spec.delta0, spec.delta_inf);
    let c0 = chi(omega / d0);
    let ci = chi(omega / (2.0 * di));
    let mid = ci - c0;
    let dmid = if mid == 0.0 { 0.0 } else { aux_d(omega, spec.mu) * mid };
    aux_d(d0, spec.mu) * c0 + dmid + aux_d(di, spec.mu) * (1.0 - ci)
}

/// `(i/2)(M K + K M)` with `M = diag(m(x_j))` and `K` the antisymmetric part
/// of the weight-conjugated central difference `W^{1/2} D W^{−1/2}`.
/// End rows use a ghost node reflected across the boundary with zero value.
pub fn conjugate_a_on(x: &[f64], w: &[f64], spec: &ConjugateSpec) -> DMatrix<C64> {
    let n = x.len();
    let mut a = DMatrix::zeros(n, n);
    if n < 2 {
        return a;
    }
    let denom = |j: usize| -> f64 {
        let lo = if j == 0 { 2.0 * x[0] - x[1] } else { x[j - 1] };
        let hi = if j + 1 == n { 2.0 * x[n - 1] - x[n - 2] } else { x[j + 1] };
        hi - lo
    };
    let m: Vec<f64> = x.iter().map(|&v| spec.m(v)).collect();
    for j in 0..n - 1 {
        // D̃_{j,j+1} = √(w_j/w_{j+1})/d_j,  D̃_{j+1,j} = −√(w_{j+1}/w_j)/d_{j+1}
        let up = (w[j] / w[j + 1]).sqrt() / denom(j);
        let down = -(w[j + 1] / w[j]).sqrt() / denom(j + 1);
        let k = (up - down) / 2.0;
        let v = 0.5 * (m[j] + m[j + 1]) * k;
        a[(j, j + 1)] = C64::new(0.0, v);
        a[(j + 1, j)] = C64::new(0.0, -v);
    }
    a
}

pub fn conjugate_a(modes: &ModeSet, spec: &ConjugateSpec) -> DMatrix<C64> {
    conjugate_a_on(&modes.omegas(), &modes.weights(), spec)
}

/// `c = i[diag(x), a]`.
pub fn one_particle_commutator(x: &[f64], a: &DMatrix<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| C64::new(0.0, 1.0) * (x[r] - x[c]) * a[(r, c)])
}

/// `Σ_j G_j* ⊗ a_j`: the annihilation part of the matrix-valued field.
pub fn matrix_annihilation(basis: &OccBasis, g: &[DMatrix<C64>]) -> SparseOp {
    assert_eq!(g.len(), basis.mode_count());
    let d = g[0].nrows();
    let mut acc = SparseOp::zeros(d * basis.dim(), d * basis.dim(), "");
    for (j, gj) in g.iter().enumerate() {
        if gj.iter().all(|z| z.norm() == 0.0) {
            continue;
        }
        let gs = SparseOp::from_dense(&gj.adjoint(), "");
        acc = acc.add(&SparseOp::kron(&gs, &lowering(basis, j)));
    }
    acc
}

/// `φ(G) = (a(G) + a*(G))/√2` on `C^d ⊗ Γ(h)`, exactly Hermitian.
pub fn matrix_field(basis: &OccBasis, g: &[DMatrix<C64>]) -> SparseOp {
    let a = matrix_annihilation(basis, g);
    a.add(&a.adjoint())
        .scale_re(std::f64::consts::FRAC_1_SQRT_2)
        .into_hermitian()
        .expect("field is Hermitian by construction")
}

/// `X ⊗ 1_F`.
pub fn embed_small(x: &DMatrix<C64>, basis: &OccBasis) -> SparseOp {
    SparseOp::kron(&SparseOp::from_dense(x, ""), &SparseOp::identity(basis.dim(), ""))
}

/// `1_d ⊗ X`.
pub fn embed_fock(d: usize, x: &SparseOp) -> SparseOp {
    let out = SparseOp::kron(&SparseOp::identity(d, ""), x);
    if x.is_hermitian() {
        out.into_hermitian().expect("tensor with identity keeps Hermiticity")
    } else {
        out
    }
}

/// Dense eigendecomposition of a Hermitian sparse operator.
pub fn eigh(op: &SparseOp) -> Eigh {
    Eigh::new(&op.to_dense())
}

/// Lowest eigenvalue: dense up to [`DENSE_EIG_MAX`], restarted Lanczos above.
pub fn lowest_eigenvalue(op: &SparseOp) -> Result<f64> {
    if op.dim() <= DENSE_EIG_MAX {
        return Ok(eigh(op).min());
    }
    let r = lanczos_lowest(op, 1, 1e-8, 120, 40);
    if !r.converged {
        return Err(Error::InvalidInput(format!("Lanczos did not reach residual 1e-8 (got {:.2e})", r.residuals[0])));
    }
    Ok(r.values[0])
}

#[derive(Debug)]
pub struct HamiltonianBundle {
    pub small: SmallSystem,
    pub modes: ModeSet,
    pub basis: OccBasis,
    pub omegas: Vec<f64>,
    pub weights: Vec<f64>,
    /// Sampled couplings `G_j`.
    pub g: Vec<DMatrix<C64>>,
    pub h0: SparseOp,
    pub h: SparseOp,
    pub n: SparseOp,
    pub sigma: f64,
    spectrum: OnceLock<Eigh>,
}

impl HamiltonianBundle {
    pub fn nu(&self) -> usize {
        self.small.nu()
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// Cached dense eigendecomposition of `H`.
    pub fn spectrum(&self) -> &Eigh {
        self.spectrum.get_or_init(|| eigh(&self.h))
    }

    /// Expectations of `N` in the eigenvectors of `H`.
    pub fn number_expectations(&self) -> Vec<f64> {
        expectations(self.spectrum(), &self.n)
    }

    pub fn model(&self) -> FieldModel<'_> {
        FieldModel {
            basis: &self.basis,
            d: self.nu(),
            omegas: &self.omegas,
            weights: &self.weights,
            g: &self.g,
            h: &self.h,
            n: &self.n,
            cache: &self.spectrum,
        }
    }
}

/// A generator `h = X ⊗ 1 + 1 ⊗ dΓ(ω) + φ(G)` on `C^d ⊗ Γ`, with its
/// number operator and spectral decomposition.
#[derive(Clone, Copy)]
pub struct FieldModel<'a> {
    pub basis: &'a OccBasis,
    pub d: usize,
    pub omegas: &'a [f64],
    pub weights: &'a [f64],
    pub g: &'a [DMatrix<C64>],
    pub h: &'a SparseOp,
    pub n: &'a SparseOp,
    /// Lazily filled eigendecomposition of `h`.
    pub cache: &'a OnceLock<Eigh>,
}

impl<'a> FieldModel<'a> {
    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn spectrum(&self) -> &'a Eigh {
        self.cache.get_or_init(|| eigh(self.h))
    }

    fn rotated_field(&self, x: &DMatrix<C64>, phase: C64) -> SparseOp {
        let g: Vec<DMatrix<C64>> = apply_one_particle(x, self.g).into_iter().map(|m| m * phase).collect();
        matrix_field(self.basis, &g)
    }
}

/// `⟨ψ_k, X ψ_k⟩` for every eigenvector.
pub fn expectations(e: &Eigh, x: &SparseOp) -> Vec<f64> {
    (0..e.dim())
        .map(|k| {
            let v: Vec<C64> = e.vectors.column(k).iter().copied().collect();
            inner(&v, &x.matvec(&v)).re
        })
        .collect()
}

pub fn assemble_h_with(small: &SmallSystem, g: Vec<DMatrix<C64>>, modes: &ModeSet, basis: &OccBasis) -> Result<HamiltonianBundle> {
    let nu = small.nu();
    if g.len() != modes.len() || basis.mode_count() != modes.len() {
        return Err(Error::InvalidInput("modes, basis and coupling disagree on the mode count".into()));
    }
    if g.iter().any(|m| m.shape() != (nu, nu)) {
        return Err(Error::InvalidInput(format!("coupling matrices must be {nu}x{nu}")));
    }
    let k = embed_small(&small.k_matrix(), basis);
    let hf = embed_fock(nu, &free_field(basis, &modes.omegas()));
    let h0 = k.add(&hf).into_hermitian()?;
    let h = h0.add(&matrix_field(basis, &g)).into_hermitian()?.with_basis_id(format!("C{nu}x{}", basis.id()));
    let n = embed_fock(nu, &number(basis));
    let (sigma, spectrum) = if h.dim() <= DENSE_EIG_MAX {
        let e = eigh(&h);
        (e.min(), OnceLock::from(e))
    } else {
        (lowest_eigenvalue(&h)?, OnceLock::new())
    };
    Ok(HamiltonianBundle {
        small: small.clone(),
        modes: modes.clone(),
        basis: basis.clone(),
        omegas: modes.omegas(),
        weights: modes.weights(),
        g,
        h0,
        h,
        n,
        sigma,
        spectrum,
    })
}

/// `H = K ⊗ 1 + 1 ⊗ dΓ(ω) + φ(G)`.
pub fn assemble_h(small: &SmallSystem, profile: &CouplingProfile, modes: &ModeSet, basis: &OccBasis) -> Result<HamiltonianBundle> {
    if profile.nu != small.nu() {
        return Err(Error::InvalidInput("profile and small system disagree on nu".into()));
    }
    let g = sample_coupling(profile, modes)?;
    assemble_h_with(small, g, modes, basis)
}

/// Componentwise conjugation in the product basis: `C X C` is `X̄`.
pub fn conjugated(x: &SparseOp) -> SparseOp {
    x.conj()
}

#[derive(Clone, Debug)]
pub struct CommutatorObservable {
    pub a_one: DMatrix<C64>,
    /// `i[diag(ω), a]`.
    pub c_one: DMatrix<C64>,
    /// `1 ⊗ dΓ(a)`.
    pub a: SparseOp,
    pub hprime_exact: SparseOp,
    pub hprime_formula: SparseOp,
    /// Sign `s` in `dΓ(c) + s·φ(i a G)` that matches the literal commutator.
    pub field_sign: f64,
    pub discrepancy: f64,
    /// Same discrepancy with the opposite field sign.
    pub discrepancy_other_sign: f64,
    /// `max |c − diag(m)|`: the discretization gap of the one-particle commutator.
    pub c_vs_m_gap: f64,
}

fn masked_rows(basis: &OccBasis, d: usize) -> Vec<bool> {
    let inner = basis.interior();
    (0..d).flat_map(|_| inner.iter().copied()).collect()
}

/// `max |X|` over columns whose Fock part is strictly below the cutoff.
pub fn below_cutoff_max(x: &SparseOp, basis: &OccBasis, d: usize) -> f64 {
    x.mask_cols(&masked_rows(basis, d)).max_abs()
}

/// Literal `i[H, dΓ(a)]` against `dΓ(c) ± φ(i a G)`.
pub fn commutator_observable(bundle: &HamiltonianBundle, spec: &ConjugateSpec) -> CommutatorObservable {
    commutator_observable_on(&bundle.model(), spec)
}

pub fn commutator_observable_on(m: &FieldModel, spec: &ConjugateSpec) -> CommutatorObservable {
    let a_one = conjugate_a_on(m.omegas, m.weights, spec);
    let c_one = one_particle_commutator(m.omegas, &a_one);
    let a = embed_fock(m.d, &dgamma(m.basis, &a_one));
    let hprime_exact = SparseOp::commutator(m.h, &a, Exec::default()).scale(C64::new(0.0, 1.0)).hermitian_part();
    let dgc = embed_fock(m.d, &dgamma(m.basis, &c_one));
    let field = m.rotated_field(&a_one, C64::new(0.0, 1.0));
    let minus = dgc.sub(&field);
    let plus = dgc.add(&field);
    let dm = below_cutoff_max(&hprime_exact.sub(&minus), m.basis, m.d);
    let dp = below_cutoff_max(&hprime_exact.sub(&plus), m.basis, m.d);
    let (field_sign, hprime_formula, discrepancy, other) = if dm <= dp { (-1.0, minus, dm, dp) } else { (1.0, plus, dp, dm) };
    let n = m.omegas.len();
    let c_vs_m_gap = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| {
            let target = if r == c { spec.m(m.omegas[r]) } else { 0.0 };
            (c_one[(r, c)] - target).norm()
        })
        .fold(0.0, f64::max);
    CommutatorObservable {
        a_one,
        c_one,
        a,
        hprime_exact,
        hprime_formula: hprime_formula.hermitian_part(),
        field_sign,
        discrepancy,
        discrepancy_other_sign: other,
        c_vs_m_gap,
    }
}

/// Residual of `i[H, N] = φ(−iG)` below the cutoff.
pub fn number_commutator_residual(bundle: &HamiltonianBundle) -> f64 {
    number_commutator_residual_on(&bundle.model())
}

pub fn number_commutator_residual_on(m: &FieldModel) -> f64 {
    let lhs = SparseOp::commutator(m.h, m.n, Exec::default()).scale(C64::new(0.0, 1.0));
    let rot: Vec<DMatrix<C64>> = m.g.iter().map(|x| x * C64::new(0.0, -1.0)).collect();
    below_cutoff_max(&lhs.sub(&matrix_field(m.basis, &rot)), m.basis, m.d)
}

#[derive(Clone, Debug, Serialize)]
pub struct VirialReport {
    /// `⟨ψ_k, X ψ_k⟩` in the rotated eigenbasis.
    pub values: Vec<f64>,
    pub max_abs: f64,
    /// `‖X‖`.
    pub scale: f64,
    pub tolerance: f64,
    /// Eigenvalue clusters of size > 1 that were rotated.
    pub degenerate_clusters: usize,
    pub pass: bool,
}

/// Expectation of `x` in each eigenvector of `e`, after diagonalizing the
/// compression of `x` on every cluster of (near-)degenerate eigenvalues.
pub fn rotated_expectations(e: &Eigh, x: &DMatrix<C64>, cluster_tol: f64) -> (Vec<f64>, usize) {
    let mut values = vec![0.0; e.dim()];
    let mut degenerate = 0;
    for cl in e.clusters(cluster_tol) {
        let v = DMatrix::from_fn(e.dim(), cl.len(), |r, c| e.vectors[(r, cl[c])]);
        let comp = v.adjoint() * x * &v;
        let comp = (&comp + comp.adjoint()) * C64::new(0.5, 0.0);
        if cl.len() > 1 {
            degenerate += 1;
        }
        let ev = Eigh::new(&comp);
        for (k, &idx) in cl.iter().enumerate() {
            values[idx] = ev.values[k];
        }
    }
    (values, degenerate)
}

/// Virial values of a commutator observable on the eigenvectors of `h`.
pub fn virial_values(e: &Eigh, hprime: &SparseOp, rel_tol: f64) -> VirialReport {
    let xd = hprime.to_dense();
    let scale = op_norm(&xd);
    let span = (e.max() - e.min()).abs().max(1.0);
    let (values, degenerate_clusters) = rotated_expectations(e, &xd, 1e-9 * span);
    let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tolerance = rel_tol * scale.max(f64::MIN_POSITIVE);
    VirialReport { values, max_abs, scale, tolerance, degenerate_clusters, pass: max_abs <= tolerance }
}

pub fn virial_check(bundle: &HamiltonianBundle, hprime: &SparseOp) -> VirialReport {
    virial_values(bundle.spectrum(), hprime, 1e-10)
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentRow {
    pub modes: usize,
    pub cap: usize,
    pub state: usize,
    pub energy: f64,
    pub number: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentScan {
    pub rows: Vec<MomentRow>,
    /// `(‖∇G‖ + ‖G/|k|‖)²` per mode grid, reported with `C = 1`.
    pub bound_values: Vec<f64>,
}

/// `⟨N⟩` in the lowest `k` eigenstates across mode-grid and cutoff ladders.
pub fn number_moment_scan(
    small: &SmallSystem,
    profile: &CouplingProfile,
    grids: &[ModeSet],
    caps: &[usize],
    k: usize,
) -> Result<MomentScan> {
    let mut rows = Vec::new();
    let mut bound_values = Vec::new();
    for modes in grids {
        let n = crate::coupling::norms_on(profile, modes, &ConjugateSpec::translations())?;
        bound_values.push((n[3] + n[2]).powi(2));
        for &cap in caps {
            let basis = OccBasis::new(modes.len(), cap, cap)?;
            let b = assemble_h(small, profile, modes, &basis)?;
            let e = b.spectrum();
            let nn = b.number_expectations();
            for s in 0..k.min(e.dim()) {
                rows.push(MomentRow { modes: modes.len(), cap, state: s, energy: e.values[s], number: nn[s] });
            }
        }
    }
    Ok(MomentScan { rows, bound_values })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateReport {
    pub name: String,
    pub window: Option<(f64, f64)>,
    pub constants: BTreeMap<String, f64>,
    /// Witnessed smallest eigenvalue of the certified operator.
    pub lambda_min: f64,
    /// Value `lambda_min` is compared against.
    pub threshold: f64,
    pub tolerance: f64,
    /// False when the certificate's hypothesis does not hold for the instance.
    pub applicable: bool,
    pub vacuous: bool,
    pub pass: bool,
}

impl CertificateReport {
    fn new(name: &str, lambda_min: f64, threshold: f64, tolerance: f64) -> Self {
        CertificateReport {
            name: name.into(),
            window: None,
            constants: BTreeMap::new(),
            lambda_min,
            threshold,
            tolerance,
            applicable: true,
            vacuous: false,
            pass: lambda_min - threshold >= -tolerance,
        }
    }

    fn vacuous(name: &str, threshold: f64, tolerance: f64) -> Self {
        let mut r = Self::new(name, f64::INFINITY, threshold, tolerance);
        r.vacuous = true;
        r
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.constants.insert(key.into(), v);
        self
    }
}

/// `dΓ(m(ω)) + s·φ(i a G)`: the commutator observable with the continuum
/// multiplier in place of the grid commutator `i[ω, a]`.
pub fn model_hprime(bundle: &HamiltonianBundle, spec: &ConjugateSpec, field_sign: f64) -> SparseOp {
    model_hprime_on(&bundle.model(), spec, field_sign)
}

pub fn model_hprime_on(m: &FieldModel, spec: &ConjugateSpec, field_sign: f64) -> SparseOp {
    let a_one = conjugate_a_on(m.omegas, m.weights, spec);
    let mvals: Vec<f64> = m.omegas.iter().map(|&w| spec.m(w)).collect();
    let dgm = embed_fock(m.d, &free_field(m.basis, &mvals));
    dgm.add_scaled(&m.rotated_field(&a_one, C64::new(0.0, 1.0)), C64::new(field_sign, 0.0))
        .into_hermitian()
        .expect("sum of Hermitian operators")
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WeakCouplingExtras {
    /// `λ_min(H′ − ¼ + ½P_Ω)`.
    pub derivable_bound: f64,
    /// `λ_min(H′ − ¼ + ¼P_Ω)`, reported only.
    pub stated_bound: f64,
    /// Eigenvectors of the generator with nonpositive `⟨H′⟩`.
    pub nonpositive_count: usize,
    /// Dimension of the small-system factor.
    pub small_dim: usize,
}

/// Weak-coupling certificate `H′ − ½N + ‖aG‖² ≥ 0` for the translation conjugate.
///
/// Also reports the consequences `H′ ≥ ¼ − ½P_Ω` (asserted only when
/// `‖aG‖ ≤ 1/2`) and the unasserted variant `H′ ≥ ¼ − ¼P_Ω`.
pub fn weak_coupling_certificate(bundle: &HamiltonianBundle, spec: &ConjugateSpec, field_sign: f64) -> Result<(CertificateReport, WeakCouplingExtras)> {
    weak_coupling_on(&bundle.model(), spec, field_sign, "weak_coupling_hamiltonian")
}

pub fn weak_coupling_on(m: &FieldModel, spec: &ConjugateSpec, field_sign: f64, name: &str) -> Result<(CertificateReport, WeakCouplingExtras)> {
    if spec.variant != ConjugateVariant::Translations {
        return Err(Error::InvalidInput("weak-coupling certificate needs the translation conjugate".into()));
    }
    let a_one = conjugate_a_on(m.omegas, m.weights, spec);
    let ag2 = l2_norm(&apply_one_particle(&a_one, m.g)).powi(2);
    let hp = model_hprime_on(m, spec, field_sign);
    let id = SparseOp::identity(m.dim(), "");
    let cert_op = hp.add_scaled(m.n, C64::new(-0.5, 0.0)).add_scaled(&id, C64::new(ag2, 0.0));
    let lam = Eigh::new(&cert_op.to_dense()).min();
    let mut vac = vec![0.0; m.dim()];
    for i in 0..m.d {
        vac[i * m.basis.dim()] = 1.0;
    }
    let pvac = SparseOp::diagonal(&vac, "");
    let quarter = |c: f64| {
        let x = hp.add_scaled(&id, C64::new(-0.25, 0.0)).add_scaled(&pvac, C64::new(c, 0.0));
        Eigh::new(&x.to_dense()).min()
    };
    let derivable = quarter(0.5);
    let stated = quarter(0.25);
    let e = m.spectrum();
    let (vals, _) = rotated_expectations(e, &hp.to_dense(), 1e-9 * (e.max() - e.min()).abs().max(1.0));
    let nonpositive_count = vals.iter().filter(|&&v| v <= 1e-10).count();
    let mut rep = CertificateReport::new(name, lam, 0.0, 1e-10)
        .with("aG_norm_sq", ag2)
        .with("lambda_min_quarter_minus_half_vacuum", derivable)
        .with("lambda_min_quarter_minus_quarter_vacuum", stated);
    rep.applicable = ag2.sqrt() <= 0.5 + 1e-12;
    Ok((rep, WeakCouplingExtras { derivable_bound: derivable, stated_bound: stated, nonpositive_count, small_dim: m.d }))
}

/// Eigenvectors with `⟨N⟩ < 1/2` are designated as point spectrum.
pub const POINT_SPECTRUM_NUMBER: f64 = 0.5;

fn compress_min(e: &Eigh, x: &DMatrix<C64>, keep: &[usize]) -> Option<f64> {
    if keep.is_empty() {
        return None;
    }
    let v = DMatrix::from_fn(e.dim(), keep.len(), |r, c| e.vectors[(r, keep[c])]);
    let comp = v.adjoint() * x * &v;
    let comp = (&comp + comp.adjoint()) * C64::new(0.5, 0.0);
    Some(Eigh::new(&comp).min())
}

/// Indices of eigenvectors in the window `|λ − E| < κ`, optionally without
/// the designated point-spectrum states.
pub fn window_indices(e: &Eigh, numbers: &[f64], energy: f64, kappa: f64, exclude_point: bool) -> Vec<usize> {
    (0..e.dim())
        .filter(|&k| (e.values[k] - energy).abs() < kappa)
        .filter(|&k| !exclude_point || numbers[k] >= POINT_SPECTRUM_NUMBER)
        .collect()
}

/// Compression of `dΓ(m_δ) + s·φ(i a_δ G)` to an energy window without the
/// designated point spectrum, against `1 − ε`.
pub fn mourre_window_certificate(
    bundle: &HamiltonianBundle,
    spec: &ConjugateSpec,
    field_sign: f64,
    energy: f64,
    kappa: f64,
    epsilon: f64,
) -> CertificateReport {
    mourre_window_on(&bundle.model(), spec, field_sign, energy, kappa, epsilon, "mourre_window_hamiltonian")
}

pub fn mourre_window_on(
    m: &FieldModel,
    spec: &ConjugateSpec,
    field_sign: f64,
    energy: f64,
    kappa: f64,
    epsilon: f64,
    name: &str,
) -> CertificateReport {
    let e = m.spectrum();
    let keep = window_indices(e, &expectations(e, m.n), energy, kappa, true);
    let hp = model_hprime_on(m, spec, field_sign).to_dense();
    let mut rep = match compress_min(e, &hp, &keep) {
        Some(l) => CertificateReport::new(name, l, 1.0 - epsilon, 1e-10),
        None => CertificateReport::vacuous(name, 1.0 - epsilon, 1e-10),
    };
    rep.window = Some((energy, kappa));
    rep.with("epsilon", epsilon).with("window_states", keep.len() as f64)
}

/// Compression to `λ > E₀` against `e`.
pub fn mourre_high_energy_certificate(bundle: &HamiltonianBundle, spec: &ConjugateSpec, field_sign: f64, e0: f64, e: f64) -> CertificateReport {
    mourre_high_energy_on(&bundle.model(), spec, field_sign, e0, e, false, "mourre_high_energy_hamiltonian")
}

/// Compression to `λ > E₀` (or `|λ| > E₀` when `two_sided`) against `e`.
pub fn mourre_high_energy_on(m: &FieldModel, spec: &ConjugateSpec, field_sign: f64, e0: f64, e: f64, two_sided: bool, name: &str) -> CertificateReport {
    let eig = m.spectrum();
    let keep: Vec<usize> = (0..eig.dim())
        .filter(|&k| if two_sided { eig.values[k].abs() > e0 } else { eig.values[k] > e0 })
        .collect();
    let hp = model_hprime_on(m, spec, field_sign).to_dense();
    let rep = match compress_min(eig, &hp, &keep) {
        Some(l) => CertificateReport::new(name, l, e, 1e-10),
        None => CertificateReport::vacuous(name, e, 1e-10),
    };
    rep.with("E0", e0).with("window_states", keep.len() as f64)
}

/// `‖a_j R ψ − (H+ω_j−z)⁻¹(a_j ψ − G_j R ψ/√2)‖` with `R = (H − z)⁻¹`.
///
/// The relation is exact except through the top-sector weight of `Rψ`,
/// where the truncated creation operator drops terms.
pub fn pullthrough_residual(bundle: &HamiltonianBundle, j: usize, z: C64, psi: &[C64]) -> Result<f64> {
    pullthrough_on(&bundle.model(), j, z, psi)
}

pub fn pullthrough_on(m: &FieldModel, j: usize, z: C64, psi: &[C64]) -> Result<f64> {
    if j >= m.omegas.len() || psi.len() != m.dim() {
        return Err(Error::InvalidInput("mode index or vector length out of range".into()));
    }
    let omega = m.omegas[j];
    let dist = if z.im.abs() >= 1e-8 {
        z.im.abs()
    } else {
        m.spectrum()
            .values
            .iter()
            .map(|&l| (C64::new(l, 0.0) - z).norm().min((C64::new(l + omega, 0.0) - z).norm()))
            .fold(f64::INFINITY, f64::min)
    };
    if dist < 1e-8 {
        return Err(Error::InvalidInput("z is within 1e-8 of the spectrum".into()));
    }
    let aj = embed_fock(m.d, &lowering(m.basis, j));
    let gj = SparseOp::kron(&SparseOp::from_dense(&m.g[j], ""), &SparseOp::identity(m.basis.dim(), ""));
    let h = m.h.to_dense();
    let id = DMatrix::<C64>::identity(h.nrows(), h.ncols());
    let rpsi = solve_vec(&(&h - &id * z), psi)?;
    let lhs = aj.matvec(&rpsi);
    let mut rhs_in = aj.matvec(psi);
    for (r, g) in rhs_in.iter_mut().zip(gj.matvec(&rpsi)) {
        *r -= g * std::f64::consts::FRAC_1_SQRT_2;
    }
    let rhs = solve_vec(&(&h + &id * (C64::new(omega, 0.0) - z)), &rhs_in)?;
    Ok(vec_norm(&lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<_>>()))
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolutionReport {
    pub times: Vec<f64>,
    /// `⟨φ, e^{−it(H−Σ)}ψ⟩`.
    pub trace: Vec<C64>,
    /// `(1/T)∫₀^T` of the trace, closed form at the last time.
    pub cesaro: C64,
    /// `⟨φ, P_Σ ψ⟩`.
    pub ground_element: C64,
    /// `(1/T)∫₀^T |⟨ψ, e^{−itH}ψ⟩|²` from the spectral sum.
    pub return_mean: f64,
    /// `Σ_λ |⟨ψ, P_λ ψ⟩|²`.
    pub return_limit: f64,
}

/// `(1/T)∫₀^T e^{−iΔt} dt`.
pub fn time_average_phase(delta: f64, t: f64) -> C64 {
    let x = delta * t;
    if x.abs() < 1e-8 {
        return C64::new(1.0, -x / 2.0);
    }
    (C64::from_polar(1.0, -x) - 1.0) / C64::new(0.0, -x)
}

/// Exact evolution through the spectral decomposition of `H`.
pub fn evolve_and_approach(bundle: &HamiltonianBundle, phi: &[C64], psi: &[C64], times: &[f64]) -> EvolutionReport {
    let e = bundle.spectrum();
    let v = &e.vectors;
    let cphi = mat_vec(&v.adjoint(), phi);
    let cpsi = mat_vec(&v.adjoint(), psi);
    let sigma = e.min();
    let trace: Vec<C64> = times
        .iter()
        .map(|&t| (0..e.dim()).map(|k| cphi[k].conj() * cpsi[k] * C64::from_polar(1.0, -t * (e.values[k] - sigma))).sum())
        .collect();
    let tmax = times.last().copied().unwrap_or(0.0);
    let cesaro = (0..e.dim()).map(|k| cphi[k].conj() * cpsi[k] * time_average_phase(e.values[k] - sigma, tmax)).sum();
    let span = (e.max() - e.min()).abs().max(1.0);
    let clusters = e.clusters(1e-9 * span);
    let ground_element = clusters[0].iter().map(|&k| cphi[k].conj() * cpsi[k]).sum();
    let weights: Vec<f64> = clusters.iter().map(|cl| cl.iter().map(|&k| cpsi[k].norm_sqr()).sum()).collect();
    let levels: Vec<f64> = clusters.iter().map(|cl| e.values[cl[0]]).collect();
    let return_limit = weights.iter().map(|w| w * w).sum();
    let mut return_mean = 0.0;
    for (a, wa) in weights.iter().enumerate() {
        for (b, wb) in weights.iter().enumerate() {
            return_mean += wa * wb * time_average_phase(levels[a] - levels[b], tmax).re;
        }
    }
    EvolutionReport { times: times.to_vec(), trace, cesaro, ground_element, return_mean, return_limit }
}

/// `Σ` along an amplitude ladder.
pub fn sigma_ladder(small: &SmallSystem, profile: &CouplingProfile, modes: &ModeSet, basis: &OccBasis, amplitudes: &[f64]) -> Result<Vec<f64>> {
    amplitudes.iter().map(|&l| Ok(assemble_h(small, &profile.with_amplitude(l), modes, basis)?.sigma)).collect()
}

/// `‖(H(G)−z)⁻¹ − (H(G′)−z)⁻¹‖ / ‖G − G′‖` for two bundles on the same basis.
pub fn resolvent_lipschitz_ratio(a: &HamiltonianBundle, b: &HamiltonianBundle, z: C64) -> Result<f64> {
    let id = DMatrix::<C64>::identity(a.dim(), a.dim());
    let ra = crate::dense::inverse(&(a.h.to_dense() - &id * z))?;
    let rb = crate::dense::inverse(&(b.h.to_dense() - &id * z))?;
    let dg: Vec<DMatrix<C64>> = a.g.iter().zip(&b.g).map(|(x, y)| x - y).collect();
    Ok(op_norm(&(ra - rb)) / l2_norm(&dg).max(f64::MIN_POSITIVE))
}
