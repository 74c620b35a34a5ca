//! Positive-temperature side: Gibbs data of the small system, the standard
//! Liouvillean on the doubled space, modular conjugation, the glued form on
//! signed frequencies, KMS vectors and Koopman diagnostics.
//!
//! Doubled vectors are indexed as `(i·ν + j)·dim(F) + s` where `F` is one
//! joint truncation over `2M` modes: left modes `0..M`, right modes `M..2M`.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coupling::{
    glued_coupling, l2_norm, left_right, planck, sample_coupling, thermal_couplings, CouplingForm, CouplingProfile,
    SignedModes, SmallSystem, ThermalCouplings,
};
use crate::dense::{inner, mat_vec, vec_norm, Eigh};
use crate::exec::Exec;
use crate::fock::{free_field, lowering, number, segal_field, ModeSet, OccBasis, DEFAULT_DIM_CAP};
use crate::hamiltonian::{
    assemble_h_with, commutator_observable_on, eigh, embed_fock, matrix_field, mourre_high_energy_on, mourre_window_on,
    number_commutator_residual_on, pullthrough_on, time_average_phase, weak_coupling_on, CertificateReport,
    CommutatorObservable, ConjugateSpec, FieldModel, WeakCouplingExtras,
};
use crate::krylov::expm_apply;
use crate::sparse::SparseOp;
use crate::{Error, Result};

pub use crate::coupling::planck as planck_density;

/// `e^{−βK}/Tr e^{−βK}`; at `β = ∞` the normalized projection onto the ground space.
pub fn gibbs_small(small: &SmallSystem, beta: f64) -> DMatrix<C64> {
    let w = gibbs_weights(small, beta);
    DMatrix::from_fn(small.nu(), small.nu(), |r, c| if r == c { C64::new(w[r], 0.0) } else { C64::new(0.0, 0.0) })
}

fn gibbs_weights(small: &SmallSystem, beta: f64) -> Vec<f64> {
    let e = small.energies();
    let e0 = e[0];
    let raw: Vec<f64> = if beta.is_infinite() {
        e.iter().map(|&x| if x - e0 <= 1e-12 * (1.0 + e0.abs()) { 1.0 } else { 0.0 }).collect()
    } else {
        e.iter().map(|&x| (-beta * (x - e0)).exp()).collect()
    };
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// `Σ_j √p_j e_j ⊗ e_j` on `C^ν ⊗ C^ν`.
pub fn gibbs_vector(small: &SmallSystem, beta: f64) -> Vec<C64> {
    let nu = small.nu();
    let w = gibbs_weights(small, beta);
    let mut v = vec![C64::new(0.0, 0.0); nu * nu];
    for (j, p) in w.iter().enumerate() {
        v[j * nu + j] = C64::new(p.sqrt(), 0.0);
    }
    v
}

/// `L_p = K ⊗ 1 − 1 ⊗ K̄` on `C^ν ⊗ C^ν`.
pub fn lp_operator(small: &SmallSystem) -> SparseOp {
    let e = small.energies();
    let nu = e.len();
    let d: Vec<f64> = (0..nu * nu).map(|k| e[k / nu] - e[k % nu]).collect();
    SparseOp::diagonal(&d, format!("lp(nu={nu})")).into_hermitian().expect("diagonal is Hermitian")
}

#[derive(Debug)]
pub struct DoubledSystem {
    pub small: SmallSystem,
    pub modes: ModeSet,
    /// One entry, or one per reservoir tag.
    pub betas: Vec<f64>,
    pub basis: OccBasis,
    /// Sampled zero-temperature couplings `G_j`.
    pub g: Vec<DMatrix<C64>>,
    pub thermal: ThermalCouplings,
    /// `[ω, −ω]` over left then right modes.
    pub omegas: Vec<f64>,
    pub weights: Vec<f64>,
    /// `[G_{β,l}, −G_{β,r}]`: the coupling seen by the doubled field.
    pub field_coupling: Vec<DMatrix<C64>>,
    pub lp: SparseOp,
    pub l0: SparseOp,
    pub w: SparseOp,
    pub l: SparseOp,
    pub n_l: SparseOp,
    /// Exchange of the two copies, `(i, j, n_l, n_r) ↦ (j, i, n_r, n_l)`.
    pub exchange: SparseOp,
    /// `J = conj ∘ P` with `P` the exchange permutation.
    pub j_perm: Vec<usize>,
    spectrum: OnceLock<Eigh>,
}

fn swap_halves(state: &[u8], m: usize) -> Vec<u8> {
    let mut out = state[m..].to_vec();
    out.extend_from_slice(&state[..m]);
    out
}

impl DoubledSystem {
    pub fn nu(&self) -> usize {
        self.small.nu()
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    pub fn spectrum(&self) -> &Eigh {
        self.spectrum.get_or_init(|| eigh(&self.l))
    }

    pub fn model(&self) -> FieldModel<'_> {
        FieldModel {
            basis: &self.basis,
            d: self.nu() * self.nu(),
            omegas: &self.omegas,
            weights: &self.weights,
            g: &self.field_coupling,
            h: &self.l,
            n: &self.n_l,
            cache: &self.spectrum,
        }
    }

    /// `J v`.
    pub fn apply_j(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        for (k, z) in v.iter().enumerate() {
            out[self.j_perm[k]] = z.conj();
        }
        out
    }

    /// `J X J`.
    pub fn j_conjugate(&self, x: &SparseOp) -> SparseOp {
        x.conj().permute(&self.j_perm)
    }

    /// `max |J L J + L|`.
    pub fn jlj_defect(&self) -> f64 {
        self.j_conjugate(&self.l).add(&self.l).max_abs()
    }

    /// `max_k |λ_k + λ_{dim−1−k}|` over the sorted spectrum.
    pub fn reflection_defect(&self) -> f64 {
        let v = &self.spectrum().values;
        let n = v.len();
        (0..n).map(|k| (v[k] + v[n - 1 - k]).abs()).fold(0.0, f64::max)
    }

    /// `Ω_β^PF`: the small-system Gibbs vector times the doubled vacuum.
    pub fn reference_vector(&self) -> Result<Vec<C64>> {
        let beta = self.single_beta()?;
        let gv = gibbs_vector(&self.small, beta);
        let df = self.basis.dim();
        let mut v = vec![C64::new(0.0, 0.0); self.dim()];
        for (k, z) in gv.iter().enumerate() {
            v[k * df] = *z;
        }
        Ok(v)
    }

    fn single_beta(&self) -> Result<f64> {
        let b = self.betas[0];
        if self.betas.iter().any(|&x| x != b) {
            return Err(Error::InvalidInput("needs a single temperature".into()));
        }
        Ok(b)
    }
}

/// Matrix sending `e_c` to `e_{perm[c]}`.
fn permutation_matrix(perm: &[usize]) -> SparseOp {
    let t = perm.iter().enumerate().map(|(c, &r)| (r, c, C64::new(1.0, 0.0)));
    SparseOp::from_triplets(perm.len(), perm.len(), t, "")
}

fn check_betas(betas: &[f64], modes: &ModeSet) -> Result<()> {
    if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::InvalidInput("inverse temperatures must be positive or infinite".into()));
    }
    if betas.len() > 1 && modes.modes().iter().any(|m| m.reservoir as usize >= betas.len()) {
        return Err(Error::InvalidInput("a mode's reservoir tag has no inverse temperature".into()));
    }
    Ok(())
}

fn doubled_basis(m: usize, cap: usize, nu: usize) -> Result<OccBasis> {
    let basis = OccBasis::new(2 * m, cap, cap)?;
    let dim = basis.dim() * nu * nu;
    if dim > DEFAULT_DIM_CAP {
        return Err(Error::TruncationTooLarge { dim, cap: DEFAULT_DIM_CAP });
    }
    Ok(basis)
}

/// `L_β = L_p + dΓ(ω) ⊗ 1 − 1 ⊗ dΓ(ω) + φ_l(G_{β,l}) − φ_r(G_{β,r})` on a
/// joint truncation with at most `cap` quanta in total.
pub fn assemble_liouvillean(small: &SmallSystem, profile: &CouplingProfile, modes: &ModeSet, cap: usize, betas: &[f64]) -> Result<DoubledSystem> {
    if profile.nu != small.nu() {
        return Err(Error::InvalidInput("profile and small system disagree on nu".into()));
    }
    assemble_liouvillean_with(small, sample_coupling(profile, modes)?, modes, cap, betas)
}

pub fn assemble_liouvillean_with(small: &SmallSystem, g: Vec<DMatrix<C64>>, modes: &ModeSet, cap: usize, betas: &[f64]) -> Result<DoubledSystem> {
    check_betas(betas, modes)?;
    let nu = small.nu();
    let m = modes.len();
    if g.len() != m || g.iter().any(|x| x.shape() != (nu, nu)) {
        return Err(Error::InvalidInput("coupling does not match modes and small system".into()));
    }
    let basis = doubled_basis(m, cap, nu)?;
    let df = basis.dim();
    let om = modes.omegas();
    let e = small.energies();

    // Diagonal as (E_i + Σ n_l ω) − (E_j + Σ n_r ω), so that J negates it exactly.
    let mut diag = vec![0.0; nu * nu * df];
    let mut lpd = vec![0.0; nu * nu * df];
    for (s, st) in basis.states().iter().enumerate() {
        let left: f64 = (0..m).map(|k| st[k] as f64 * om[k]).sum();
        let right: f64 = (0..m).map(|k| st[m + k] as f64 * om[k]).sum();
        for i in 0..nu {
            for j in 0..nu {
                let idx = (i * nu + j) * df + s;
                diag[idx] = (e[i] + left) - (e[j] + right);
                lpd[idx] = e[i] - e[j];
            }
        }
    }
    let l0 = SparseOp::diagonal(&diag, "").into_hermitian()?;
    let lp = SparseOp::diagonal(&lpd, "").into_hermitian()?;

    let thermal = thermal_couplings(&g, modes, betas);
    let mut field_coupling: Vec<DMatrix<C64>> = thermal.left.clone();
    field_coupling.extend(thermal.right.iter().map(|x| -x));
    let w = matrix_field(&basis, &field_coupling);
    let l = l0.add(&w).into_hermitian()?.with_basis_id(format!("doubled(nu={nu})x{}", basis.id()));
    let n_l = embed_fock(nu * nu, &number(&basis));

    let mut j_perm = vec![0; nu * nu * df];
    for (s, st) in basis.states().iter().enumerate() {
        let t = basis.index_of(&swap_halves(st, m)).expect("joint truncation is swap invariant");
        for i in 0..nu {
            for j in 0..nu {
                j_perm[(i * nu + j) * df + s] = (j * nu + i) * df + t;
            }
        }
    }
    let exchange = permutation_matrix(&j_perm);
    let mut omegas = om.clone();
    omegas.extend(om.iter().map(|w| -w));
    let mut weights = modes.weights();
    weights.extend(modes.weights());
    let sys = DoubledSystem {
        small: small.clone(),
        modes: modes.clone(),
        betas: betas.to_vec(),
        basis,
        g,
        thermal,
        omegas,
        weights,
        field_coupling,
        lp,
        l0,
        w,
        l,
        n_l,
        exchange,
        j_perm,
        spectrum: OnceLock::new(),
    };
    let defect = sys.jlj_defect();
    if defect > 1e-12 {
        return Err(Error::InvalidInput(format!("J L J + L defect {defect:.3e}")));
    }
    Ok(sys)
}

/// `max |L_∞ − (H ⊗ 1 − 1 ⊗ H^c)|` on the joint truncation.
pub fn zero_temperature_defect(sys: &DoubledSystem) -> Result<f64> {
    if sys.betas.iter().any(|b| b.is_finite()) {
        return Err(Error::InvalidInput("zero-temperature comparison needs beta = inf".into()));
    }
    let nu = sys.nu();
    let m = sys.modes.len();
    let cap = sys.basis.n_total_max();
    let single = OccBasis::new(m, cap, cap)?;
    let h = assemble_h_with(&sys.small, sys.g.clone(), &sys.modes, &single)?.h;
    let sf = single.dim();
    let df = sys.basis.dim();
    let split = |r: usize| -> (usize, usize) {
        let (ij, s) = (r / df, r % df);
        let st = sys.basis.state(s);
        let p = (ij / nu) * sf + single.index_of(&st[..m]).unwrap();
        let q = (ij % nu) * sf + single.index_of(&st[m..]).unwrap();
        (p, q)
    };
    let join = |p: usize, q: usize| -> Option<usize> {
        let mut st = single.state(p % sf).to_vec();
        st.extend_from_slice(single.state(q % sf));
        sys.basis.index_of(&st).map(|s| ((p / sf) * nu + q / sf) * df + s)
    };
    let mut trip = Vec::new();
    for r in 0..sys.dim() {
        let (p, q) = split(r);
        let (cols, vals) = h.row(p);
        for (&c, &v) in cols.iter().zip(vals) {
            if let Some(k) = join(c, q) {
                trip.push((r, k, v));
            }
        }
        let (cols, vals) = h.row(q);
        for (&c, &v) in cols.iter().zip(vals) {
            if let Some(k) = join(p, c) {
                trip.push((r, k, -v.conj()));
            }
        }
    }
    let expect = SparseOp::from_triplets(sys.dim(), sys.dim(), trip, "");
    Ok(expect.max_abs_diff(&sys.l))
}

#[derive(Clone, Debug, Serialize)]
pub struct WbetaReport {
    pub samples: usize,
    /// `max ‖W_β ψ‖ / rhs` over samples.
    pub max_ratio: f64,
    pub violations: usize,
    pub g_norm: f64,
    pub g_over_sqrt_norm: f64,
}

/// Samples `‖W_β ψ‖ ≤ (‖G‖ + 2β^{−1/2}‖G/√ω‖)(2^{3/2}‖ψ‖ + 2^{1/2}‖√N ψ‖)`.
pub fn wbeta_bound_check(sys: &DoubledSystem, samples: usize, seed: u64) -> WbetaReport {
    let g_norm = l2_norm(&sys.g);
    let ms = sys.modes.modes();
    let g_over_sqrt_norm = sys.g.iter().zip(ms).map(|(x, m)| crate::dense::op_norm(x).powi(2) / m.omega).sum::<f64>().sqrt();
    let beta_min = sys.betas.iter().copied().fold(f64::INFINITY, f64::min);
    let c = g_norm + if beta_min.is_finite() { 2.0 * beta_min.powf(-0.5) * g_over_sqrt_norm } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for _ in 0..samples {
        let psi: Vec<C64> = (0..sys.dim()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let lhs = vec_norm(&sys.w.matvec(&psi));
        let sqrt_n = inner(&psi, &sys.n_l.matvec(&psi)).re.max(0.0).sqrt();
        let rhs = c * (2f64.powf(1.5) * vec_norm(&psi) + 2f64.sqrt() * sqrt_n);
        if lhs > rhs + 1e-12 {
            violations += 1;
        }
        if rhs > 0.0 {
            max_ratio = max_ratio.max(lhs / rhs);
        }
    }
    WbetaReport { samples, max_ratio, violations, g_norm, g_over_sqrt_norm }
}

#[derive(Debug)]
pub struct GluedSystem {
    pub signed: SignedModes,
    pub basis: OccBasis,
    pub nu: usize,
    /// `Ĝ_β` on the signed modes.
    pub coupling: Vec<DMatrix<C64>>,
    pub l: SparseOp,
    pub n: SparseOp,
    /// Gluing unitary, a permutation of the doubled basis.
    pub u: SparseOp,
    pub u_perm: Vec<usize>,
    /// `max |U L_β U* − L̃_β|`.
    pub conjugation_defect: f64,
    /// `max |U N_L U* − Ñ|`.
    pub number_defect: f64,
    spectrum: OnceLock<Eigh>,
}

impl GluedSystem {
    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    pub fn spectrum(&self) -> &Eigh {
        self.spectrum.get_or_init(|| eigh(&self.l))
    }

    pub fn model(&self) -> FieldModel<'_> {
        FieldModel {
            basis: &self.basis,
            d: self.nu * self.nu,
            omegas: &self.signed.omegas,
            weights: &self.signed.weights,
            g: &self.coupling,
            h: &self.l,
            n: &self.n,
            cache: &self.spectrum,
        }
    }

    /// `max |U*U − 1|`.
    pub fn unitarity_defect(&self) -> f64 {
        self.u.adjoint().matmul(&self.u, Exec::default()).sub(&SparseOp::identity(self.dim(), "")).max_abs()
    }
}

/// Relabels left mode `j` as `+ω_j` and right mode `j` as `−ω_j`, and builds
/// `L̃_β = L_p + dΓ(ω̃) + φ(Ĝ_β)` directly for comparison.
pub fn glue(sys: &DoubledSystem) -> Result<GluedSystem> {
    let nu = sys.nu();
    let m = sys.modes.len();
    let signed = SignedModes::from_modes(&sys.modes);
    let target: Vec<usize> = (0..m).map(|j| signed.plus(&sys.modes, j)).chain((0..m).map(|j| signed.minus(&sys.modes, j))).collect();
    let basis = sys.basis.clone();
    let df = basis.dim();
    let mut u_perm = vec![0; sys.dim()];
    for (s, st) in sys.basis.states().iter().enumerate() {
        let mut t = vec![0u8; 2 * m];
        for (k, &n) in st.iter().enumerate() {
            t[target[k]] = n;
        }
        let idx = basis.index_of(&t).expect("relabeling preserves the joint truncation");
        for ij in 0..nu * nu {
            u_perm[ij * df + s] = ij * df + idx;
        }
    }
    let u = permutation_matrix(&u_perm);
    let coupling = glued_coupling(&sys.g, &sys.modes, &sys.betas);
    let free = embed_fock(nu * nu, &free_field(&basis, &signed.omegas));
    let l = sys.lp.add(&free).add(&matrix_field(&basis, &coupling)).into_hermitian()?;
    let n = embed_fock(nu * nu, &number(&basis));
    let conjugation_defect = sys.l.permute(&u_perm).max_abs_diff(&l);
    let number_defect = sys.n_l.permute(&u_perm).max_abs_diff(&n);
    Ok(GluedSystem { signed, basis, nu, coupling, l, n, u, u_perm, conjugation_defect, number_defect, spectrum: OnceLock::new() })
}

#[derive(Clone, Debug)]
pub struct LiouvilleCommutator {
    pub observable: CommutatorObservable,
    /// Residual of `i[Ñ, L̃] = φ(iĜ)` below the cutoff.
    pub number_residual: f64,
}

pub fn liouvillean_commutator(glued: &GluedSystem, spec: &ConjugateSpec) -> LiouvilleCommutator {
    let m = glued.model();
    LiouvilleCommutator { observable: commutator_observable_on(&m, spec), number_residual: number_commutator_residual_on(&m) }
}

/// `L̃′ − ½Ñ + ‖ãĜ_β‖² ≥ 0` for the translation conjugate on signed frequencies.
pub fn weak_coupling_liouville_certificate(glued: &GluedSystem, spec: &ConjugateSpec) -> Result<(CertificateReport, WeakCouplingExtras)> {
    weak_coupling_on(&glued.model(), spec, -1.0, "weak_coupling_liouville")
}

pub fn pullthrough_residual_glued(glued: &GluedSystem, j: usize, z: C64, psi: &[C64]) -> Result<f64> {
    pullthrough_on(&glued.model(), j, z, psi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KmsExponent {
    /// `e^{−β X}`.
    Beta,
    /// `e^{−β X / 2}`.
    HalfBeta,
}

#[derive(Clone, Debug, Serialize)]
pub struct KmsResult {
    pub vector: Vec<C64>,
    /// `‖L_β Ω‖` for the selected exponent.
    pub residual: f64,
    pub residual_beta: f64,
    pub residual_half_beta: f64,
    pub exponent: KmsExponent,
    /// `⟨Ω_β^PF, Ω⟩`.
    pub overlap: C64,
    /// `‖JΩ − Ω‖`.
    pub j_defect: f64,
}

/// Left Araki-Woods field `φ_l(√(1+ρ) G_l) + φ_r(√ρ G_l*)` on the doubled space.
pub fn left_thermal_field(sys: &DoubledSystem) -> SparseOp {
    let m = sys.modes.len();
    let mut c: Vec<DMatrix<C64>> = Vec::with_capacity(2 * m);
    let mut r: Vec<DMatrix<C64>> = Vec::with_capacity(m);
    for (gj, md) in sys.g.iter().zip(sys.modes.modes()) {
        let rho = planck(md.omega, crate::coupling::beta_for(&sys.betas, md.reservoir));
        let (gl, _) = left_right(gj);
        r.push(gl.adjoint() * C64::new(rho.sqrt(), 0.0));
        c.push(gl * C64::new((1.0 + rho).sqrt(), 0.0));
    }
    c.extend(r);
    matrix_field(&sys.basis, &c)
}

/// `Ω ∝ e^{−s(L_0 + φ_l^β(G))} Ω_β^PF` for `s ∈ {β, β/2}`; returns the one
/// with the smaller `‖L_β Ω‖`.
pub fn kms_vector(sys: &DoubledSystem) -> Result<KmsResult> {
    let beta = sys.single_beta()?;
    if beta.is_infinite() {
        return Err(Error::InvalidInput("KMS vector needs finite beta".into()));
    }
    let omega0 = sys.reference_vector()?;
    let x = sys.l0.add(&left_thermal_field(sys));
    let candidate = |s: f64| -> (Vec<C64>, f64) {
        let mut v = expm_apply(&x, C64::new(-s, 0.0), &omega0);
        let nv = vec_norm(&v);
        v.iter_mut().for_each(|z| *z /= nv);
        let r = vec_norm(&sys.l.matvec(&v));
        (v, r)
    };
    let (vb, rb) = candidate(beta);
    let (vh, rh) = candidate(beta / 2.0);
    let (vector, residual, exponent) = if rh <= rb { (vh, rh, KmsExponent::HalfBeta) } else { (vb, rb, KmsExponent::Beta) };
    let overlap = inner(&omega0, &vector);
    let jv = sys.apply_j(&vector);
    let j_defect = vec_norm(&jv.iter().zip(&vector).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(KmsResult { vector, residual, residual_beta: rb, residual_half_beta: rh, exponent, overlap, j_defect })
}

#[derive(Clone, Debug, Serialize)]
pub struct KmsLadder {
    pub caps: Vec<usize>,
    pub residuals: Vec<f64>,
    /// False when the residual fails to decrease along the ladder.
    pub converging: bool,
}

pub fn kms_ladder(small: &SmallSystem, g: &[DMatrix<C64>], modes: &ModeSet, caps: &[usize], beta: f64) -> Result<KmsLadder> {
    let residuals = caps
        .iter()
        .map(|&c| Ok(kms_vector(&assemble_liouvillean_with(small, g.to_vec(), modes, c, &[beta])?)?.residual))
        .collect::<Result<Vec<f64>>>()?;
    let converging = residuals.windows(2).all(|w| w[1] < w[0]);
    Ok(KmsLadder { caps: caps.to_vec(), residuals, converging })
}

#[derive(Clone, Debug, Serialize)]
pub struct VanHoveReport {
    pub cap: usize,
    /// `−Σ_j |g_j|²/(2ω_j)`.
    pub h_shift_closed: f64,
    /// Ground energy of the truncated `H`.
    pub h_shift_dense: f64,
    /// `Σ_j |g_j|²/(2ω_j²)`: ground-state `⟨N⟩` of the continuum displacement.
    pub ground_number_closed: f64,
    /// Largest column norm of `V* L_β V − L_0` on states with at most one quantum.
    pub dressing_residual: f64,
    /// `|⟨V Ω_0, Ω_KMS⟩|` when `β` is finite.
    pub kms_overlap: Option<f64>,
}

/// Closed-form van Hove data for `ν = 1` and the truncated dressing
/// `V = exp(iφ_l(iG_{β,l}/ω) + iφ_r(iG_{β,r}/ω))`.
pub fn vanhove_oracle(profile: &CouplingProfile, modes: &ModeSet, cap: usize, beta: f64) -> Result<VanHoveReport> {
    if profile.nu != 1 {
        return Err(Error::InvalidInput("van Hove oracle needs nu = 1".into()));
    }
    if let CouplingForm::Scalar { g0, .. } = &profile.form {
        if g0[(0, 0)].im != 0.0 {
            return Err(Error::InvalidInput("van Hove oracle needs a real profile".into()));
        }
    }
    let g = sample_coupling(profile, modes)?;
    vanhove_with(g, modes, cap, beta)
}

pub fn vanhove_with(g: Vec<DMatrix<C64>>, modes: &ModeSet, cap: usize, beta: f64) -> Result<VanHoveReport> {
    let om = modes.omegas();
    let h_shift_closed = -g.iter().zip(&om).map(|(x, w)| x[(0, 0)].norm_sqr() / (2.0 * w)).sum::<f64>();
    let ground_number_closed = g.iter().zip(&om).map(|(x, w)| x[(0, 0)].norm_sqr() / (2.0 * w * w)).sum::<f64>();
    let small = SmallSystem::new(vec![0.0])?;
    let single = OccBasis::new(modes.len(), cap, cap)?;
    let h_shift_dense = assemble_h_with(&small, g.clone(), modes, &single)?.sigma;
    let sys = assemble_liouvillean_with(&small, g, modes, cap, &[beta])?;
    let f: Vec<C64> = sys
        .thermal
        .left
        .iter()
        .chain(&sys.thermal.right)
        .zip(om.iter().chain(&om))
        .map(|(x, w)| C64::new(0.0, 1.0) * x[(0, 0)] / *w)
        .collect();
    let gen = segal_field(&sys.basis, &f);
    let v = Eigh::new(&gen.to_dense()).apply_fn(|l| C64::from_polar(1.0, l));
    let d = v.adjoint() * sys.l.to_dense() * &v - sys.l0.to_dense();
    let probe = sys.basis.sector_indices(1);
    let dressing_residual = probe.iter().map(|&c| d.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let kms_overlap = if beta.is_finite() {
        let k = kms_vector(&sys)?;
        Some(inner(&v.column(0).iter().copied().collect::<Vec<_>>(), &k.vector).norm())
    } else {
        None
    };
    Ok(VanHoveReport { cap, h_shift_closed, h_shift_dense, ground_number_closed, dressing_residual, kms_overlap })
}

#[derive(Clone, Debug, Serialize)]
pub struct WeylReport {
    pub truncated: C64,
    /// `exp(−‖√(1+2ρ) f‖²/4)`.
    pub closed_form: f64,
    pub gap: f64,
}

fn aw_coefficients(modes: &ModeSet, betas: &[f64], f: &[C64], left: bool) -> Vec<C64> {
    let mut a = Vec::with_capacity(2 * f.len());
    let mut b = Vec::with_capacity(f.len());
    for (fj, md) in f.iter().zip(modes.modes()) {
        let rho = planck(md.omega, crate::coupling::beta_for(betas, md.reservoir));
        let (s1, s0) = ((1.0 + rho).sqrt(), rho.sqrt());
        if left {
            a.push(fj * s1);
            b.push(fj.conj() * s0);
        } else {
            a.push(fj * s0);
            b.push(fj.conj() * s1);
        }
    }
    a.extend(b);
    a
}

/// Left Araki-Woods field `φ_l(√(1+ρ) f) + φ_r(√ρ f̄)`.
pub fn aw_field_left(basis: &OccBasis, modes: &ModeSet, betas: &[f64], f: &[C64]) -> SparseOp {
    segal_field(basis, &aw_coefficients(modes, betas, f, true))
}

/// Right Araki-Woods field `φ_r(√(1+ρ) f̄) + φ_l(√ρ f)`.
pub fn aw_field_right(basis: &OccBasis, modes: &ModeSet, betas: &[f64], f: &[C64]) -> SparseOp {
    segal_field(basis, &aw_coefficients(modes, betas, f, false))
}

/// `⟨Ω, e^{iφ_l^AW(f)} Ω⟩` in the doubled vacuum against its closed form.
pub fn weyl_expectation(modes: &ModeSet, betas: &[f64], f: &[C64], cap: usize) -> Result<WeylReport> {
    check_betas(betas, modes)?;
    if f.len() != modes.len() {
        return Err(Error::InvalidInput("test function length differs from the mode count".into()));
    }
    let basis = OccBasis::new(2 * modes.len(), cap, cap)?;
    let phi = aw_field_left(&basis, modes, betas, f);
    let mut vac = vec![C64::new(0.0, 0.0); basis.dim()];
    vac[0] = C64::new(1.0, 0.0);
    let truncated = expm_apply(&phi, C64::new(0.0, 1.0), &vac)[0];
    let q: f64 = f
        .iter()
        .zip(modes.modes())
        .map(|(fj, md)| (1.0 + 2.0 * planck(md.omega, crate::coupling::beta_for(betas, md.reservoir))) * fj.norm_sqr())
        .sum();
    let closed_form = (-q / 4.0).exp();
    Ok(WeylReport { truncated, closed_form, gap: (truncated - closed_form).norm() })
}

/// `max ‖[W_l(f), W_r(g)] e_k‖` over basis vectors with at most one quantum.
pub fn weyl_left_right_commutator(modes: &ModeSet, betas: &[f64], f: &[C64], g: &[C64], cap: usize) -> Result<f64> {
    check_betas(betas, modes)?;
    let basis = OccBasis::new(2 * modes.len(), cap, cap)?;
    let pl = aw_field_left(&basis, modes, betas, f);
    let pr = aw_field_right(&basis, modes, betas, g);
    let i = C64::new(0.0, 1.0);
    let worst = basis
        .sector_indices(1)
        .into_iter()
        .map(|k| {
            let mut e = vec![C64::new(0.0, 0.0); basis.dim()];
            e[k] = C64::new(1.0, 0.0);
            let a = expm_apply(&pl, i, &expm_apply(&pr, i, &e));
            let b = expm_apply(&pr, i, &expm_apply(&pl, i, &e));
            vec_norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>())
        })
        .fold(0.0, f64::max);
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct KoopmanReport {
    /// `⟨Ψ, e^{itL} A e^{−itL} Ψ⟩` on the time grid.
    pub correlation: Vec<C64>,
    /// Time average over `[0, T]`, `T` the last grid time.
    pub mean: C64,
    /// Sum over coinciding eigenvalue pairs.
    pub limit: C64,
    pub kernel_dim: usize,
    /// Smallest `|λ|` outside the kernel.
    pub gap: f64,
    pub ill_conditioned: bool,
    /// `|limit − ⟨Ω, AΩ⟩|` when the kernel is one-dimensional.
    pub kernel_distance: Option<f64>,
}

/// Kernel threshold relative to `‖L‖`.
pub const KERNEL_TOL: f64 = 1e-8;

pub fn koopman_diagnostics(e: &Eigh, a: &SparseOp, psi: &[C64], times: &[f64]) -> KoopmanReport {
    let v = &e.vectors;
    let c = mat_vec(&v.adjoint(), psi);
    let av = a.to_dense() * v;
    let akl = v.adjoint() * av;
    let n = e.dim();
    let corr_at = |t: f64| -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for k in 0..n {
            for l in 0..n {
                s += c[k].conj() * c[l] * akl[(k, l)] * C64::from_polar(1.0, t * (e.values[k] - e.values[l]));
            }
        }
        s
    };
    let correlation = times.iter().map(|&t| corr_at(t)).collect();
    let tmax = times.last().copied().unwrap_or(0.0);
    let norm = e.values.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let span_tol = 1e-9 * norm;
    let clusters = e.clusters(span_tol);
    // Levels below the clustering tolerance count as one eigenvalue, so rounding
    // splits of exact degeneracies do not dephase at large times.
    let mut level = e.values.clone();
    for cl in &clusters {
        let m = cl.iter().map(|&k| e.values[k]).sum::<f64>() / cl.len() as f64;
        cl.iter().for_each(|&k| level[k] = m);
    }
    let mut mean = C64::new(0.0, 0.0);
    for k in 0..n {
        for l in 0..n {
            mean += c[k].conj() * c[l] * akl[(k, l)] * time_average_phase(level[l] - level[k], tmax);
        }
    }
    let mut limit = C64::new(0.0, 0.0);
    for cl in clusters {
        for &k in &cl {
            for &l in &cl {
                limit += c[k].conj() * c[l] * akl[(k, l)];
            }
        }
    }
    let kernel: Vec<usize> = (0..n).filter(|&k| e.values[k].abs() < KERNEL_TOL * norm).collect();
    let gap = (0..n).filter(|k| !kernel.contains(k)).map(|k| e.values[k].abs()).fold(f64::INFINITY, f64::min);
    let ill_conditioned = gap < 1e-6 * norm;
    let kernel_distance = (kernel.len() == 1).then(|| (limit - akl[(kernel[0], kernel[0])]).norm());
    KoopmanReport { correlation, mean, limit, kernel_dim: kernel.len(), gap, ill_conditioned, kernel_distance }
}

#[derive(Clone, Debug, Serialize)]
pub struct LowTemperatureRow {
    pub beta: f64,
    pub window: CertificateReport,
    pub high_energy: CertificateReport,
}

#[derive(Clone, Copy, Debug)]
pub struct LowTemperatureWindow {
    pub energy: f64,
    pub kappa: f64,
    pub epsilon: f64,
    /// High-energy threshold `E₀` and target `e`.
    pub e0: f64,
    pub e_high: f64,
}

/// Window and high-energy certificates for `L̃′` along a β ladder.
pub fn low_temperature_certificate(
    small: &SmallSystem,
    g: &[DMatrix<C64>],
    modes: &ModeSet,
    cap: usize,
    betas: &[f64],
    spec: &ConjugateSpec,
    w: LowTemperatureWindow,
    exec: Exec,
) -> Result<Vec<LowTemperatureRow>> {
    exec.map(betas, |&beta| {
        let sys = assemble_liouvillean_with(small, g.to_vec(), modes, cap, &[beta])?;
        let glued = glue(&sys)?;
        let m = glued.model();
        Ok(LowTemperatureRow {
            beta,
            window: mourre_window_on(&m, spec, -1.0, w.energy, w.kappa, w.epsilon, "mourre_window_liouville"),
            high_energy: mourre_high_energy_on(&m, spec, -1.0, w.e0, w.e_high, true, "mourre_high_energy_liouville"),
        })
    })
    .into_iter()
    .collect()
}

/// Fraction of passing window certificates among the first `k` rows, per `k`.
pub fn pass_fractions(rows: &[LowTemperatureRow]) -> Vec<f64> {
    let mut passed = 0;
    rows.iter()
        .enumerate()
        .map(|(k, r)| {
            passed += r.window.pass as usize;
            passed as f64 / (k + 1) as f64
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HvzProbe {
    pub target: f64,
    /// Signed frequency closest to the target.
    pub frequency: f64,
    /// `‖(L̃ − ω_j) v‖` for `v ∝ a_j* ψ₀`, `ψ₀` the eigenvector closest to 0.
    pub residual: f64,
}

/// Approximate eigenvector for `target` built by adding one quantum at the
/// signed frequency closest to it on top of the near-kernel eigenvector.
pub fn hvz_probe(glued: &GluedSystem, target: f64) -> HvzProbe {
    let e = glued.spectrum();
    let k0 = (0..e.dim()).min_by(|&a, &b| e.values[a].abs().total_cmp(&e.values[b].abs())).unwrap();
    let psi0: Vec<C64> = e.vectors.column(k0).iter().copied().collect();
    let om = &glued.signed.omegas;
    let j = (0..om.len()).min_by(|&a, &b| (om[a] - target).abs().total_cmp(&(om[b] - target).abs())).unwrap();
    let adag = embed_fock(glued.nu * glued.nu, &lowering(&glued.basis, j).adjoint());
    let mut v = adag.matvec(&psi0);
    let nv = vec_norm(&v);
    v.iter_mut().for_each(|z| *z /= nv);
    let lv = glued.l.matvec(&v);
    let shift = om[j] + e.values[k0];
    let residual = vec_norm(&lv.iter().zip(&v).map(|(a, b)| a - b * shift).collect::<Vec<_>>());
    HvzProbe { target, frequency: om[j], residual }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{glued_representation_gap, UvShape};
    use crate::dense::real;
    use crate::hamiltonian::{virial_values, ConjugateVariant};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random_g(seed: u64, m: usize, nu: usize, s: f64) -> Vec<DMatrix<C64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| DMatrix::from_fn(nu, nu, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * s)).collect()
    }

    fn hermitian_g(seed: u64, m: usize, nu: usize, s: f64) -> Vec<DMatrix<C64>> {
        random_g(seed, m, nu, s).into_iter().map(|x| (&x + x.adjoint()) * real(0.5)).collect()
    }

    fn two_level() -> SmallSystem {
        SmallSystem::new(vec![0.0, 1.0]).unwrap()
    }

    fn modes2() -> ModeSet {
        ModeSet::from_omegas(&[0.6, 1.3]).unwrap()
    }

    #[test]
    fn planck_examples() {
        assert!((planck_density(1.0, 1.0) - 0.5819767068693265).abs() < 1e-15);
        let r = planck_density(0.001, 2.0);
        assert!((r - 500.0).abs() / 500.0 < 1e-3);
        assert!((r - 1.0 / 0.002f64.exp_m1()).abs() < 1e-12);
        assert_eq!(planck_density(1.0, f64::INFINITY), 0.0);
        assert_eq!(planck_density(1.0, 1e6), 0.0);
    }

    #[test]
    fn gibbs_examples() {
        let s = two_level();
        let rho = gibbs_small(&s, 2f64.ln());
        assert!((rho[(0, 0)].re - 2.0 / 3.0).abs() < 1e-15 && (rho[(1, 1)].re - 1.0 / 3.0).abs() < 1e-15);
        let rho = gibbs_small(&s, f64::INFINITY);
        assert_eq!(rho[(0, 0)], real(1.0));
        assert_eq!(rho[(1, 1)], real(0.0));
        let mut ev = Eigh::new(&lp_operator(&s).to_dense()).values;
        ev.iter_mut().for_each(|x| *x = x.round());
        assert_eq!(ev, vec![-1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn free_liouvillean_spectrum() {
        let s = two_level();
        let sys = assemble_liouvillean_with(&s, vec![DMatrix::zeros(2, 2); 2], &modes2(), 2, &[1.0]).unwrap();
        let zeros = sys.spectrum().values.iter().filter(|x| x.abs() < 1e-12).count();
        assert!(zeros >= 2);
        for d in [-1.0, 1.0] {
            assert!(sys.spectrum().values.iter().any(|x| (x - d).abs() < 1e-12));
        }
    }

    #[test]
    fn modular_symmetry_exact() {
        for seed in 0..3 {
            let sys = assemble_liouvillean_with(&two_level(), random_g(seed, 2, 2, 0.4), &modes2(), 2, &[1.5]).unwrap();
            assert_eq!(sys.jlj_defect(), 0.0);
            assert!(sys.reflection_defect() < 1e-10);
            let v: Vec<C64> = (0..sys.dim()).map(|k| C64::new(k as f64, 1.0 / (1.0 + k as f64))).collect();
            assert_eq!(sys.apply_j(&sys.apply_j(&v)), v);
            assert!(sys.l.is_hermitian());
        }
    }

    #[test]
    fn zero_temperature_reduction() {
        let sys = assemble_liouvillean_with(&two_level(), random_g(4, 2, 2, 0.5), &modes2(), 3, &[f64::INFINITY]).unwrap();
        assert_eq!(zero_temperature_defect(&sys).unwrap(), 0.0);
    }

    #[test]
    fn wbeta_bound_holds() {
        let sys = assemble_liouvillean_with(&two_level(), random_g(5, 2, 2, 0.5), &modes2(), 3, &[0.7]).unwrap();
        let r = wbeta_bound_check(&sys, 200, 1);
        assert_eq!(r.violations, 0);
        assert!(r.max_ratio > 0.0 && r.max_ratio <= 1.0);
        let sys0 = assemble_liouvillean_with(&two_level(), vec![DMatrix::zeros(2, 2); 2], &modes2(), 2, &[0.7]).unwrap();
        let r0 = wbeta_bound_check(&sys0, 5, 1);
        assert_eq!((r0.violations, r0.max_ratio), (0, 0.0));
    }

    #[test]
    fn wbeta_on_vacuum_is_creation_only() {
        let sys = assemble_liouvillean_with(&two_level(), random_g(6, 2, 2, 0.5), &modes2(), 3, &[1.0]).unwrap();
        let mut v = vec![real(0.0); sys.dim()];
        v[0] = real(1.0);
        let wv = sys.w.matvec(&v);
        let one = sys.basis.sector_indices(1);
        for (k, z) in wv.iter().enumerate() {
            if z.norm() > 0.0 {
                assert!(one.contains(&(k % sys.basis.dim())) && sys.basis.total(k % sys.basis.dim()) == 1);
            }
        }
        // ‖W Ω‖² = ½ Σ_j (‖G_{β,l,j} ξ‖² + ‖G_{β,r,j} ξ‖²) with ξ = e_0 ⊗ e_0
        let mut expect = 0.0;
        for x in sys.field_coupling.iter() {
            expect += 0.5 * x.column(0).iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        assert!((vec_norm(&wv).powi(2) - expect).abs() < 1e-13);
    }

    #[test]
    fn gluing_is_exact_permutation() {
        let sys = assemble_liouvillean_with(&two_level(), random_g(7, 2, 2, 0.5), &modes2(), 3, &[0.9]).unwrap();
        let gl = glue(&sys).unwrap();
        assert_eq!(gl.signed.omegas, vec![-1.3, -0.6, 0.6, 1.3]);
        assert!(gl.conjugation_defect < 1e-12 && gl.number_defect < 1e-12);
        assert!(gl.unitarity_defect() < 1e-12);
        let mut a = gl.spectrum().values.clone();
        let b = sys.spectrum().values.clone();
        a.iter_mut().zip(&b).for_each(|(x, y)| *x -= y);
        assert!(a.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn glued_representation_identity_hermitian() {
        let g = hermitian_g(8, 2, 2, 0.7);
        assert!(glued_representation_gap(&g, &modes2(), &[1.1]) < 1e-12);
    }

    #[test]
    fn liouvillean_commutator_identities() {
        let spec = ConjugateSpec::translations();
        let sys = assemble_liouvillean_with(&two_level(), random_g(9, 2, 2, 0.4), &modes2(), 2, &[1.2]).unwrap();
        let gl = glue(&sys).unwrap();
        let c = liouvillean_commutator(&gl, &spec);
        assert!(c.observable.discrepancy < 1e-12, "{}", c.observable.discrepancy);
        assert_eq!(c.observable.field_sign, -1.0);
        assert!(c.number_residual < 1e-13);
        let v = virial_values(gl.spectrum(), &c.observable.hprime_exact, 1e-10);
        assert!(v.pass, "{} vs {}", v.max_abs, v.tolerance);
        let sys0 = assemble_liouvillean_with(&two_level(), vec![DMatrix::zeros(2, 2); 2], &modes2(), 2, &[1.2]).unwrap();
        let gl0 = glue(&sys0).unwrap();
        let c0 = liouvillean_commutator(&gl0, &spec).observable;
        let dgc = embed_fock(4, &crate::fock::dgamma(&gl0.basis, &c0.c_one));
        assert!(c0.hprime_exact.max_abs_diff(&dgc) < 1e-13);
    }

    #[test]
    fn weak_coupling_liouville() {
        let spec = ConjugateSpec::translations();
        let sys0 = assemble_liouvillean_with(&two_level(), vec![DMatrix::zeros(2, 2); 2], &modes2(), 2, &[1.0]).unwrap();
        let (r0, _) = weak_coupling_liouville_certificate(&glue(&sys0).unwrap(), &spec).unwrap();
        assert!(r0.pass && r0.lambda_min.abs() < 1e-12);
        let g = random_g(10, 2, 2, 1.0);
        let gl = glue(&assemble_liouvillean_with(&two_level(), g.clone(), &modes2(), 2, &[1.0]).unwrap()).unwrap();
        let a = crate::hamiltonian::conjugate_a_on(&gl.signed.omegas, &gl.signed.weights, &spec);
        let s = 1.0 / (2.0 * l2_norm(&crate::coupling::apply_one_particle(&a, &gl.coupling)));
        let gs: Vec<DMatrix<C64>> = g.iter().map(|x| x * real(s)).collect();
        let gl = glue(&assemble_liouvillean_with(&two_level(), gs, &modes2(), 2, &[1.0]).unwrap()).unwrap();
        let (r, ex) = weak_coupling_liouville_certificate(&gl, &spec).unwrap();
        assert!(r.pass && r.applicable, "{r:?}");
        assert!(ex.nonpositive_count <= 4, "{ex:?}");
    }

    #[test]
    fn kms_free_is_reference() {
        let sys = assemble_liouvillean_with(&two_level(), vec![DMatrix::zeros(2, 2); 2], &modes2(), 2, &[1.3]).unwrap();
        let k = kms_vector(&sys).unwrap();
        assert_eq!(k.residual, 0.0);
        let r = sys.reference_vector().unwrap();
        assert!(k.vector.iter().zip(&r).all(|(a, b)| (a - b).norm() < 1e-15));
        assert!(k.j_defect < 1e-15);
    }

    #[test]
    fn kms_residual_decreases_with_cutoff() {
        let g = hermitian_g(11, 2, 2, 0.15);
        let lad = kms_ladder(&two_level(), &g, &modes2(), &[4, 8], 1.0).unwrap();
        assert!(lad.converging, "{lad:?}");
        let sys = assemble_liouvillean_with(&two_level(), g, &modes2(), 8, &[1.0]).unwrap();
        let k = kms_vector(&sys).unwrap();
        assert_eq!(k.exponent, KmsExponent::HalfBeta);
        assert!(k.overlap.re > 0.0 && k.overlap.im.abs() < 1e-12);
        assert!(k.j_defect < 1e-6, "{}", k.j_defect);
    }

    #[test]
    fn vanhove_examples() {
        let modes = ModeSet::from_omegas(&[1.0]).unwrap();
        let r = vanhove_with(vec![DMatrix::from_element(1, 1, real(0.2))], &modes, 10, 2.0).unwrap();
        assert!((r.h_shift_closed + 0.02).abs() < 1e-15);
        assert!((r.h_shift_dense - r.h_shift_closed).abs() < 1e-10);
        let coarse = vanhove_with(vec![DMatrix::from_element(1, 1, real(0.2))], &modes, 4, 2.0).unwrap();
        assert!(r.dressing_residual < coarse.dressing_residual);
        assert!(r.kms_overlap.unwrap() > coarse.kms_overlap.unwrap() - 1e-12);
        assert!((1.0 - r.kms_overlap.unwrap()) < 1e-6);
        let z = vanhove_with(vec![DMatrix::from_element(1, 1, real(0.0))], &modes, 4, f64::INFINITY).unwrap();
        assert!(z.dressing_residual < 1e-14);
        let bad = CouplingProfile::scalar(2, 0.5, 1.0, UvShape::Gaussian, DMatrix::identity(2, 2), 0.1, 1.0).unwrap();
        assert!(vanhove_oracle(&bad, &modes, 4, 1.0).is_err());
    }

    #[test]
    fn weyl_examples() {
        let modes = ModeSet::from_omegas(&[1.0]).unwrap();
        let r = weyl_expectation(&modes, &[f64::INFINITY], &[real(0.5)], 12).unwrap();
        assert!((r.closed_form - (-0.0625f64).exp()).abs() < 1e-15);
        assert!(r.gap < 1e-6, "{}", r.gap);
        let z = weyl_expectation(&modes, &[1.0], &[real(0.0)], 4).unwrap();
        assert_eq!(z.truncated, real(1.0));
        let t = weyl_expectation(&modes, &[0.8], &[C64::new(0.3, 0.2)], 14).unwrap();
        assert!(t.gap < 1e-6, "{}", t.gap);
        let c = weyl_left_right_commutator(&modes, &[0.8], &[C64::new(0.3, 0.1)], &[C64::new(-0.2, 0.25)], 16).unwrap();
        assert!(c < 1e-8, "{c}");
    }

    #[test]
    fn koopman_examples() {
        let sys = assemble_liouvillean_with(&two_level(), vec![DMatrix::zeros(2, 2); 2], &modes2(), 2, &[1.0]).unwrap();
        let e = sys.spectrum();
        let psi: Vec<C64> = (0..sys.dim()).map(|k| real(1.0 / (1.0 + k as f64))).collect();
        let id = SparseOp::identity(sys.dim(), "");
        let r = koopman_diagnostics(e, &id, &psi, &[0.0, 1.0, 5.0]);
        let n2 = vec_norm(&psi).powi(2);
        assert!(r.correlation.iter().all(|z| (z - n2).norm() < 1e-12));
        assert!(r.kernel_dim >= 2);
        let a = sys.n_l.clone();
        let r = koopman_diagnostics(e, &a, &psi, &[1e12]);
        assert!((r.mean - r.limit).norm() < 1e-8);
        let r = koopman_diagnostics(e, &sys.w.add(&sys.n_l), &psi, &[1e16]);
        assert!((r.mean - r.limit).norm() < 1e-10, "{:?}", r.mean - r.limit);
    }

    #[test]
    fn koopman_return_to_kernel_state() {
        let g: Vec<DMatrix<C64>> = (0..2).map(|_| DMatrix::from_row_slice(2, 2, &[real(0.0), real(0.12), real(0.12), real(0.0)])).collect();
        let sys = assemble_liouvillean_with(&two_level(), g, &modes2(), 4, &[1.0]).unwrap();
        let r = koopman_diagnostics(sys.spectrum(), &sys.n_l, &kms_vector(&sys).unwrap().vector, &[1e12]);
        if let Some(d) = r.kernel_distance {
            assert!(d < 1e-3, "{d}");
        }
    }

    #[test]
    fn low_temperature_examples() {
        let spec = ConjugateSpec::new(0.5, 1.0, 0.2, ConjugateVariant::MDelta).unwrap();
        let w = LowTemperatureWindow { energy: 0.9, kappa: 0.2, epsilon: 0.5, e0: 3.0, e_high: 0.5 };
        let rows = low_temperature_certificate(&two_level(), &[DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)], &modes2(), 2, &[f64::INFINITY], &spec, w, Exec::Sequential).unwrap();
        let mmin = [0.6, 1.3].iter().map(|&x| spec.m(x)).fold(f64::INFINITY, f64::min);
        assert!(rows[0].window.pass && rows[0].window.lambda_min >= mmin - 1e-12);
        assert!(rows[0].high_energy.pass);
    }

    #[test]
    fn glued_pullthrough() {
        let sys = assemble_liouvillean_with(&two_level(), vec![DMatrix::zeros(2, 2); 2], &modes2(), 3, &[1.0]).unwrap();
        let gl = glue(&sys).unwrap();
        let psi: Vec<C64> = (0..gl.dim()).map(|k| real(if gl.basis.total(k % gl.basis.dim()) < 3 { 1.0 } else { 0.0 })).collect();
        assert!(pullthrough_residual_glued(&gl, 1, C64::new(0.2, 0.4), &psi).unwrap() < 1e-13);
        let sys = assemble_liouvillean_with(&two_level(), hermitian_g(12, 2, 2, 0.005), &modes2(), 6, &[1.0]).unwrap();
        let gl = glue(&sys).unwrap();
        let psi: Vec<C64> = (0..gl.dim()).map(|k| real(if gl.basis.total(k % gl.basis.dim()) <= 1 { 1.0 } else { 0.0 })).collect();
        let r = pullthrough_residual_glued(&gl, 0, C64::new(0.2, 1.0), &psi).unwrap();
        assert!(r < 1e-10, "{r}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn prop_liouvillean_symmetries(seed in 0u64..10_000, beta in 0.3f64..5.0) {
            let sys = assemble_liouvillean_with(&two_level(), random_g(seed, 2, 2, 0.5), &modes2(), 2, &[beta]).unwrap();
            prop_assert_eq!(sys.jlj_defect(), 0.0);
            prop_assert!(sys.reflection_defect() < 1e-10);
            let gl = glue(&sys).unwrap();
            prop_assert!(gl.conjugation_defect < 1e-12);
        }
    }
}
