//! Regularized Mourre theory on matrices: the `in(A+in)⁻¹` regularizer,
//! C¹(A) slope tests, the weight `M = T′ + C_M f⊥(T)` and probes of the
//! resolvent of `T_ε = T − iεT′` as `ε → 0`.
//!
//! A finite matrix has no continuous spectrum, so the uniform bounds are
//! probed on windows without designated point spectrum, at `Im z ≥ η_min`,
//! and judged by the stability of fitted constants.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::dense::{identity, inner, mat_vec, op_norm, solve_vec, vec_norm, Eigh};
use crate::exec::Exec;
use crate::fock::dgamma;
use crate::hamiltonian::{conjugate_a_on, embed_fock, model_hprime_on, ConjugateSpec, FieldModel};
use crate::sparse::SparseOp;
use crate::{Error, Result};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Allowed growth of a fitted constant along the ε ladder or under halving of `η_min`.
pub const STABILITY_FACTOR: f64 = 2.0;

/// `I_n = in(A+in)⁻¹` and `A_n = A·I_n`, with convergence diagnostics on a vector.
#[derive(Clone, Debug)]
pub struct Regularized {
    pub n: f64,
    pub i_n: DMatrix<C64>,
    pub a_n: DMatrix<C64>,
    /// `‖I_n u − u‖`.
    pub to_identity: f64,
    /// `‖A_n u − A u‖`.
    pub to_a: f64,
}

pub fn regularizer(a: &SparseOp, n: f64, u: &[C64]) -> Result<Regularized> {
    if !(n >= 1.0) {
        return Err(Error::InvalidInput(format!("regularizer needs n >= 1, got {n}")));
    }
    let ad = a.to_dense();
    let shifted = &ad + identity(ad.nrows()) * C64::new(0.0, n);
    let inv = shifted.try_inverse().ok_or(Error::Singular)?;
    let i_n = inv * C64::new(0.0, n);
    let a_n = &ad * &i_n;
    let iu = mat_vec(&i_n, u);
    let au = mat_vec(&ad, u);
    let anu = mat_vec(&a_n, u);
    let diff = |x: &[C64], y: &[C64]| vec_norm(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>());
    Ok(Regularized { n, to_identity: diff(&iu, u), to_a: diff(&anu, &au), i_n, a_n })
}

/// `‖[B, W_t]‖ / t` on a grid with `W_t = exp(itA)`, against `‖[B, A]‖`.
#[derive(Clone, Debug, Serialize)]
pub struct C1Slope {
    pub ts: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Largest ratio over the grid.
    pub slope: f64,
    pub commutator_norm: f64,
}

pub fn c1_slope_test(b: &SparseOp, a: &SparseOp, ts: &[f64]) -> Result<C1Slope> {
    let defect = a.hermiticity_defect();
    if defect > 1e-12 * a.max_abs().max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    let (bd, ad) = (b.to_dense(), a.to_dense());
    let eig = Eigh::new(&ad);
    let ratios: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let w = eig.apply_fn(|l| C64::from_polar(1.0, t * l));
            op_norm(&(&bd * &w - &w * &bd)) / t
        })
        .collect();
    let slope = ratios.iter().copied().fold(0.0, f64::max);
    let commutator_norm = op_norm(&(&bd * &ad - &ad * &bd));
    Ok(C1Slope { ts: ts.to_vec(), ratios, slope, commutator_norm })
}

/// Smooth window profile `f` with `0 ≤ f ≤ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum WindowProfile {
    /// `f ≡ 1`.
    Everywhere,
    /// `f = 1` on `|t − center| ≤ inner`, `f = 0` on `|t − center| ≥ outer`, C^∞ in between.
    Bump { center: f64, inner: f64, outer: f64 },
}

fn smooth_step(x: f64) -> f64 {
    let h = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    let (p, q) = (h(x), h(1.0 - x));
    if p + q == 0.0 {
        0.0
    } else {
        p / (p + q)
    }
}

impl WindowProfile {
    /// Bump supported in `(E − κ, E + κ)` and equal to one on the middle half.
    pub fn around(energy: f64, kappa: f64) -> Self {
        WindowProfile::Bump { center: energy, inner: 0.5 * kappa, outer: kappa }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            WindowProfile::Everywhere => 1.0,
            WindowProfile::Bump { center, inner, outer } => {
                let d = (t - center).abs();
                if d <= inner {
                    1.0
                } else if d >= outer {
                    0.0
                } else {
                    1.0 - smooth_step((d - inner) / (outer - inner))
                }
            }
        }
    }

    /// Open interval containing the support, if bounded.
    pub fn support(&self) -> Option<(f64, f64)> {
        match *self {
            WindowProfile::Everywhere => None,
            WindowProfile::Bump { center, outer, .. } => Some((center - outer, center + outer)),
        }
    }

    /// Interval on which `f = 1`, if bounded.
    pub fn plateau(&self) -> Option<(f64, f64)> {
        match *self {
            WindowProfile::Everywhere => None,
            WindowProfile::Bump { center, inner, .. } => Some((center - inner, center + inner)),
        }
    }
}

/// `T`, `T′`, a Hermitian conjugate `A` and the weight `M = T′ + C_M f⊥(T) ⪰ e`.
#[derive(Clone, Debug)]
pub struct MourreTriple {
    pub t: SparseOp,
    pub tprime: SparseOp,
    pub a: SparseOp,
    pub profile: WindowProfile,
    pub e: f64,
    pub c_m: f64,
    pub m: SparseOp,
    /// `λ_min(M)`.
    pub m_min: f64,
    /// Shift with `T′ + η ⪰ 1`.
    pub eta: f64,
    t_dense: DMatrix<C64>,
    tp_dense: DMatrix<C64>,
    t_eig: Eigh,
    f_perp: DMatrix<C64>,
    m_half: DMatrix<C64>,
    m_inv: DMatrix<C64>,
}

fn check_hermitian(x: &SparseOp) -> Result<()> {
    let d = x.hermiticity_defect();
    if d > 1e-12 * x.max_abs().max(1.0) {
        return Err(Error::NotHermitian(d));
    }
    Ok(())
}

fn f_perp_of(eig: &Eigh, profile: &WindowProfile) -> DMatrix<C64> {
    eig.apply_fn_real(|l| 1.0 - profile.eval(l))
}

/// `λ_min(T′ + C_M f⊥(T))`: the largest `e` the pair witnesses on the window.
pub fn witness_e(t: &SparseOp, tprime: &SparseOp, profile: &WindowProfile, c_m: f64) -> f64 {
    let eig = Eigh::new(&t.to_dense());
    let m = tprime.to_dense() + f_perp_of(&eig, profile) * C64::new(c_m, 0.0);
    Eigh::new(&((&m + m.adjoint()) * C64::new(0.5, 0.0))).min()
}

/// Builds `M = T′ + C_M f⊥(T)` and certifies `M ⪰ e` before use.
pub fn build_m(t: SparseOp, tprime: SparseOp, a: SparseOp, profile: WindowProfile, e: f64, c_m: f64) -> Result<MourreTriple> {
    check_hermitian(&t)?;
    check_hermitian(&tprime)?;
    check_hermitian(&a)?;
    if t.dim() != tprime.dim() || t.dim() != a.dim() {
        return Err(Error::InvalidInput("T, T′ and A must share one space".into()));
    }
    if !(e > 0.0) || !(c_m >= 0.0) {
        return Err(Error::InvalidInput(format!("need e > 0 and C_M >= 0, got e = {e}, C_M = {c_m}")));
    }
    let t_dense = t.to_dense();
    let tp_dense = tprime.to_dense();
    let t_eig = Eigh::new(&t_dense);
    let f_perp = f_perp_of(&t_eig, &profile);
    let m_dense = &tp_dense + &f_perp * C64::new(c_m, 0.0);
    let m_dense = (&m_dense + m_dense.adjoint()) * C64::new(0.5, 0.0);
    let m_eig = Eigh::new(&m_dense);
    let m_min = m_eig.min();
    let tol = 1e-10 * m_eig.max().abs().max(1.0);
    if m_min < e - tol {
        return Err(Error::NoCertificate(format!("λ_min(T′ + C_M f⊥(T)) = {m_min:.6e} < e = {e:.6e} at C_M = {c_m}")));
    }
    let eta = 1.0 - Eigh::new(&tp_dense).min();
    let m_half = m_eig.apply_fn_real(|l| l.max(0.0).sqrt());
    let m_inv = m_eig.apply_fn_real(|l| 1.0 / l);
    let m = SparseOp::from_dense(&m_dense, t.basis_id()).into_hermitian()?;
    Ok(MourreTriple { t, tprime, a, profile, e, c_m, m, m_min, eta, t_dense, tp_dense, t_eig, f_perp, m_half, m_inv })
}

/// Triple for a field model: `T = h`, `T′ = dΓ(m) + s·φ(iaG)`, `A = dΓ(a)`,
/// with `e` witnessed as `λ_min(M)`.
pub fn triple_from_model(m: &FieldModel, spec: &ConjugateSpec, field_sign: f64, profile: WindowProfile, c_m: f64) -> Result<MourreTriple> {
    let tprime = model_hprime_on(m, spec, field_sign);
    let a_one = conjugate_a_on(m.omegas, m.weights, spec);
    let a = embed_fock(m.d, &dgamma(m.basis, &a_one)).hermitian_part();
    let e = witness_e(m.h, &tprime, &profile, c_m);
    if !(e > 0.0) {
        return Err(Error::NoCertificate(format!("witnessed e = {e:.6e} is not positive at C_M = {c_m}")));
    }
    build_m(m.h.clone(), tprime, a, profile, e, c_m)
}

/// Norms of `R_ε(z) = (T − iεT′ − z)⁻¹`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ResolventNorms {
    pub eps: f64,
    pub re_z: f64,
    pub im_z: f64,
    pub r: f64,
    pub m_half_r: f64,
    pub m_half_r_fperp: f64,
    /// `‖M^{1/2} R M^{1/2}‖`, the norm of `R` from `M*` to `M`.
    pub m_half_r_m_half: f64,
}

impl MourreTriple {
    pub fn dim(&self) -> usize {
        self.t.dim()
    }

    pub fn t_epsilon(&self, eps: f64) -> DMatrix<C64> {
        &self.t_dense - &self.tp_dense * C64::new(0.0, eps)
    }

    /// `max |T_ε* − T_{−ε}|`.
    pub fn adjoint_defect(&self, eps: f64) -> f64 {
        (self.t_epsilon(eps).adjoint() - self.t_epsilon(-eps)).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn m_norm_sq(&self, v: &[C64]) -> f64 {
        inner(v, &mat_vec(&self.m.to_dense(), v)).re
    }

    /// `‖v‖²_{M*} = ⟨v, M⁻¹v⟩`.
    pub fn m_star_norm_sq(&self, v: &[C64]) -> f64 {
        inner(v, &mat_vec(&self.m_inv, v)).re
    }

    pub fn f_perp(&self) -> &DMatrix<C64> {
        &self.f_perp
    }

    pub fn spectrum(&self) -> &Eigh {
        &self.t_eig
    }

    fn check_pre(eps: f64, z: C64) -> Result<()> {
        if !(eps * z.im > 0.0) {
            return Err(Error::InvalidInput(format!("need ε·Im z > 0, got ε = {eps}, z = {z}")));
        }
        Ok(())
    }

    /// Dense `R_ε(z)` and its norms.
    pub fn resolvent(&self, eps: f64, z: C64) -> Result<(DMatrix<C64>, ResolventNorms)> {
        Self::check_pre(eps, z)?;
        let shifted = self.t_epsilon(eps) - identity(self.dim()) * z;
        let r = shifted
            .try_inverse()
            .ok_or_else(|| Error::Divergent(format!("z = {z} lies in the spectrum of T_ε at ε = {eps}")))?;
        let mr = &self.m_half * &r;
        let norms = ResolventNorms {
            eps,
            re_z: z.re,
            im_z: z.im,
            r: op_norm(&r),
            m_half_r: op_norm(&mr),
            m_half_r_fperp: op_norm(&(&mr * &self.f_perp)),
            m_half_r_m_half: op_norm(&(&mr * &self.m_half)),
        };
        Ok((r, norms))
    }

    /// `R_ε(z) v`; `ε = 0` gives `(T − z)⁻¹ v`.
    pub fn resolvent_apply(&self, eps: f64, z: C64, v: &[C64]) -> Result<Vec<C64>> {
        let shifted = self.t_epsilon(eps) - identity(self.dim()) * z;
        solve_vec(&shifted, v)
    }

    /// Both sides of the elementary bound for `u = R_ε(z) v`:
    /// `|ε|‖u‖²_M + |Im z|‖u‖²` against `|Im⟨u,(T_ε−z)u⟩| + |ε|C_M‖u‖‖f⊥(T)u‖`.
    pub fn apriori_sides(&self, eps: f64, z: C64, v: &[C64]) -> Result<(f64, f64)> {
        if eps * z.im < 0.0 {
            return Err(Error::InvalidInput(format!("need ε·Im z >= 0, got ε = {eps}, z = {z}")));
        }
        let u = self.resolvent_apply(eps, z, v)?;
        let un = vec_norm(&u);
        let lhs = eps.abs() * self.m_norm_sq(&u) + z.im.abs() * un * un;
        let tu: Vec<C64> = mat_vec(&self.t_epsilon(eps), &u).iter().zip(&u).map(|(a, b)| a - z * b).collect();
        let fu = mat_vec(&self.f_perp, &u);
        let rhs = inner(&u, &tu).im.abs() + eps.abs() * self.c_m * un * vec_norm(&fu);
        Ok((lhs, rhs))
    }

    /// `max |i[(A+ζ)⁻¹, T] − (A+ζ)⁻¹ T′ (A+ζ)⁻¹|` per `ζ`. Zero exactly when `T′ = i[T, A]`.
    pub fn m4_residuals(&self, zetas: &[C64]) -> Result<Vec<f64>> {
        let ad = self.a.to_dense();
        zetas
            .iter()
            .map(|&zeta| {
                let ra = (&ad + identity(self.dim()) * zeta).try_inverse().ok_or(Error::Singular)?;
                let lhs = (&ra * &self.t_dense - &self.t_dense * &ra) * I;
                let rhs = &ra * &self.tp_dense * &ra;
                Ok((lhs - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max))
            })
            .collect()
    }

    /// Largest gap between consecutive eigenvalues of `T` in `[lo, hi]`,
    /// counting the interval ends: the resolution of the discretized continuum.
    pub fn gap_resolution(&self, lo: f64, hi: f64) -> f64 {
        let mut pts = vec![lo];
        pts.extend(self.t_eig.values.iter().copied().filter(|&l| l > lo && l < hi));
        pts.push(hi);
        pts.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn distance_to_spectrum(&self, z: C64) -> f64 {
        self.t_eig.values.iter().map(|&l| (C64::new(l, 0.0) - z).norm()).fold(f64::INFINITY, f64::min)
    }
}

pub fn t_epsilon_resolvent(triple: &MourreTriple, eps: f64, z: C64) -> Result<(DMatrix<C64>, ResolventNorms)> {
    triple.resolvent(eps, z)
}

/// Largest `ε ≤ eps_max` such that `‖R_ε(z)‖·|eε + Im z| ≤ c` and
/// `ε‖M^{1/2}R_ε(z)‖ ≤ c` on every `z` of the grid (upper half plane).
///
/// Bisection assumes the bounds fail on a single upper interval.
pub fn epsilon_zero(triple: &MourreTriple, zs: &[C64], c: f64, eps_max: f64, iters: usize) -> Result<f64> {
    if zs.iter().any(|z| z.im <= 0.0) {
        return Err(Error::InvalidInput("ε₀ search needs Im z > 0".into()));
    }
    let holds = |eps: f64| -> Result<bool> {
        for &z in zs {
            let (_, n) = triple.resolvent(eps, z)?;
            if n.r * (triple.e * eps + z.im).abs() > c || eps * n.m_half_r > c {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if holds(eps_max)? {
        return Ok(eps_max);
    }
    let (mut lo, mut hi) = (0.0, eps_max);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One `(ε, z)` evaluation of the probe.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LapSample {
    pub z_index: usize,
    pub norms: ResolventNorms,
    /// `F_z(ε) = ⟨u, R_ε(z) u⟩`.
    pub f_re: f64,
    pub f_im: f64,
    /// `‖R_ε(z) u‖_M`.
    pub r_u_m: f64,
    /// `|⟨Su, R_ε(z) Su⟩|` when `S` is supplied.
    pub weighted: Option<f64>,
    /// `‖R_ε(z)u − (T−z)⁻¹u‖`.
    pub to_resolvent: f64,
}

impl LapSample {
    pub fn f_abs(&self) -> f64 {
        C64::new(self.f_re, self.f_im).norm()
    }
}

/// The `ε = 0` end of the ladder at one `z`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LapLimit {
    pub re_z: f64,
    pub im_z: f64,
    /// `‖(T − z)⁻¹‖ = 1/dist(z, σ(T))`.
    pub r: f64,
    pub f_abs: f64,
    pub weighted: Option<f64>,
    /// Set when `dist(z, σ(T)) < η_min`; flagged points are left out of every fit.
    pub flagged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LapConstants {
    /// `max ‖R_ε(z)‖·|eε + Im z|`.
    pub inv_norm: f64,
    /// `max ε‖M^{1/2}R_ε(z)‖`.
    pub inv_weighted: f64,
    /// `max √ε‖M^{1/2}R_ε(z) f⊥(T)‖`.
    pub localized: f64,
    /// `max (√ε‖R_ε u‖_M − 2|F_z(ε)|^{1/2})₊ / ‖u‖_{M*}`.
    pub vector_weighted: f64,
    /// `max ε‖M^{1/2}R_ε(z)M^{1/2}‖`.
    pub sandwich: f64,
    /// `max |F_z(ε)| / (‖u‖²_{M*} + ‖Au‖²_{M*})`, including `ε = 0`.
    pub lap: f64,
    /// `max |⟨Su, R Su⟩| / (‖u‖² + ‖Au‖²)`, including `ε = 0`.
    pub lap_weighted: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LapPass {
    pub inverse: bool,
    pub localized: bool,
    pub weighted_pair: bool,
    pub lap_bound: bool,
    pub weighted: Option<bool>,
    pub to_resolvent: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LapProbeReport {
    pub eps: Vec<f64>,
    pub z: Vec<(f64, f64)>,
    pub eta_min: f64,
    pub samples: Vec<LapSample>,
    pub limits: Vec<LapLimit>,
    pub e: f64,
    pub u_sq: f64,
    pub au_sq: f64,
    pub u_m_star_sq: f64,
    pub au_m_star_sq: f64,
    /// Tolerance on `‖R_ε u − (T−z)⁻¹u‖` at the smallest ε.
    pub to_resolvent_tol: f64,
    pub constants: LapConstants,
    pub pass: LapPass,
}

pub const CSV_HEADER: [&str; 6] = ["eps", "re_z", "im_z", "norm_r", "norm_m_half_r", "abs_f"];

/// True when the largest value on the lower half of the ladder (smallest ε)
/// does not exceed the factor times the largest value on the upper half.
fn ladder_stable(pairs: &[(f64, f64)]) -> bool {
    let mut eps: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    if eps.len() < 2 {
        return true;
    }
    let split = eps[eps.len() / 2];
    let low = pairs.iter().filter(|p| p.0 < split).map(|p| p.1).fold(0.0, f64::max);
    let high = pairs.iter().filter(|p| p.0 >= split).map(|p| p.1).fold(0.0, f64::max);
    low <= STABILITY_FACTOR * high + 1e-12
}

fn per_z_stable(samples: &[&LapSample], limits: &[LapLimit], q: impl Fn(&LapSample) -> f64, q0: impl Fn(&LapLimit) -> Option<f64>) -> bool {
    limits.iter().enumerate().filter(|(_, l)| !l.flagged).all(|(k, l)| {
        let mut pairs: Vec<(f64, f64)> = samples.iter().filter(|s| s.z_index == k).map(|s| (s.norms.eps.abs(), q(s))).collect();
        if let Some(v) = q0(l) {
            pairs.push((0.0, v));
        }
        ladder_stable(&pairs)
    })
}

impl LapProbeReport {
    /// Recomputes constants and pass flags from the stored samples.
    pub fn evaluate(&self) -> (LapConstants, LapPass) {
        let kept: Vec<&LapSample> = self.samples.iter().filter(|s| !self.limits[s.z_index].flagged).collect();
        let live: Vec<&LapLimit> = self.limits.iter().filter(|l| !l.flagged).collect();
        let e = self.e;
        let q_inv = |s: &LapSample| s.norms.r * (e * s.norms.eps + s.norms.im_z).abs();
        let q_invw = |s: &LapSample| s.norms.eps.abs() * s.norms.m_half_r;
        let q4 = |s: &LapSample| s.norms.eps.abs().sqrt() * s.norms.m_half_r_fperp;
        let u_ms = self.u_m_star_sq.sqrt();
        let q5a = |s: &LapSample| ((s.norms.eps.abs().sqrt() * s.r_u_m - 2.0 * s.f_abs().sqrt()).max(0.0)) / u_ms;
        let q5b = |s: &LapSample| s.norms.eps.abs() * s.norms.m_half_r_m_half;
        let lap_den = self.u_m_star_sq + self.au_m_star_sq;
        let q_lap = |s: &LapSample| s.f_abs() / lap_den;
        let w_den = self.u_sq + self.au_sq;
        let has_w = self.samples.first().map(|s| s.weighted.is_some()).unwrap_or(false);
        let fmax = |q: &dyn Fn(&LapSample) -> f64| kept.iter().map(|s| q(s)).fold(0.0, f64::max);
        let lap = fmax(&q_lap).max(live.iter().map(|l| l.f_abs / lap_den).fold(0.0, f64::max));
        let lap_weighted = has_w.then(|| {
            kept.iter()
                .filter_map(|s| s.weighted)
                .chain(live.iter().filter_map(|l| l.weighted))
                .map(|w| w / w_den)
                .fold(0.0, f64::max)
        });
        let constants = LapConstants {
            inv_norm: fmax(&q_inv),
            inv_weighted: fmax(&q_invw),
            localized: fmax(&q4),
            vector_weighted: fmax(&q5a),
            sandwich: fmax(&q5b),
            lap,
            lap_weighted,
        };
        let none = |_: &LapLimit| None;
        let eps_min = self.eps.iter().copied().map(f64::abs).fold(f64::INFINITY, f64::min);
        let at_min: Vec<&&LapSample> = kept.iter().filter(|s| s.norms.eps.abs() == eps_min).collect();
        let monotone = live.iter().enumerate().all(|(k, _)| {
            let mut pts: Vec<(f64, f64)> = kept.iter().filter(|s| s.z_index == k).map(|s| (s.norms.eps.abs(), s.to_resolvent)).collect();
            pts.sort_by(|a, b| b.0.total_cmp(&a.0));
            pts.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-6) + 1e-14)
        });
        let to_resolvent = monotone && at_min.iter().all(|s| s.to_resolvent <= self.to_resolvent_tol);
        let pass = LapPass {
            inverse: per_z_stable(&kept, &self.limits, q_inv, |l| Some(l.r * l.im_z.abs()))
                && per_z_stable(&kept, &self.limits, q_invw, none),
            localized: per_z_stable(&kept, &self.limits, q4, none),
            weighted_pair: per_z_stable(&kept, &self.limits, q5a, none) && per_z_stable(&kept, &self.limits, q5b, none),
            lap_bound: per_z_stable(&kept, &self.limits, q_lap, |l| Some(l.f_abs / lap_den)),
            weighted: has_w.then(|| per_z_stable(&kept, &self.limits, |s| s.weighted.unwrap_or(0.0) / w_den, |l| l.weighted.map(|w| w / w_den))),
            to_resolvent,
        };
        (constants, pass)
    }

    pub fn reproducible(&self) -> bool {
        self.evaluate() == (self.constants, self.pass)
    }

    pub fn all_pass(&self) -> bool {
        let p = self.pass;
        p.inverse && p.localized && p.weighted_pair && p.lap_bound && p.weighted.unwrap_or(true) && p.to_resolvent
    }

    pub fn csv_rows(&self) -> Vec<[f64; 6]> {
        self.samples
            .iter()
            .map(|s| [s.norms.eps, s.norms.re_z, s.norms.im_z, s.norms.r, s.norms.m_half_r, s.f_abs()])
            .collect()
    }
}

/// `F_z(ε)` and the companion norms along an ε ladder for every `z` of a grid.
///
/// The ladder holds magnitudes; each `ε` takes the sign of `Im z`. Points with
/// `dist(z, σ(T)) < η_min` are flagged and excluded from the fits, since the
/// finite-dimensional supremum diverges at eigenvalues. `s` is the optional
/// weight of the improved bound, typically `(N+1)^{1/2}`.
pub fn lap_probe(
    triple: &MourreTriple,
    u: &[C64],
    zs: &[C64],
    eps_ladder: &[f64],
    eta_min: f64,
    s: Option<&SparseOp>,
    exec: Exec,
) -> Result<LapProbeReport> {
    if u.len() != triple.dim() {
        return Err(Error::InvalidInput(format!("vector length {} does not match dimension {}", u.len(), triple.dim())));
    }
    if !(eta_min > 0.0) || eps_ladder.is_empty() || eps_ladder.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidInput("need η_min > 0 and a nonempty ladder of positive ε".into()));
    }
    if zs.iter().any(|z| z.im == 0.0) {
        return Err(Error::InvalidInput("probe points need Im z ≠ 0".into()));
    }
    let au = triple.a.matvec(u);
    let su = s.map(|s| s.matvec(u));
    let free: Vec<Vec<C64>> = zs.iter().map(|&z| triple.resolvent_apply(0.0, z, u)).collect::<Result<_>>()?;
    let limits: Vec<LapLimit> = zs
        .iter()
        .zip(&free)
        .map(|(&z, r0u)| {
            let dist = triple.distance_to_spectrum(z);
            let weighted = match &su {
                Some(v) => Some(inner(v, &triple.resolvent_apply(0.0, z, v)?).norm()),
                None => None,
            };
            Ok(LapLimit { re_z: z.re, im_z: z.im, r: 1.0 / dist, f_abs: inner(u, r0u).norm(), weighted, flagged: dist < eta_min })
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, f64)> = (0..zs.len()).flat_map(|k| eps_ladder.iter().map(move |&e| (k, e))).collect();
    let samples: Vec<LapSample> = exec
        .map(&jobs, |&(k, mag)| {
            let z = zs[k];
            let eps = mag * z.im.signum();
            let (r, norms) = triple.resolvent(eps, z)?;
            let ru = mat_vec(&r, u);
            let f = inner(u, &ru);
            let weighted = su.as_ref().map(|v| inner(v, &mat_vec(&r, v)).norm());
            let diff: Vec<C64> = ru.iter().zip(&free[k]).map(|(a, b)| a - b).collect();
            Ok(LapSample {
                z_index: k,
                norms,
                f_re: f.re,
                f_im: f.im,
                r_u_m: triple.m_norm_sq(&ru).max(0.0).sqrt(),
                weighted,
                to_resolvent: vec_norm(&diff),
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let un = vec_norm(u);
    let mut report = LapProbeReport {
        eps: eps_ladder.to_vec(),
        z: zs.iter().map(|z| (z.re, z.im)).collect(),
        eta_min,
        samples,
        limits,
        e: triple.e,
        u_sq: un * un,
        au_sq: vec_norm(&au).powi(2),
        u_m_star_sq: triple.m_star_norm_sq(u),
        au_m_star_sq: triple.m_star_norm_sq(&au),
        to_resolvent_tol: 1e-8 * un,
        constants: LapConstants {
            inv_norm: 0.0,
            inv_weighted: 0.0,
            localized: 0.0,
            vector_weighted: 0.0,
            sandwich: 0.0,
            lap: 0.0,
            lap_weighted: None,
        },
        pass: LapPass { inverse: false, localized: false, weighted_pair: false, lap_bound: false, weighted: None, to_resolvent: false },
    };
    let (constants, pass) = report.evaluate();
    report.constants = constants;
    report.pass = pass;
    Ok(report)
}

/// Probe grid `re × {η, 2η, 4η}`.
pub fn probe_grid(re: &[f64], eta: f64) -> Vec<C64> {
    re.iter().flat_map(|&x| [1.0, 2.0, 4.0].map(|k| C64::new(x, k * eta))).collect()
}

/// Fitted constants at `η_min` and at `η_min/2`.
#[derive(Clone, Debug, Serialize)]
pub struct LapStability {
    pub coarse: LapProbeReport,
    pub fine: LapProbeReport,
    /// Fine over coarse, for the resolvent-bound and LAP constants.
    pub ratios: Vec<(String, f64)>,
    pub pass: bool,
}

pub fn lap_stability(
    triple: &MourreTriple,
    u: &[C64],
    re: &[f64],
    eta_min: f64,
    eps_ladder: &[f64],
    s: Option<&SparseOp>,
    exec: Exec,
) -> Result<LapStability> {
    let coarse = lap_probe(triple, u, &probe_grid(re, eta_min), eps_ladder, eta_min, s, exec)?;
    let fine = lap_probe(triple, u, &probe_grid(re, 0.5 * eta_min), eps_ladder, 0.5 * eta_min, s, exec)?;
    let (c, f) = (coarse.constants, fine.constants);
    let mut ratios = vec![
        ("inv_norm".to_string(), f.inv_norm / c.inv_norm),
        ("inv_weighted".to_string(), f.inv_weighted / c.inv_weighted),
        ("lap".to_string(), f.lap / c.lap),
    ];
    if let (Some(a), Some(b)) = (f.lap_weighted, c.lap_weighted) {
        ratios.push(("lap_weighted".to_string(), a / b));
    }
    let pass = ratios.iter().all(|(_, r)| r.is_finite() && *r <= STABILITY_FACTOR);
    Ok(LapStability { coarse, fine, ratios, pass })
}
