//! Coupling functions, their radial discretization, regularity audits and
//! the thermal and glued couplings derived from them.
//!
//! A sampled coupling `G_j` carries the quadrature embedding
//! `√(4π w_j)·ω_j`, so `Σ_j ‖G_j‖²` approximates `∫ ‖G(k)‖² dk` and the same
//! matrices serve as the glued coupling at zero temperature.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dense::op_norm;
use crate::fock::{Mode, ModeSet};
use crate::hamiltonian::{conjugate_a_on, ConjugateSpec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SmallSystem {
    energies: Vec<f64>,
}

impl SmallSystem {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::InvalidInput("small system needs at least one level".into()));
        }
        if energies.iter().any(|e| !e.is_finite()) || energies.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("energies must be finite and ascending".into()));
        }
        Ok(SmallSystem { energies })
    }

    pub fn nu(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn k_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.nu(), self.nu(), |r, c| {
            if r == c {
                C64::new(self.energies[r], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UvShape {
    Gaussian,
    Exponential,
    /// No ultraviolet cutoff (pure power law).
    None,
}

impl UvShape {
    /// Value and first two derivatives at `x`.
    fn jet(self, x: f64) -> [f64; 3] {
        match self {
            UvShape::Gaussian => {
                let u = (-x * x).exp();
                [u, -2.0 * x * u, (4.0 * x * x - 2.0) * u]
            }
            UvShape::Exponential => {
                let u = (-x).exp();
                [u, -u, u]
            }
            UvShape::None => [1.0, 0.0, 0.0],
        }
    }

    fn decays(self) -> bool {
        !matches!(self, UvShape::None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CouplingForm {
    /// `g(r) = r^p · uv(r/Λ)` times the matrix `g0`.
    Scalar { p: f64, uv_scale: f64, uv: UvShape, g0: DMatrix<C64> },
    /// Sampled matrices per mode, already carrying the quadrature embedding.
    Explicit { per_mode: Vec<DMatrix<C64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingProfile {
    pub nu: usize,
    pub form: CouplingForm,
    pub mu: f64,
    pub amplitude: f64,
}

impl CouplingProfile {
    pub fn scalar(nu: usize, p: f64, uv_scale: f64, uv: UvShape, g0: DMatrix<C64>, mu: f64, amplitude: f64) -> Result<Self> {
        if g0.shape() != (nu, nu) {
            return Err(Error::InvalidInput(format!("G0 must be {nu}x{nu}")));
        }
        if !(uv_scale > 0.0) || !(mu > 0.0) || !p.is_finite() || !amplitude.is_finite() {
            return Err(Error::InvalidInput("profile parameters out of range".into()));
        }
        Ok(CouplingProfile { nu, form: CouplingForm::Scalar { p, uv_scale, uv, g0 }, mu, amplitude })
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        CouplingProfile { amplitude, ..self.clone() }
    }

    /// Radial profile value `λ·r^p·uv(r/Λ)` (scalar form only).
    pub fn radial(&self, r: f64) -> Option<f64> {
        self.radial_jet(r).map(|j| j[0])
    }

    /// `g`, `g′`, `g″` at `r` including the amplitude.
    fn radial_jet(&self, r: f64) -> Option<[f64; 3]> {
        match &self.form {
            CouplingForm::Scalar { p, uv_scale, uv, .. } => {
                let [u0, u1, u2] = uv.jet(r / uv_scale);
                let (u1, u2) = (u1 / uv_scale, u2 / (uv_scale * uv_scale));
                let pw = r.powf(*p);
                let d1 = if *p == 0.0 { 0.0 } else { p * r.powf(p - 1.0) };
                let d2 = if *p == 0.0 || *p == 1.0 { 0.0 } else { p * (p - 1.0) * r.powf(p - 2.0) };
                let a = self.amplitude;
                Some([a * pw * u0, a * (d1 * u0 + pw * u1), a * (d2 * u0 + 2.0 * d1 * u1 + pw * u2)])
            }
            CouplingForm::Explicit { .. } => None,
        }
    }

    pub fn g0(&self) -> Option<&DMatrix<C64>> {
        match &self.form {
            CouplingForm::Scalar { g0, .. } => Some(g0),
            CouplingForm::Explicit { .. } => None,
        }
    }

    pub fn infrared_exponent(&self) -> Option<f64> {
        match &self.form {
            CouplingForm::Scalar { p, .. } => Some(*p),
            CouplingForm::Explicit { .. } => None,
        }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss-Legendre panels on `[0, omega_max]` with geometric refinement
/// toward zero: breakpoints `0 < ω_max·r^L < … < ω_max·r < ω_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub omega_max: f64,
    pub order: usize,
    pub ir_levels: usize,
    pub ratio: f64,
}

impl RadialGrid {
    pub fn new(omega_max: f64, order: usize, ir_levels: usize, ratio: f64) -> Result<Self> {
        if !(omega_max > 0.0) || order == 0 || !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidInput("radial grid parameters out of range".into()));
        }
        Ok(RadialGrid { omega_max, order, ir_levels, ratio })
    }

    pub fn panels(&self) -> Vec<(f64, f64)> {
        let mut bps: Vec<f64> = (0..=self.ir_levels).rev().map(|k| self.omega_max * self.ratio.powi(k as i32)).collect();
        bps.insert(0, 0.0);
        bps.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let (x, w) = gauss_legendre(self.order);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (a, b) in self.panels() {
            let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(c + h * xi);
                weights.push(h * wi);
            }
        }
        (nodes, weights)
    }

    pub fn build(&self) -> Result<ModeSet> {
        self.build_tagged(0)
    }

    pub fn build_tagged(&self, reservoir: u8) -> Result<ModeSet> {
        let (x, w) = self.nodes();
        ModeSet::new(x.into_iter().zip(w).map(|(omega, weight)| Mode { omega, weight, reservoir }).collect())
    }

    /// Finer grid used for quadrature error estimates.
    pub fn refined(&self) -> RadialGrid {
        RadialGrid { order: self.order * 2, ir_levels: self.ir_levels + 4, ..*self }
    }

    pub fn describe(&self) -> String {
        format!("gauss-legendre order {} on {} panels, omega_max {}, ratio {}", self.order, self.ir_levels + 1, self.omega_max, self.ratio)
    }
}

/// Embedding factor `√(4π w)·ω` of a mode.
pub fn radial_embedding(m: &Mode) -> f64 {
    (4.0 * PI * m.weight).sqrt() * m.omega
}

/// Per-mode coupling matrices `G_j`.
pub fn sample_coupling(profile: &CouplingProfile, modes: &ModeSet) -> Result<Vec<DMatrix<C64>>> {
    match &profile.form {
        CouplingForm::Scalar { p, g0, .. } => {
            if *p <= -1.5 {
                return Err(Error::Divergent(format!("infrared exponent {p} is not square integrable")));
            }
            Ok(modes
                .modes()
                .iter()
                .map(|m| g0 * C64::new(profile.radial(m.omega).unwrap() * radial_embedding(m), 0.0))
                .collect())
        }
        CouplingForm::Explicit { per_mode } => {
            if per_mode.len() != modes.len() {
                return Err(Error::InvalidInput("explicit coupling has wrong mode count".into()));
            }
            if per_mode.iter().any(|g| g.shape() != (profile.nu, profile.nu)) {
                return Err(Error::InvalidInput("explicit coupling has wrong matrix shape".into()));
            }
            Ok(per_mode.iter().map(|g| g * C64::new(profile.amplitude, 0.0)).collect())
        }
    }
}

/// `(Σ_j ‖G_j‖²_op)^{1/2}`.
pub fn l2_norm(g: &[DMatrix<C64>]) -> f64 {
    g.iter().map(|m| op_norm(m).powi(2)).sum::<f64>().sqrt()
}

/// `(a G)_j = Σ_k a_jk G_k`.
pub fn apply_one_particle(a: &DMatrix<C64>, g: &[DMatrix<C64>]) -> Vec<DMatrix<C64>> {
    assert_eq!(a.ncols(), g.len());
    (0..a.nrows())
        .map(|j| {
            let mut acc = DMatrix::zeros(g[0].nrows(), g[0].ncols());
            for (k, gk) in g.iter().enumerate() {
                let ajk = a[(j, k)];
                if ajk != C64::new(0.0, 0.0) {
                    acc += gk * ajk;
                }
            }
            acc
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormEntry {
    pub value: f64,
    pub quadrature_error: f64,
    pub divergent: bool,
}

/// Norms use the operator norm pointwise in `k`: `‖G‖² = ∫ ‖G(k)‖² dk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CouplingNorms {
    pub l2: NormEntry,
    pub l2_over_sqrt: NormEntry,
    pub l2_over_k: NormEntry,
    pub grad: NormEntry,
    pub a_g: NormEntry,
}

impl CouplingNorms {
    pub fn values(&self) -> [f64; 5] {
        [self.l2.value, self.l2_over_sqrt.value, self.l2_over_k.value, self.grad.value, self.a_g.value]
    }
}

/// `[‖G‖, ‖G/√ω‖, ‖G/ω‖, ‖∇G‖, ‖aG‖]` as discrete sums on one mode set.
pub fn norms_on(profile: &CouplingProfile, modes: &ModeSet, spec: &ConjugateSpec) -> Result<[f64; 5]> {
    let g = sample_coupling(profile, modes)?;
    let ms = modes.modes();
    let weighted = |s: f64| -> f64 {
        g.iter().zip(ms).map(|(gj, m)| op_norm(gj).powi(2) * m.omega.powf(-2.0 * s)).sum::<f64>().sqrt()
    };
    let grad = match profile.radial_jet(1.0) {
        Some(_) => {
            let g0n = op_norm(profile.g0().unwrap());
            ms.iter()
                .map(|m| {
                    let d = profile.radial_jet(m.omega).unwrap()[1];
                    4.0 * PI * m.weight * m.omega * m.omega * d * d
                })
                .sum::<f64>()
                .sqrt()
                * g0n
        }
        None => {
            // radial finite differences of G(ω_j) = G_j / embedding
            let vals: Vec<DMatrix<C64>> = g.iter().zip(ms).map(|(gj, m)| gj / C64::new(radial_embedding(m), 0.0)).collect();
            let x: Vec<f64> = ms.iter().map(|m| m.omega).collect();
            (0..x.len())
                .map(|j| {
                    let (l, r) = (j.saturating_sub(1), (j + 1).min(x.len() - 1));
                    if l == r {
                        return 0.0;
                    }
                    let d = (&vals[r] - &vals[l]) / C64::new(x[r] - x[l], 0.0);
                    4.0 * PI * ms[j].weight * x[j] * x[j] * op_norm(&d).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        }
    };
    let a = conjugate_a_on(&modes.omegas(), &modes.weights(), spec);
    let ag = l2_norm(&apply_one_particle(&a, &g));
    Ok([weighted(0.0), weighted(0.5), weighted(1.0), grad, ag])
}

/// Divergence flags from exponent arithmetic near `0`.
///
/// `‖G/|k|^s‖` is finite iff `p > s − 3/2`; `‖∇G‖` iff `p > −1/2` or `p = 0`.
pub fn divergence_flags(p: f64) -> [bool; 5] {
    let grad_ok = p > -0.5 || p == 0.0;
    [p <= -1.5, p <= -1.0, p <= -0.5, !grad_ok, !grad_ok]
}

pub fn coupling_norms(profile: &CouplingProfile, grid: &RadialGrid, spec: &ConjugateSpec) -> Result<CouplingNorms> {
    let coarse = norms_on(profile, &grid.build()?, spec)?;
    let fine = norms_on(profile, &grid.refined().build()?, spec)?;
    let flags = profile.infrared_exponent().map(divergence_flags).unwrap_or([false; 5]);
    let e = |k: usize| NormEntry {
        value: coarse[k],
        quadrature_error: (coarse[k] - fine[k]).abs(),
        divergent: flags[k],
    };
    Ok(CouplingNorms { l2: e(0), l2_over_sqrt: e(1), l2_over_k: e(2), grad: e(3), a_g: e(4) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrderConstant {
    pub order: usize,
    /// Smallest witnessed `C` on `|k| ≤ 1`.
    pub c_ir: f64,
    /// Smallest witnessed `C` on `|k| ≥ 1`.
    pub c_uv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityAudit {
    pub n: usize,
    pub mu: f64,
    pub hg: bool,
    pub lg: bool,
    /// Glued-form condition for `G = |k|^{-1/2} ĝ G0` with Hermitian `G0`.
    pub lg_prime: Option<bool>,
    pub hg_constants: Vec<OrderConstant>,
    pub lg_constants: Vec<OrderConstant>,
    pub grid: String,
}

fn hg_ir(n: usize, a: usize, mu: f64) -> f64 {
    n as f64 - 1.5 + mu - a as f64 + if n == 0 { 0.5 } else { 0.0 }
}

fn hg_uv(_a: usize, mu: f64) -> f64 {
    -1.5 - mu
}

fn lg_ir(n: usize, a: usize, mu: f64) -> f64 {
    n as f64 - 1.0 + mu - a as f64
}

fn lg_uv(a: usize, mu: f64) -> f64 {
    -1.5 - if a == 0 { 1.0 } else { 0.0 } - mu
}

/// Exponent `e` with `|g^{(m)}(r)| ~ r^e` as `r → 0`.
fn ir_derivative_exponent(p: f64, m: usize) -> f64 {
    let is_int = p >= 0.0 && p.fract() == 0.0;
    if is_int && m as f64 > p {
        0.0
    } else {
        p - m as f64
    }
}

/// Bound on `‖∂^α G‖` for radial `G` with `|α| = a`: the largest of
/// `|g^{(m)}| r^{m−a}`, `1 ≤ m ≤ a` (and `|g|` for `a = 0`).
fn radial_derivative_size(jet: &[f64; 3], r: f64, a: usize) -> f64 {
    if a == 0 {
        return jet[0].abs();
    }
    (1..=a).map(|m| jet[m].abs() * r.powi(m as i32 - a as i32)).fold(0.0, f64::max)
}

fn holds_by_exponents(p: f64, uv: UvShape, n: usize, ir: impl Fn(usize) -> f64, uvx: impl Fn(usize) -> f64) -> bool {
    (0..=n).all(|a| {
        let ms: Vec<usize> = if a == 0 { vec![0] } else { (1..=a).collect() };
        let ir_ok = ms.iter().all(|&m| ir_derivative_exponent(p, m) + m as f64 - a as f64 >= ir(a) - 1e-12);
        let uv_ok = uv.decays() || p - a as f64 <= uvx(a) + 1e-12;
        ir_ok && uv_ok
    })
}

fn audit_points() -> Vec<f64> {
    (0..=240).map(|k| 10f64.powf(-6.0 + 9.0 * k as f64 / 240.0)).collect()
}

fn witness(jets: &[(f64, [f64; 3])], g0n: f64, n: usize, ir: impl Fn(usize) -> f64, uvx: impl Fn(usize) -> f64) -> Vec<OrderConstant> {
    (0..=n)
        .map(|a| {
            let (mut c_ir, mut c_uv) = (0.0f64, 0.0f64);
            for (r, jet) in jets {
                let s = radial_derivative_size(jet, *r, a) * g0n;
                if *r <= 1.0 {
                    c_ir = c_ir.max(s / r.powf(ir(a)));
                }
                if *r >= 1.0 {
                    c_uv = c_uv.max(s / r.powf(uvx(a)));
                }
            }
            OrderConstant { order: a, c_ir, c_uv }
        })
        .collect()
}

/// Second-order nonuniform finite-difference jets of sampled `‖G(r)‖`.
fn sampled_jets(values: &[(f64, f64)]) -> Result<Vec<(f64, [f64; 3])>> {
    let mut out = Vec::new();
    for k in 1..values.len().saturating_sub(1) {
        let (x0, f0) = values[k - 1];
        let (x1, f1) = values[k];
        let (x2, f2) = values[k + 1];
        let (h0, h1) = (x1 - x0, x2 - x1);
        let d1 = (f2 - f1) / h1 * h0 / (h0 + h1) + (f1 - f0) / h0 * h1 / (h0 + h1);
        let d2 = 2.0 * ((f2 - f1) / h1 - (f1 - f0) / h0) / (h0 + h1);
        let scale = f0.abs().max(f1.abs()).max(f2.abs());
        let noise2 = 4.0 * f64::EPSILON * scale / (h0.min(h1) * (h0 + h1) / 2.0);
        if d2.abs() > 0.0 && noise2 > 0.1 * d2.abs() && noise2 > 1e-8 * scale {
            return Err(Error::InsufficientResolution(format!("second differences are noise-dominated near r = {x1:.3e}")));
        }
        out.push((x1, [f1, d1, d2]));
    }
    Ok(out)
}

/// Grid-witnessed audit of the Hamiltonian and Liouvillean regularity
/// conditions of order `n`, with constants reported per derivative order.
///
/// Scalar profiles are classified by exponent arithmetic; explicit samples
/// by whether the witnessed constant on the last infrared decade stays
/// within twice that of the previous one.
pub fn audit_regularity(profile: &CouplingProfile, n: usize, modes: Option<&ModeSet>) -> Result<RegularityAudit> {
    if n > 2 {
        return Err(Error::InvalidInput("audit order must be 0, 1 or 2".into()));
    }
    let mu = profile.mu;
    match &profile.form {
        CouplingForm::Scalar { p, uv, g0, .. } => {
            let g0n = op_norm(g0);
            let pts = audit_points();
            let jets: Vec<(f64, [f64; 3])> = pts.iter().map(|&r| (r, profile.radial_jet(r).unwrap())).collect();
            let hg = holds_by_exponents(*p, *uv, n, |a| hg_ir(n, a, mu), |a| hg_uv(a, mu));
            let lg = holds_by_exponents(*p, *uv, n, |a| lg_ir(n, a, mu), |a| lg_uv(a, mu));
            let hermitian = (g0 - g0.adjoint()).iter().all(|z| z.norm() == 0.0);
            let lg_prime = if hermitian {
                // ĝ(ω) = |ω|^{p+1/2} uv(|ω|/Λ); condition |∂^j ĝ| ≤ C|ω|^{n−1+μ−j}
                let q = p + 0.5;
                Some((0..=n).all(|j| ir_derivative_exponent(q, j) >= n as f64 - 1.0 + mu - j as f64 - 1e-12) && (uv.decays() || q <= -1.0 - mu))
            } else {
                None
            };
            Ok(RegularityAudit {
                n,
                mu,
                hg,
                lg,
                lg_prime,
                hg_constants: witness(&jets, g0n, n, |a| hg_ir(n, a, mu), |a| hg_uv(a, mu)),
                lg_constants: witness(&jets, g0n, n, |a| lg_ir(n, a, mu), |a| lg_uv(a, mu)),
                grid: "log-spaced radii 1e-6..1e3, analytic radial derivatives".into(),
            })
        }
        CouplingForm::Explicit { .. } => {
            let modes = modes.ok_or_else(|| Error::InvalidInput("explicit audit needs the mode set".into()))?;
            let g = sample_coupling(profile, modes)?;
            let values: Vec<(f64, f64)> = g.iter().zip(modes.modes()).map(|(gj, m)| (m.omega, op_norm(gj) / radial_embedding(m))).collect();
            if values.len() < 3 + n {
                return Err(Error::InsufficientResolution("too few modes for finite differences".into()));
            }
            let jets = sampled_jets(&values)?;
            let decide = |ir: &dyn Fn(usize) -> f64| -> bool {
                (0..=n).all(|a| {
                    let ratio = |lo: f64, hi: f64| -> f64 {
                        jets.iter()
                            .filter(|(r, _)| *r > lo && *r <= hi)
                            .map(|(r, j)| radial_derivative_size(j, *r, a) / r.powf(ir(a)))
                            .fold(0.0, f64::max)
                    };
                    let rmin = jets.first().map(|j| j.0).unwrap_or(1.0);
                    ratio(rmin / 1.001, rmin * 10.0) <= 2.0 * ratio(rmin * 10.0, rmin * 100.0).max(f64::MIN_POSITIVE)
                })
            };
            Ok(RegularityAudit {
                n,
                mu,
                hg: decide(&|a| hg_ir(n, a, mu)),
                lg: decide(&|a| lg_ir(n, a, mu)),
                lg_prime: None,
                hg_constants: witness(&jets, 1.0, n, |a| hg_ir(n, a, mu), |a| hg_uv(a, mu)),
                lg_constants: witness(&jets, 1.0, n, |a| lg_ir(n, a, mu), |a| lg_uv(a, mu)),
                grid: format!("{} sampled modes, finite differences", modes.len()),
            })
        }
    }
}

/// Planck density `1/(e^{βω} − 1)`; zero at `β = ∞`.
pub fn planck(omega: f64, beta: f64) -> f64 {
    if beta.is_infinite() {
        return 0.0;
    }
    1.0 / (beta * omega).exp_m1()
}

/// `β` for the reservoir tag of a mode (a single entry applies to all).
pub fn beta_for(betas: &[f64], reservoir: u8) -> f64 {
    if betas.len() == 1 {
        betas[0]
    } else {
        betas[reservoir as usize]
    }
}

fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// `G_l = G ⊗ 1` and `G_r = 1 ⊗ Ḡ` on `K ⊗ K`.
pub fn left_right(g: &DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let id = DMatrix::identity(g.nrows(), g.nrows());
    (kron(g, &id), kron(&id, &g.map(|z| z.conj())))
}

#[derive(Clone, Debug)]
pub struct ThermalCouplings {
    pub left: Vec<DMatrix<C64>>,
    pub right: Vec<DMatrix<C64>>,
}

/// `G_{β,l} = √(1+ρ) G_l − √ρ G_r*`, `G_{β,r} = √(1+ρ) G_r − √ρ G_l*` per mode.
pub fn thermal_couplings(g: &[DMatrix<C64>], modes: &ModeSet, betas: &[f64]) -> ThermalCouplings {
    let mut left = Vec::with_capacity(g.len());
    let mut right = Vec::with_capacity(g.len());
    for (gj, m) in g.iter().zip(modes.modes()) {
        let rho = planck(m.omega, beta_for(betas, m.reservoir));
        let (s1, s0) = (C64::new((1.0 + rho).sqrt(), 0.0), C64::new(rho.sqrt(), 0.0));
        let (gl, gr) = left_right(gj);
        left.push(&gl * s1 - gr.adjoint() * s0);
        right.push(&gr * s1 - gl.adjoint() * s0);
    }
    ThermalCouplings { left, right }
}

/// Signed frequencies `[−ω_M, …, −ω_1, ω_1, …, ω_M]` with their weights
/// and reservoir tags.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedModes {
    pub omegas: Vec<f64>,
    pub weights: Vec<f64>,
    pub reservoirs: Vec<u8>,
    /// Number of physical modes `M`.
    pub half: usize,
}

impl SignedModes {
    pub fn from_modes(modes: &ModeSet) -> Self {
        let ms = modes.modes();
        let m = ms.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| ms[a].omega.total_cmp(&ms[b].omega));
        let mut omegas = Vec::with_capacity(2 * m);
        let mut weights = Vec::with_capacity(2 * m);
        let mut reservoirs = Vec::with_capacity(2 * m);
        for &j in order.iter().rev() {
            omegas.push(-ms[j].omega);
            weights.push(ms[j].weight);
            reservoirs.push(ms[j].reservoir);
        }
        for &j in &order {
            omegas.push(ms[j].omega);
            weights.push(ms[j].weight);
            reservoirs.push(ms[j].reservoir);
        }
        SignedModes { omegas, weights, reservoirs, half: m }
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// Signed index of physical mode `j` on the positive (left) side.
    pub fn plus(&self, modes: &ModeSet, j: usize) -> usize {
        self.half + rank(modes, j)
    }

    /// Signed index of physical mode `j` on the negative (right) side.
    pub fn minus(&self, modes: &ModeSet, j: usize) -> usize {
        self.half - 1 - rank(modes, j)
    }
}

fn rank(modes: &ModeSet, j: usize) -> usize {
    let ms = modes.modes();
    ms.iter().filter(|m| m.omega < ms[j].omega).count()
}

/// Glued coupling `Ĝ_β` on the signed modes, built as
/// `√(1+ρ̃) Ĝ_∞ + √ρ̃ Ĝ*_{∞,R}` with `Ĝ_∞ = G_l` on `ω > 0` and `−G_r` on `ω < 0`.
pub fn glued_coupling(g: &[DMatrix<C64>], modes: &ModeSet, betas: &[f64]) -> Vec<DMatrix<C64>> {
    let signed = SignedModes::from_modes(modes);
    let mut out = vec![DMatrix::zeros(0, 0); signed.len()];
    let th = thermal_couplings(g, modes, betas);
    for j in 0..modes.len() {
        out[signed.plus(modes, j)] = th.left[j].clone();
        out[signed.minus(modes, j)] = -th.right[j].clone();
    }
    out
}

/// Zero-temperature glued coupling `Ĝ_∞`.
pub fn glued_coupling_zero(g: &[DMatrix<C64>], modes: &ModeSet) -> Vec<DMatrix<C64>> {
    glued_coupling(g, modes, &[f64::INFINITY])
}

/// `ω/(1 − e^{−βω})` for signed `ω`, with the `β = ∞` limit.
fn occupation_factor(omega: f64, beta: f64) -> f64 {
    if beta.is_infinite() {
        return omega.max(0.0);
    }
    -omega / (-beta * omega).exp_m1()
}

/// The alternative representation
/// `√(ω/(1−e^{−βω})) Ĝ_l − √(ω/(e^{βω}−1)) Ĝ_r`, where on `ω > 0`
/// `Ĝ_l = G ⊗ 1/√ω`, `Ĝ_r = 1 ⊗ Ḡ/√ω`, and on `ω < 0` the adjoints.
/// Agrees with [`glued_coupling`] when every `G_j` is Hermitian.
pub fn glued_coupling_alt(g: &[DMatrix<C64>], modes: &ModeSet, betas: &[f64]) -> Vec<DMatrix<C64>> {
    let signed = SignedModes::from_modes(modes);
    let mut out = vec![DMatrix::zeros(0, 0); signed.len()];
    for (j, (gj, m)) in g.iter().zip(modes.modes()).enumerate() {
        let beta = beta_for(betas, m.reservoir);
        let s = 1.0 / m.omega.sqrt();
        let (gl, gr) = left_right(gj);
        for (idx, w, hl, hr) in [
            (signed.plus(modes, j), m.omega, gl.clone(), gr.clone()),
            (signed.minus(modes, j), -m.omega, gl.adjoint(), gr.adjoint()),
        ] {
            let cl = occupation_factor(w, beta).sqrt() * s;
            let cr = occupation_factor(-w, beta).sqrt() * s;
            out[idx] = hl * C64::new(cl, 0.0) - hr * C64::new(cr, 0.0);
        }
    }
    out
}

/// Largest entrywise gap between the two glued representations.
pub fn glued_representation_gap(g: &[DMatrix<C64>], modes: &ModeSet, betas: &[f64]) -> f64 {
    glued_coupling(g, modes, betas)
        .iter()
        .zip(glued_coupling_alt(g, modes, betas))
        .map(|(a, b)| (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DifferenceBound {
    pub betas: Vec<f64>,
    /// `‖Ĝ_β − Ĝ_∞‖` per β.
    pub plain: Vec<f64>,
    /// `‖ã(Ĝ_β − Ĝ_∞)‖` per β.
    pub derivative: Vec<f64>,
    pub plain_slope: f64,
    pub derivative_slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Decay of the glued coupling toward its zero-temperature limit along a β ladder.
pub fn coupling_difference_bound(g: &[DMatrix<C64>], modes: &ModeSet, betas: &[f64], spec: &ConjugateSpec) -> DifferenceBound {
    let signed = SignedModes::from_modes(modes);
    let a = conjugate_a_on(&signed.omegas, &signed.weights, spec);
    let g_inf = glued_coupling_zero(g, modes);
    let mut plain = Vec::new();
    let mut derivative = Vec::new();
    for &beta in betas {
        let diff: Vec<DMatrix<C64>> = glued_coupling(g, modes, &[beta]).iter().zip(&g_inf).map(|(x, y)| x - y).collect();
        plain.push(l2_norm(&diff));
        derivative.push(l2_norm(&apply_one_particle(&a, &diff)));
    }
    let finite: Vec<usize> = (0..betas.len()).filter(|&k| betas[k].is_finite() && plain[k] > 0.0).collect();
    let pick = |v: &[f64]| finite.iter().map(|&k| v[k]).collect::<Vec<_>>();
    let bs = pick(betas);
    DifferenceBound {
        plain_slope: loglog_slope(&bs, &pick(&plain)),
        derivative_slope: loglog_slope(&bs, &pick(&derivative)),
        betas: betas.to_vec(),
        plain,
        derivative,
    }
}
