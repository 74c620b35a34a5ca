//! The invariant suite behind `check-all`: exact identities of every module
//! on one small instance, in a single pass/fail table.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use pflab_core::coupling::glued_representation_gap;
use pflab_core::dense::{exp_i, Eigh};
use pflab_core::fock::{
    ccr_residual, dgamma, dgamma_commutator_residual, field_commutator_residual, gamma_intertwining_residual, localization_residuals,
    split_localize, OccBasis,
};
use pflab_core::hamiltonian::{
    assemble_h_with, commutator_observable, embed_fock, number_commutator_residual, virial_check, virial_values, weak_coupling_certificate,
    ConjugateSpec,
};
use pflab_core::liouville::{assemble_liouvillean_with, glue, liouvillean_commutator, weak_coupling_liouville_certificate};
use pflab_core::mourre_lap::{build_m, regularizer, WindowProfile};
use pflab_core::sparse::SparseOp;
use pflab_core::Result;

use crate::config::{Instance, RunConfig, TruncationBlock};
use crate::report::{Invariant, TaskOutput};

/// Deliberate corruption used to confirm that the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Flips the sign of the field term in the Hamiltonian commutator before the virial check.
    VirialSign,
}

pub const EXACT_TOL: f64 = 1e-12;

/// Deterministic test vector with entries on the unit circle scaled by `1/√n`.
pub fn probe_vector(n: usize, seed: f64) -> Vec<C64> {
    let s = 1.0 / (n as f64).sqrt();
    (0..n).map(|k| C64::from_polar(s, 1.7 * k as f64 + seed) * (1.0 + 0.25 * ((k as f64) + seed).sin())).collect()
}

fn probe_hermitian(n: usize, seed: f64) -> DMatrix<C64> {
    let x = DMatrix::from_fn(n, n, |r, c| C64::new((1.3 * r as f64 + 0.7 * c as f64 + seed).sin(), (0.4 * r as f64 - 1.1 * c as f64 + seed).cos()));
    (&x + x.adjoint()) * C64::new(0.5, 0.0)
}

fn scaled(x: &SparseOp) -> f64 {
    EXACT_TOL * x.max_abs().max(1.0)
}

fn conditional(name: &str, lambda_min: f64, tol: f64, applicable: bool) -> Invariant {
    let mut inv = Invariant::at_most(name, -lambda_min, tol);
    if !applicable {
        inv.asserted = false;
        inv = inv.with_note("not applicable: coupling beyond the weak-coupling threshold");
    }
    inv
}

fn hermitian(g: &DMatrix<C64>) -> bool {
    (g - g.adjoint()).iter().all(|z| z.norm() <= 1e-14 * (1.0 + g.norm()))
}

/// Runs the suite on an instance with the given truncation and inverse temperature.
pub fn check_all(inst: &Instance, trunc: &TruncationBlock, beta: f64, fault: Option<Fault>) -> Result<TaskOutput> {
    let mut out = TaskOutput::default();
    let m = inst.modes.len();
    let spec = ConjugateSpec::translations();

    let basis = OccBasis::with_dim_cap(m, trunc.n_total_max, trunc.per_mode_cap, trunc.dim_cap)?;
    let (f, g) = (probe_vector(m, 0.3), probe_vector(m, 1.9));
    out.check(Invariant::at_most("ccr", ccr_residual(&basis, &f, &g), EXACT_TOL));
    out.check(Invariant::at_most("field_commutator", field_commutator_residual(&basis, &f, &g), EXACT_TOL));
    let (ga, gb) = (probe_hermitian(m, 0.2), probe_hermitian(m, 1.4));
    out.check(Invariant::at_most("dgamma_commutator", dgamma_commutator_residual(&basis, &ga, &gb), EXACT_TOL * 10.0));
    let unitary = exp_i(&ga, 0.8);
    out.check(Invariant::at_most("gamma_intertwining", gamma_intertwining_residual(&basis, &unitary, &f)?, EXACT_TOL));
    let th: Vec<f64> = (0..m).map(|j| 0.3 + 0.4 * j as f64).collect();
    let b0 = DMatrix::from_fn(m, m, |r, c| if r == c { C64::new(th[r].cos(), 0.0) } else { C64::new(0.0, 0.0) });
    let bi = DMatrix::from_fn(m, m, |r, c| if r == c { C64::new(th[r].sin(), 0.0) } else { C64::new(0.0, 0.0) });
    let loc = split_localize(&basis, &b0, &bi)?;
    let (f0, fi) = (pflab_core::dense::mat_vec(&b0, &f), pflab_core::dense::mat_vec(&bi, &f));
    let lr = localization_residuals(&basis, &loc, &ga, &gb, &probe_hermitian(m, 2.5), &f0, &fi, &f)?;
    out.check(Invariant::at_most("localization_isometry", lr.isometry, EXACT_TOL));
    out.check(Invariant::at_most("localization_dgamma", lr.dgamma, EXACT_TOL * 10.0));
    out.check(Invariant::at_most("localization_field", lr.field, EXACT_TOL));

    let bundle = assemble_h_with(&inst.small, inst.g.clone(), &inst.modes, &basis)?;
    let tol_h = scaled(&bundle.h);
    out.check(Invariant::at_most("hamiltonian_number_commutator", number_commutator_residual(&bundle), tol_h));
    let obs = commutator_observable(&bundle, &spec);
    out.check(Invariant::at_most("hamiltonian_commutator_identity", obs.discrepancy, tol_h));
    let hprime = match fault {
        None => obs.hprime_exact.clone(),
        Some(Fault::VirialSign) => {
            let dgc = embed_fock(bundle.nu(), &dgamma(&bundle.basis, &obs.c_one));
            let field = obs.hprime_formula.sub(&dgc);
            obs.hprime_exact.add_scaled(&field, C64::new(-2.0, 0.0))
        }
    };
    let vir = virial_check(&bundle, &hprime);
    out.check(Invariant::at_most("hamiltonian_virial", vir.max_abs, vir.tolerance));
    let (cert, _) = weak_coupling_certificate(&bundle, &spec, obs.field_sign)?;
    out.check(conditional("hamiltonian_weak_coupling", cert.lambda_min, cert.tolerance, cert.applicable));

    let sys = assemble_liouvillean_with(&inst.small, inst.g.clone(), &inst.modes, trunc.n_total_max, &[beta])?;
    out.check(Invariant::at_most("liouvillean_jlj", sys.jlj_defect(), scaled(&sys.l)));
    let glued = glue(&sys)?;
    out.check(Invariant::at_most("glue_unitarity", glued.unitarity_defect(), EXACT_TOL));
    out.check(Invariant::at_most("glue_conjugation", glued.conjugation_defect, scaled(&sys.l)));
    out.check(Invariant::at_most("glue_number", glued.number_defect, EXACT_TOL));
    let gap = glued_representation_gap(&inst.g, &inst.modes, &[beta]);
    let rep = if inst.g.iter().all(hermitian) {
        Invariant::at_most("glued_representation_identity", gap, EXACT_TOL * 10.0)
    } else {
        Invariant::reported("glued_representation_identity", gap, EXACT_TOL * 10.0).with_note("holds for Hermitian couplings only")
    };
    out.check(rep);
    let lc = liouvillean_commutator(&glued, &spec);
    let tol_l = scaled(&glued.l);
    out.check(Invariant::at_most("glued_commutator_identity", lc.observable.discrepancy, tol_l));
    out.check(Invariant::at_most("glued_number_commutator", lc.number_residual, tol_l));
    let vl = virial_values(glued.spectrum(), &lc.observable.hprime_exact, 1e-10);
    out.check(Invariant::at_most("liouvillean_virial", vl.max_abs, vl.tolerance));
    let (lcert, _) = weak_coupling_liouville_certificate(&glued, &spec)?;
    out.check(conditional("liouvillean_weak_coupling", lcert.lambda_min, lcert.tolerance, lcert.applicable));

    let a = SparseOp::diagonal(&[1.0, 2.0], "r");
    let reg = regularizer(&a, 100.0, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)])?;
    out.check(Invariant::at_most("regularizer", (reg.to_identity - 1.0 / (1.0f64 + 1e4).sqrt()).abs(), 1e-15));
    let t: Vec<f64> = (0..5).map(|k| -1.0 + 0.5 * k as f64).collect();
    let tp = SparseOp::identity(5, "t").scale_re(0.7);
    let triple = build_m(SparseOp::diagonal(&t, "t"), tp, SparseOp::diagonal(&[0.0; 5], "t"), WindowProfile::Everywhere, 0.7, 0.0)?;
    let mut worst: f64 = 0.0;
    for (k, &eps) in [1e-3, 0.05, 0.4].iter().enumerate() {
        for im in [1e-2, 0.3] {
            let (_, n) = triple.resolvent(eps, C64::new(t[k + 1], im))?;
            worst = worst.max((n.r * (0.7 * eps + im) - 1.0).abs());
        }
    }
    out.check(Invariant::at_most("strict_lap_exactness", worst, EXACT_TOL));

    out.put("hamiltonian_dim", bundle.dim());
    out.put("liouvillean_dim", sys.dim());
    out.put("field_sign", obs.field_sign);
    out.put("weak_coupling_hamiltonian", &cert);
    out.put("weak_coupling_liouvillean", &lcert);
    out.put("spectrum_span", {
        let e: &Eigh = bundle.spectrum();
        (e.min(), e.max())
    });
    Ok(out)
}

/// Built-in instances for `check-all --instance`.
pub fn builtin(name: &str) -> Option<RunConfig> {
    let (count, cap) = match name {
        "small" => (2, 2),
        "default" => (3, 3),
        _ => return None,
    };
    let text = format!(
        r#"{{
        "small": {{"nu": 2, "energies": [0.0, 0.6]}},
        "modes": {{"grid": "uniform", "count": {count}, "omega_max": 1.6}},
        "coupling": {{"profile": "scalar", "p": 0.0, "uv_scale": 2.0, "uv": "gaussian", "amplitude": 0.02,
                      "g0": [[0.2, 1.0], [1.0, -0.3]]}},
        "truncation": {{"n_total_max": {cap}, "per_mode_cap": {cap}}},
        "task": {{"kind": "check-all", "beta": 2.0}}
    }}"#
    );
    Some(RunConfig::parse(&text).expect("built-in instance is valid"))
}
