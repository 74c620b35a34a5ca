//! One runner per task kind. Each returns the report, tables and invariants
//! of its run; writing them out is left to the caller.

use num_complex::Complex64 as C64;
use pflab_core::dense::{mat_vec, vec_norm};
use pflab_core::fock::OccBasis;
use pflab_core::hamiltonian::{
    assemble_h_with, commutator_observable, mourre_window_certificate, number_commutator_residual, virial_check, weak_coupling_certificate,
    ConjugateSpec, HamiltonianBundle,
};
use pflab_core::liouville::{
    assemble_liouvillean_with, glue, kms_vector, koopman_diagnostics, liouvillean_commutator, vanhove_with,
};
use pflab_core::coupling::glued_representation_gap;
use pflab_core::mourre_lap::{lap_stability, triple_from_model, WindowProfile, CSV_HEADER, STABILITY_FACTOR};
use pflab_core::sparse::SparseOp;
use pflab_core::{Error, Exec};

use crate::config::{ConfigError, Instance, RunConfig, Task};
use crate::report::{Invariant, Table, TaskOutput};
use crate::suite::{self, probe_vector, EXACT_TOL};
use crate::RunError;

/// Truncation at or above which the van Hove ground energy must match its closed form.
pub const VANHOVE_CONVERGED_CAP: usize = 8;
pub const VANHOVE_TOL: f64 = 1e-8;

fn scaled(x: &SparseOp) -> f64 {
    EXACT_TOL * x.max_abs().max(1.0)
}

fn unit(v: Vec<C64>) -> Vec<C64> {
    let n = vec_norm(&v);
    v.into_iter().map(|z| z / n).collect()
}

fn bundle(cfg: &RunConfig, inst: &Instance) -> Result<HamiltonianBundle, Error> {
    let t = &cfg.truncation;
    let basis = OccBasis::with_dim_cap(inst.modes.len(), t.n_total_max, t.per_mode_cap, t.dim_cap)?;
    assemble_h_with(&inst.small, inst.g.clone(), &inst.modes, &basis)
}

pub fn run(cfg: &RunConfig, inst: &Instance, exec: Exec) -> Result<TaskOutput, RunError> {
    match &cfg.task {
        Task::Spectrum { count } => Ok(spectrum(cfg, inst, *count)?),
        Task::Mourre { energy, kappa, epsilon, conjugate } => {
            let spec = conjugate.spec()?;
            Ok(mourre(cfg, inst, &spec, *energy, *kappa, *epsilon)?)
        }
        Task::Lap { energy, kappa, c_m, re_grid, eta_factor, eps, weighted } => {
            Ok(lap(cfg, inst, *energy, *kappa, *c_m, re_grid, *eta_factor, eps, *weighted, exec)?)
        }
        Task::Kms { beta, caps } => Ok(kms(inst, *beta, caps)?),
        Task::Evolve { times } => Ok(evolve(cfg, inst, times)?),
        Task::Vanhove { beta } => {
            if inst.small.nu() != 1 {
                return Err(ConfigError::Invalid("vanhove needs small.nu = 1".into()).into());
            }
            Ok(vanhove(cfg, inst, *beta)?)
        }
        Task::GlueCheck { betas, conjugate } => {
            let spec = conjugate.spec()?;
            Ok(glue_check(cfg, inst, betas, &spec)?)
        }
        Task::CheckAll { beta } => Ok(suite::check_all(inst, &cfg.truncation, *beta, None)?),
    }
}

/// Energies `E_i + Σ_j n_j ω_j` of the uncoupled system, sorted.
fn free_spectrum(inst: &Instance, basis: &OccBasis) -> Vec<f64> {
    let om = inst.modes.omegas();
    let mut v: Vec<f64> = basis
        .states()
        .iter()
        .flat_map(|s| {
            let field: f64 = s.iter().zip(&om).map(|(&n, w)| n as f64 * w).sum();
            inst.small.energies().iter().map(move |e| e + field)
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

fn spectrum(cfg: &RunConfig, inst: &Instance, count: Option<usize>) -> Result<TaskOutput, Error> {
    let b = bundle(cfg, inst)?;
    let mut out = TaskOutput::default();
    let e = b.spectrum();
    let numbers = b.number_expectations();
    let k = count.unwrap_or(e.dim()).min(e.dim());
    let obs = commutator_observable(&b, &ConjugateSpec::translations());
    let vir = virial_check(&b, &obs.hprime_exact);
    let mut table = Table::new("spectrum", &["index", "eigenvalue", "number", "virial"]);
    for i in 0..k {
        table.push(vec![i as f64, e.values[i], numbers[i], vir.values[i]]);
    }
    out.tables.push(table);
    let tol = scaled(&b.h);
    out.check(Invariant::at_most("hermiticity", b.h.hermiticity_defect(), tol));
    out.check(Invariant::at_most("number_commutator", number_commutator_residual(&b), tol));
    out.check(Invariant::at_most("virial", vir.max_abs, vir.tolerance));
    let uncoupled = inst.g.iter().all(|g| g.iter().all(|z| *z == C64::new(0.0, 0.0)));
    if uncoupled {
        let free = free_spectrum(inst, &b.basis);
        let gap = free.iter().zip(&e.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.check(Invariant::at_most("free_spectrum", gap, tol));
    }
    out.put("dim", b.dim());
    out.put("sigma", b.sigma);
    out.put("top_energy", e.max());
    out.put("uncoupled", uncoupled);
    Ok(out)
}

fn mourre(cfg: &RunConfig, inst: &Instance, spec: &ConjugateSpec, energy: f64, kappa: f64, epsilon: f64) -> Result<TaskOutput, Error> {
    let b = bundle(cfg, inst)?;
    let mut out = TaskOutput::default();
    let obs = commutator_observable(&b, spec);
    let tol = scaled(&b.h);
    out.check(Invariant::at_most("commutator_identity", obs.discrepancy, tol));
    let vir = virial_check(&b, &obs.hprime_exact);
    out.check(Invariant::at_most("virial", vir.max_abs, vir.tolerance));
    let (weak, extras) = weak_coupling_certificate(&b, spec, obs.field_sign)?;
    let mut inv = Invariant::at_most("weak_coupling", weak.threshold - weak.lambda_min, weak.tolerance);
    if !weak.applicable {
        inv.asserted = false;
        inv = inv.with_note("not applicable: coupling beyond the weak-coupling threshold");
    }
    out.check(inv);
    let window = mourre_window_certificate(&b, spec, obs.field_sign, energy, kappa, epsilon);
    out.check(
        Invariant::reported("mourre_window", window.threshold - window.lambda_min, window.tolerance)
            .with_note(if window.vacuous { "no eigenvalues in the window" } else { "certificate on the spectral window" }),
    );
    out.put("dim", b.dim());
    out.put("field_sign", obs.field_sign);
    out.put("commutator_discrepancy_other_sign", obs.discrepancy_other_sign);
    out.put("virial", &vir);
    out.put("weak_coupling", &weak);
    out.put("weak_coupling_extras", &extras);
    out.put("mourre_window", &window);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn lap(
    cfg: &RunConfig,
    inst: &Instance,
    energy: f64,
    kappa: f64,
    c_m: f64,
    re_grid: &[f64],
    eta_factor: f64,
    eps: &[f64],
    weighted: bool,
    exec: Exec,
) -> Result<TaskOutput, Error> {
    let b = bundle(cfg, inst)?;
    let mut out = TaskOutput::default();
    let spec = ConjugateSpec::translations();
    let field_sign = commutator_observable(&b, &spec).field_sign;
    let profile = WindowProfile::around(energy, kappa);
    let triple = match triple_from_model(&b.model(), &spec, field_sign, profile, c_m) {
        Ok(t) => t,
        Err(Error::NoCertificate(msg)) => {
            out.check(Invariant::holds("mourre_estimate", false).with_note(msg));
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    out.check(Invariant::holds("mourre_estimate", true));
    let (lo, hi) = profile.plateau().expect("bump profiles have a plateau");
    let re: Vec<f64> = if re_grid.is_empty() { (0..5).map(|k| lo + (k as f64 + 0.5) * (hi - lo) / 5.0).collect() } else { re_grid.to_vec() };
    let gap = triple.gap_resolution(lo, hi);
    let eta = eta_factor * gap;
    let window = triple.spectrum().apply_fn_real(|t| profile.eval(t));
    let u = mat_vec(&window, &probe_vector(b.dim(), 0.7));
    if vec_norm(&u) < 1e-12 {
        out.check(Invariant::holds("window_nonempty", false).with_note("no spectrum under the window"));
        return Ok(out);
    }
    let u = unit(u);
    let s = weighted.then(|| {
        let d: Vec<f64> = (0..b.dim()).map(|i| (b.n.get(i, i).re + 1.0).sqrt()).collect();
        SparseOp::diagonal(&d, b.h.basis_id())
    });
    let st = lap_stability(&triple, &u, &re, eta, eps, s.as_ref(), exec)?;
    for (name, report) in [("lap", &st.coarse), ("lap_fine", &st.fine)] {
        let mut t = Table::new(name, &CSV_HEADER);
        for row in report.csv_rows() {
            t.push(row.to_vec());
        }
        out.tables.push(t);
    }
    let p = st.coarse.pass;
    out.check(Invariant::holds("resolvent_bound", p.inverse));
    out.check(Invariant::holds("localized_bound", p.localized));
    out.check(Invariant::holds("weighted_pair_bound", p.weighted_pair));
    out.check(Invariant::holds("lap_bound", p.lap_bound));
    if let Some(w) = p.weighted {
        out.check(Invariant::holds("lap_weighted_bound", w));
    }
    let eps_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let at_min = st.coarse.samples.iter().filter(|s| s.norms.eps.abs() == eps_min).map(|s| s.to_resolvent).fold(0.0, f64::max);
    let agree = Invariant::at_most("limit_agreement", at_min, st.coarse.to_resolvent_tol);
    out.check(Invariant { pass: p.to_resolvent, ..agree }.with_note("distance to the unregularized resolvent at the smallest eps, decreasing along the ladder"));
    for (name, r) in &st.ratios {
        out.check(Invariant::at_most(&format!("stability_{name}"), *r, STABILITY_FACTOR));
    }
    let zetas: Vec<C64> = re.iter().map(|&x| C64::new(x, eta)).collect();
    let m4 = triple.m4_residuals(&zetas)?.into_iter().fold(0.0, f64::max);
    out.check(
        Invariant::reported("commutator_expansion", m4, EXACT_TOL * triple.t.max_abs().max(1.0))
            .with_note("nonzero when T' is the model commutator rather than i[T, A]"),
    );
    out.put("dim", b.dim());
    out.put("e", triple.e);
    out.put("eta", triple.eta);
    out.put("m_min", triple.m_min);
    out.put("gap_resolution", gap);
    out.put("eta_min", eta);
    out.put("re_grid", &re);
    out.put("constants", st.coarse.constants);
    out.put("constants_fine", st.fine.constants);
    out.put("pass", st.coarse.pass);
    out.put("stability", &st.ratios);
    out.put("limits", &st.coarse.limits);
    Ok(out)
}

fn kms(inst: &Instance, beta: f64, caps: &[usize]) -> Result<TaskOutput, Error> {
    let mut out = TaskOutput::default();
    let mut t = Table::new("kms", &["cap", "residual", "jlj_defect", "j_defect", "overlap_abs"]);
    let mut residuals = vec![];
    let mut worst_jlj: f64 = 0.0;
    for &c in caps {
        let sys = assemble_liouvillean_with(&inst.small, inst.g.clone(), &inst.modes, c, &[beta])?;
        let k = kms_vector(&sys)?;
        let jlj = sys.jlj_defect();
        worst_jlj = worst_jlj.max(jlj / scaled(&sys.l));
        t.push(vec![c as f64, k.residual, jlj, k.j_defect, k.overlap.norm()]);
        residuals.push(k.residual);
        out.put(&format!("exponent_cap_{c}"), k.exponent);
    }
    let converging = residuals.windows(2).all(|w| w[1] < w[0]);
    if caps.len() > 1 {
        out.check(Invariant::holds("kms_converging", converging));
    } else {
        out.check(Invariant::reported("kms_converging", 0.0, 1.0).with_note("single truncation, no ladder"));
    }
    out.check(Invariant::at_most("jlj_relative", worst_jlj, 1.0));
    out.tables.push(t);
    out.put("beta", beta);
    out.put("residuals", &residuals);
    Ok(out)
}

fn evolve(cfg: &RunConfig, inst: &Instance, times: &[f64]) -> Result<TaskOutput, Error> {
    let b = bundle(cfg, inst)?;
    let mut out = TaskOutput::default();
    let psi = unit(probe_vector(b.dim(), 0.4));
    let ev = pflab_core::hamiltonian::evolve_and_approach(&b, &psi, &psi, times);
    let ko = koopman_diagnostics(b.spectrum(), &b.n, &psi, times);
    let mut t = Table::new("evolve", &["t", "trace_re", "trace_im", "number_re", "number_im"]);
    for ((&time, tr), c) in times.iter().zip(&ev.trace).zip(&ko.correlation) {
        t.push(vec![time, tr.re, tr.im, c.re, c.im]);
    }
    out.tables.push(t);
    let worst = ev.trace.iter().map(|z| z.norm()).fold(0.0, f64::max);
    out.check(Invariant::at_most("trace_bounded", worst - 1.0, 1e-12));
    out.check(
        Invariant::reported("cesaro_gap", (ev.cesaro - ev.ground_element).norm(), 1.0 / times.last().copied().unwrap_or(1.0).max(1.0))
            .with_note("finite-time average against the ground projection"),
    );
    out.put("cesaro", (ev.cesaro.re, ev.cesaro.im));
    out.put("ground_element", (ev.ground_element.re, ev.ground_element.im));
    out.put("return_mean", ev.return_mean);
    out.put("return_limit", ev.return_limit);
    out.put("number_mean", (ko.mean.re, ko.mean.im));
    out.put("number_limit", (ko.limit.re, ko.limit.im));
    out.put("kernel_dim", ko.kernel_dim);
    out.put("kernel_gap", ko.gap);
    out.put("ill_conditioned", ko.ill_conditioned);
    Ok(out)
}

fn vanhove(cfg: &RunConfig, inst: &Instance, beta: f64) -> Result<TaskOutput, Error> {
    let cap = cfg.truncation.n_total_max;
    let r = vanhove_with(inst.g.clone(), &inst.modes, cap, beta)?;
    let mut out = TaskOutput::default();
    let gap = (r.h_shift_dense - r.h_shift_closed).abs();
    let inv = Invariant::at_most("ground_shift", gap, VANHOVE_TOL);
    out.check(if cap >= VANHOVE_CONVERGED_CAP { inv } else { Invariant { asserted: false, ..inv }.with_note("truncation below the converged cap") });
    let mut t = Table::new("vanhove", &["cap", "shift_closed", "shift_dense", "gap", "dressing_residual"]);
    t.push(vec![cap as f64, r.h_shift_closed, r.h_shift_dense, gap, r.dressing_residual]);
    out.tables.push(t);
    out.put("sigma", r.h_shift_dense);
    out.put("vanhove", &r);
    Ok(out)
}

fn glue_check(cfg: &RunConfig, inst: &Instance, betas: &[f64], spec: &ConjugateSpec) -> Result<TaskOutput, Error> {
    let mut out = TaskOutput::default();
    let header = ["beta", "jlj", "unitarity", "conjugation", "number", "representation", "commutator", "number_commutator"];
    let mut t = Table::new("glue", &header);
    let mut worst = [0.0f64; 7];
    for &beta in betas {
        let sys = assemble_liouvillean_with(&inst.small, inst.g.clone(), &inst.modes, cfg.truncation.n_total_max, &[beta])?;
        let glued = glue(&sys)?;
        let lc = liouvillean_commutator(&glued, spec);
        let tol_l = scaled(&sys.l);
        let row = [
            sys.jlj_defect(),
            glued.unitarity_defect(),
            glued.conjugation_defect,
            glued.number_defect,
            glued_representation_gap(&inst.g, &inst.modes, &[beta]),
            lc.observable.discrepancy,
            lc.number_residual,
        ];
        let tols = [tol_l, EXACT_TOL, tol_l, EXACT_TOL, EXACT_TOL * 10.0, tol_l, tol_l];
        for k in 0..7 {
            worst[k] = worst[k].max(row[k] / tols[k]);
        }
        let mut r = vec![beta];
        r.extend(row);
        t.push(r);
    }
    out.tables.push(t);
    let hermitian = inst.g.iter().all(|g| (g - g.adjoint()).iter().all(|z| z.norm() <= 1e-14 * (1.0 + g.norm())));
    for (k, name) in header[1..].iter().enumerate() {
        let inv = Invariant::at_most(&format!("{name}_relative"), worst[k], 1.0);
        out.check(if *name == "representation" && !hermitian {
            Invariant { asserted: false, ..inv }.with_note("holds for Hermitian couplings only")
        } else {
            inv
        });
    }
    out.put("betas", betas);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(task: &str) -> RunConfig {
        RunConfig::parse(&format!(
            r#"{{"small": {{"nu": 2, "energies": [0.0, 0.5]}},
                "modes": {{"grid": "uniform", "count": 2, "omega_max": 1.2}},
                "coupling": {{"profile": "scalar", "p": 0.0, "uv_scale": 2.0, "uv": "gaussian", "amplitude": 0.0,
                              "g0": [[0.0, 1.0], [1.0, 0.0]]}},
                "truncation": {{"n_total_max": 2, "per_mode_cap": 2}},
                "task": {task}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn uncoupled_spectrum_is_free() {
        let c = cfg(r#"{"kind": "spectrum"}"#);
        let out = run(&c, &c.instance().unwrap(), Exec::default()).unwrap();
        assert!(out.failing().is_empty(), "{:?}", out.invariants);
        assert!(out.invariants.iter().any(|i| i.name == "free_spectrum"));
        assert_eq!(out.tables[0].rows.len(), 12);
    }

    #[test]
    fn mourre_passes_on_free_field() {
        let c = cfg(r#"{"kind": "mourre", "energy": 1.0, "kappa": 0.3, "epsilon": 0.05}"#);
        let out = run(&c, &c.instance().unwrap(), Exec::default()).unwrap();
        assert!(out.failing().is_empty(), "{:?}", out.invariants);
    }

    #[test]
    fn vanhove_rejects_matrix_small_system() {
        let c = cfg(r#"{"kind": "vanhove", "beta": 1.0}"#);
        assert!(matches!(run(&c, &c.instance().unwrap(), Exec::default()), Err(RunError::Config(_))));
    }
}
