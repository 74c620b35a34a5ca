//! End-to-end runs of the `pflab` binary and the library entry points.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pflab::config::RunConfig;
use pflab::suite;
use serde_json::{json, Value};

fn pflab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pflab")).args(args).env("PFLAB_OUTPUT_DIR", out).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run_dirs(base: &Path) -> Vec<PathBuf> {
    match fs::read_dir(base) {
        Ok(rd) => rd.map(|e| e.unwrap().path()).collect(),
        Err(_) => vec![],
    }
}

fn only_run(base: &Path) -> PathBuf {
    let dirs = run_dirs(base);
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn record(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("record.json")).unwrap()).unwrap()
}

fn base(task: Value) -> Value {
    json!({
        "small": {"nu": 2, "energies": [0.0, 0.5]},
        "modes": {"grid": "explicit", "omegas": [0.7, 1.1]},
        "coupling": {"profile": "scalar", "p": 0.0, "uv_scale": 2.0, "uv": "gaussian", "amplitude": 0.0, "g0": [[0.0, 1.0], [1.0, 0.0]]},
        "truncation": {"n_total_max": 2, "per_mode_cap": 2},
        "task": task
    })
}

fn weak_instance(task: Value) -> Value {
    let omegas: Vec<f64> = (0..6).map(|j| 0.5 + 0.15 * j as f64).collect();
    let g0 = [[0.3, 1.0], [1.0, -0.2]];
    let per_mode: Vec<Value> = omegas.iter().map(|w| json!(g0.map(|r| r.map(|x| x * 0.04 * w.sqrt())))).collect();
    json!({
        "small": {"nu": 2, "energies": [0.0, 0.3]},
        "modes": {"grid": "explicit", "omegas": omegas},
        "coupling": {"profile": "explicit", "per_mode": per_mode},
        "truncation": {"n_total_max": 2, "per_mode_cap": 2},
        "task": task
    })
}

fn vanhove_config() -> Value {
    json!({
        "small": {"nu": 1, "energies": [0.0]},
        "modes": {"grid": "explicit", "omegas": [1.0]},
        "coupling": {"profile": "explicit", "per_mode": [[[0.2]]]},
        "truncation": {"n_total_max": 10, "per_mode_cap": 10},
        "task": {"kind": "vanhove", "beta": 2.0}
    })
}

#[test]
fn uncoupled_spectrum_matches_free_energies() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &base(json!({"kind": "spectrum"})));
    let out = tmp.path().join("out");
    let res = pflab(&["run", cfg.to_str().unwrap()], &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let dir = only_run(&out);
    let text = fs::read_to_string(dir.join("spectrum.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,eigenvalue,number,virial"));
    let got: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let mut want = vec![];
    for n in [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]] {
        for e in [0.0, 0.5] {
            want.push(e + 0.7 * n[0] as f64 + 1.1 * n[1] as f64);
        }
    }
    want.sort_by(f64::total_cmp);
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert_eq!(record(&dir)["pass"], true);
}

#[test]
fn vanhove_ground_shift_is_minus_g_squared_over_two_omega() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "v.json", &vanhove_config());
    let out = tmp.path().join("out");
    let res = pflab(&["run", cfg.to_str().unwrap()], &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rec = record(&only_run(&out));
    let sigma = rec["report"]["sigma"].as_f64().unwrap();
    assert!((sigma + 0.02).abs() < 1e-8, "{sigma}");
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"small\": {\"nu\": 2").unwrap();
    assert_eq!(pflab(&["run", bad.to_str().unwrap()], &out).status.code(), Some(2));
    let mut unknown = base(json!({"kind": "spectrum"}));
    unknown["extra"] = json!(1);
    let p = write_config(tmp.path(), "u.json", &unknown);
    assert_eq!(pflab(&["run", p.to_str().unwrap()], &out).status.code(), Some(2));
    let p = write_config(tmp.path(), "l.json", &base(json!({"kind": "evolve", "times": []})));
    assert_eq!(pflab(&["run", p.to_str().unwrap()], &out).status.code(), Some(2));
    let missing = tmp.path().join("missing.json");
    assert_eq!(pflab(&["run", missing.to_str().unwrap()], &out).status.code(), Some(2));
    assert!(run_dirs(&out).is_empty());
}

#[test]
fn dimension_cap_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = base(json!({"kind": "spectrum"}));
    cfg["truncation"] = json!({"n_total_max": 2, "per_mode_cap": 2, "dim_cap": 10});
    let p = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("out");
    let res = pflab(&["run", p.to_str().unwrap()], &out);
    assert_eq!(res.status.code(), Some(3));
    assert!(run_dirs(&out).is_empty());
}

#[test]
fn check_all_default_instance_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let res = pflab(&["check-all"], tmp.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stdout));
    let stdout = String::from_utf8_lossy(&res.stdout);
    for name in ["ccr", "hamiltonian_commutator_identity", "hamiltonian_virial", "liouvillean_jlj", "glue_unitarity", "regularizer", "strict_lap_exactness"] {
        assert!(stdout.lines().any(|l| l.starts_with("PASS") && l.contains(name)), "{name} missing:\n{stdout}");
    }
}

#[test]
fn injected_virial_fault_exits_1_and_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let res = pflab(&["check-all", "--instance", "small", "--inject-fault", "virial-sign"], tmp.path());
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("hamiltonian_virial"));
}

#[test]
fn strong_coupling_marks_weak_certificate_not_applicable() {
    let mut cfg = suite::builtin("small").unwrap();
    if let pflab::config::CouplingBlock::Scalar { amplitude, .. } = &mut cfg.coupling {
        *amplitude = 3.0;
    }
    let inst = cfg.instance().unwrap();
    let out = suite::check_all(&inst, &cfg.truncation, 2.0, None).unwrap();
    let weak = out.invariants.iter().find(|i| i.name == "hamiltonian_weak_coupling").unwrap();
    assert!(!weak.asserted);
    assert!(weak.note.as_deref().unwrap().contains("not applicable"));
    assert!(out.failing().is_empty(), "{:?}", out.failing());
}

#[test]
fn identical_configs_reproduce_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "k.json", &weak_instance(json!({"kind": "kms", "beta": 1.0, "caps": [1, 2]})));
    let dirs: Vec<PathBuf> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = tmp.path().join(n);
            assert_eq!(pflab(&["run", cfg.to_str().unwrap()], &out).status.code(), Some(0));
            only_run(&out)
        })
        .collect();
    assert_eq!(dirs[0].file_name(), dirs[1].file_name());
    assert_eq!(fs::read(dirs[0].join("kms.csv")).unwrap(), fs::read(dirs[1].join("kms.csv")).unwrap());
    let strip = |d: &Path| {
        let mut r = record(d);
        r.as_object_mut().unwrap().remove("wall_time_s");
        r
    };
    assert_eq!(strip(&dirs[0]), strip(&dirs[1]));
}

#[test]
fn schema_documents_every_emitted_field() {
    let schema: Value = serde_json::from_str(pflab::SCHEMA).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let configs = [
        base(json!({"kind": "spectrum"})),
        base(json!({"kind": "mourre", "energy": 1.0, "kappa": 0.3, "epsilon": 0.05})),
        weak_instance(json!({"kind": "lap", "energy": 1.2, "kappa": 0.4, "c_m": 2.0, "eps": [0.1, 1e-3, 1e-6]})),
        weak_instance(json!({"kind": "kms", "beta": 1.0, "caps": [1, 2]})),
        base(json!({"kind": "evolve", "times": [0.0, 1.0, 5.0]})),
        vanhove_config(),
        base(json!({"kind": "glue-check", "betas": [0.5, 2.0]})),
        base(json!({"kind": "check-all"})),
    ];
    let mut seen_tasks = BTreeSet::new();
    for (k, cfg) in configs.iter().enumerate() {
        let p = write_config(tmp.path(), &format!("c{k}.json"), cfg);
        let out = tmp.path().join(format!("o{k}"));
        let res = pflab(&["run", p.to_str().unwrap()], &out);
        assert!(matches!(res.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&res.stderr));
        let dir = only_run(&out);
        let rec = record(&dir);
        let task = rec["task"].as_str().unwrap().to_string();
        for key in rec.as_object().unwrap().keys() {
            assert!(schema["record"].get(key).is_some(), "record field {key}");
        }
        for key in rec["report"].as_object().unwrap().keys() {
            let documented = schema["reports"][&task].as_object().unwrap();
            let key_ok = documented.contains_key(key) || (key.starts_with("exponent_cap_") && documented.contains_key("exponent_cap_<cap>"));
            assert!(key_ok, "{task} report key {key}");
        }
        for inv in rec["invariants"].as_array().unwrap() {
            let names = schema["invariants"][&task].as_array().unwrap();
            assert!(names.contains(&inv["name"]), "{task} invariant {}", inv["name"]);
            for field in inv.as_object().unwrap().keys() {
                assert!(schema["invariant"].get(field).is_some(), "invariant field {field}");
            }
        }
        for file in rec["tables"].as_array().unwrap() {
            let file = file.as_str().unwrap();
            let cols = &schema["tables"][file];
            let text = fs::read_to_string(dir.join(file)).unwrap();
            for col in text.lines().next().unwrap().split(',') {
                assert!(cols.get(col).is_some(), "{file} column {col}");
            }
        }
        seen_tasks.insert(task);
    }
    let kinds: BTreeSet<String> = schema["reports"].as_object().unwrap().keys().cloned().collect();
    assert_eq!(seen_tasks, kinds);
    let out = Command::new(env!("CARGO_BIN_EXE_pflab")).arg("schema").output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), pflab::SCHEMA);
    let _ = RunConfig::parse(&serde_json::to_string(&base(json!({"kind": "spectrum"}))).unwrap()).unwrap();
}
