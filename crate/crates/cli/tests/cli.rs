use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn corpus(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(rel)
}

fn sasrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sasrc")).args(args).env("NO_COLOR", "1").output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 output")
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).expect("utf-8 output")
}

/// Rows of a trajectory CSV as `(t, states…, y)`.
fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines().skip(1).map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect()
}

fn certify(rel: &str) -> Value {
    let o = sasrc(&["certify", p(&corpus(rel))]);
    assert!(o.status.success(), "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn constant_system_has_constant_output() {
    let o = sasrc(&["simulate", "--system", p(&corpus("systems/sas_constant.json")), "--input", p(&corpus("inputs/wave.csv"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 200);
    assert!(r.iter().all(|row| row[2] == 1.0), "y = W q / (1 − 0) = 1 everywhere");
    assert_eq!(r.last().unwrap()[0], 0.0);
}

#[test]
fn recursion_and_series_agree_after_washout() {
    let sys = corpus("systems/sas_small.json");
    let input = corpus("inputs/wave.csv");
    let rec = sasrc(&["simulate", "--system", p(&sys), "--input", p(&input), "--washout", "60"]);
    let ser = sasrc(&["simulate", "--system", p(&sys), "--input", p(&input), "--method", "series", "--tol", "1e-12"]);
    assert!(rec.status.success() && ser.status.success());
    let (a, b) = (rows(&stdout(&rec)), rows(&stdout(&ser)));
    for (x, y) in a.iter().zip(&b).skip(60) {
        for (u, v) in x.iter().zip(y) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }
    assert!(stderr(&ser).contains("tail bound"));
    assert!(stderr(&rec).contains("esp margin"));
}

#[test]
fn simulate_writes_file_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let args = |o: &Path| {
        sasrc(&[
            "simulate",
            "--system",
            p(&corpus("systems/linear_diag.json")),
            "--input",
            p(&corpus("inputs/wave.csv")),
            "--method",
            "series",
            "--out",
            p(o),
        ])
    };
    assert!(args(&out).status.success());
    let first = fs::read(&out).unwrap();
    assert!(args(&out).status.success());
    assert_eq!(first, fs::read(&out).unwrap());
    assert!(String::from_utf8(first).unwrap().starts_with("t,x_1,x_2,y\n"));
}

#[test]
fn missing_file_exits_with_usage_code_and_names_it() {
    let o = sasrc(&["simulate", "--system", "/nonexistent/system.json", "--input", p(&corpus("inputs/wave.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/system.json"));
}

#[test]
fn malformed_json_and_bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(sasrc(&["certify", p(&bad)]).status.code(), Some(2));
    assert_eq!(sasrc(&["simulate", "--method", "magic"]).status.code(), Some(2));
}

#[test]
fn inadmissible_inputs_and_systems_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("wide.csv");
    fs::write(&input, "1,2.0,zero\n0.5\n1.5\n").unwrap();
    let o = sasrc(&["simulate", "--system", p(&corpus("systems/sas_small.json")), "--input", p(&input)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let sys = dir.path().join("loud.json");
    fs::write(&sys, r#"{"kind":"sas","p":{"rows":1,"cols":1,"coeffs":[[1.2]]},"q":{"rows":1,"cols":1,"coeffs":[[1.0]]},"W":[1.0],"eps":0.05}"#)
        .unwrap();
    let o = sasrc(&["simulate", "--system", p(&sys), "--input", p(&corpus("inputs/wave.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("loud.json"));
}

#[test]
fn certify_reports_conditions() {
    let c = certify("polynomials/contractive.json");
    assert!((c["B_p"].as_f64().unwrap() - 0.7).abs() < 1e-12);
    assert_eq!(c["lambda"].as_f64().unwrap(), 0.45);
    for k in ["cond_i", "cond_ii", "cond_iii"] {
        assert_eq!(c[k], Value::Bool(true), "{k}");
    }
    assert!(c["M_p_lower"].as_f64().unwrap() <= c["M_p_upper"].as_f64().unwrap());

    let id = certify("polynomials/identity.json");
    assert_eq!(id["cond_iii"], Value::Bool(false));

    let nil = certify("polynomials/nilpotent.json");
    assert_eq!(nil["nilpotent"], Value::Bool(true));
    assert_eq!(nil["nilpotency_index"], Value::from(2));

    let shift = certify("systems/linear_shift.json");
    assert_eq!(shift["nilpotency_index"], Value::from(3));
}

#[test]
fn certify_lambda_flag_is_honoured() {
    let o = sasrc(&["certify", p(&corpus("polynomials/contractive.json")), "--lambda", "0.35"]);
    let c: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(c["cond_i"], Value::Bool(false));
    assert_eq!(c["cond_ii"], Value::Bool(true));
}

#[test]
fn sum_with_negated_copy_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("zero.json");
    let s = corpus("systems/sas_small.json");
    let o = sasrc(&["compose", p(&s), p(&s), "--mode", "sum", "--lambda", "-1", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["parents"].as_array().unwrap().len(), 2);
    let o = sasrc(&["simulate", "--system", p(&out), "--input", p(&corpus("inputs/wave.csv")), "--method", "series"]);
    assert!(o.status.success());
    for row in rows(&stdout(&o)) {
        assert!(row.last().unwrap().abs() < 1e-12);
    }
}

#[test]
fn product_and_mixed_composition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prod.json");
    let (a, b) = (corpus("systems/sas_small.json"), corpus("systems/sas_scalar.json"));
    let o = sasrc(&["compose", p(&a), p(&b), "--mode", "product", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("dimension        5"));
    let o = sasrc(&["compose", p(&a), p(&corpus("systems/linear_diag.json")), "--mode", "sum"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_algebra_on_corpus_passes() {
    let o = sasrc(&["verify", "algebra", "--corpus", p(&corpus("systems"))]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("0 failed"));
    assert!(!out.contains('\x1b'), "NO_COLOR suppresses escapes");
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 5);
}

#[test]
fn approximate_recovers_planted_reservoir() {
    let dir = tempfile::tempdir().unwrap();
    let o = sasrc(&[
        "approximate",
        "--config",
        p(&corpus("configs/approximate_planted.json")),
        "--out-dir",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let best: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("best_model.json")).unwrap()).unwrap();
    assert_eq!(best["family"], "planted");
    assert!(best["test_err"].as_f64().unwrap() < 1e-6);
    let csv = fs::read_to_string(dir.path().join("candidates.csv")).unwrap();
    assert!(csv.starts_with("family,N,restart,train_err,test_err,seed"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn config_values_override_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus("configs/approximate_planted.json");
    let o = sasrc(&["approximate", "--config", p(&cfg), "--out-dir", p(dir.path()), "--restarts", "3"]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("candidates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "the config's restarts = 1 wins over the flag");

    let t = corpus("configs/transfer.json");
    assert!(sasrc(&["transfer", "--config", p(&t), "--certificate", "1e-9"]).status.success());
}

#[test]
fn transfer_reports_and_checks_certificate() {
    let o = sasrc(&["transfer", "--config", p(&corpus("configs/transfer.json"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["deterministic_bound_holds"], Value::Bool(true));
    assert_eq!(r["stochastic_sup_err"], r["deterministic_sup_err"]);
    assert_eq!(r["n_paths"], Value::from(200));

    let dir = tempfile::tempdir().unwrap();
    let mut v: Value = serde_json::from_str(&fs::read_to_string(corpus("configs/transfer.json")).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("certificate");
    let cfg = dir.path().join("t.json");
    fs::write(&cfg, v.to_string()).unwrap();
    let o = sasrc(&["transfer", "--config", p(&cfg), "--certificate", "1e-9"]);
    assert_eq!(o.status.code(), Some(1));
}
