use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_qdt");

const CONFIG: &str = r#"{
    "schema_version": 1,
    "detector": "paper_d4",
    "probes": { "class": "haar", "count": 20 },
    "shots": { "total": 1000000 },
    "kernel": { "kind": "di", "c": 0.1, "mu": 0.9 },
    "trials": 10,
    "N_grid": [10000, 100000],
    "seed": 42,
    "cross_validation": { "kind": "di", "c": [0.01, 0.1, 1.0], "mu": [0.5, 0.9], "n_estimation": 15 }
}"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, body).unwrap();
    p
}

fn qdt(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    ok(&qdt(&args));
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(qdt(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn errors_are_json_on_stderr() {
    let out = qdt(&["run", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "invalid-config");
    assert!(err["message"].as_str().unwrap().contains("cfg.json"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("paper_d4", "no_such_detector"));
    let out = qdt(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "not-found");
}

#[test]
fn run_writes_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    run(&cfg, &out, &[]);
    let mse = fs::read_to_string(out.join("mse.csv")).unwrap();
    let mut lines = mse.lines();
    assert_eq!(lines.next().unwrap(), "trial,estimator,N,mse,error");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    for r in &rows {
        let mse: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
        assert!(mse > 0.0 && mse < 1e-2);
    }

    let summary = json(&out.join("summary.json"));
    let res = &summary["results"][0];
    assert_eq!(res["estimator"], "di");
    assert_eq!(res["N"], 1_000_000);
    assert_eq!(res["trials"], 10);
    assert_eq!(res["range_condition"], true);

    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["seed"], 42);
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists(), "{f}");
    }

    let est = json(&out.join("estimates.json"));
    let rec = &est[0]["records"][0];
    assert_eq!(rec["theta_hat"].as_array().unwrap().len(), 16);

    let scaling = fs::read_to_string(out.join("scaling.csv")).unwrap();
    assert!(scaling.starts_with("kernel,N,trials,mean_mse,std_mse,slope,range_condition,runtime_s\n"));
    assert_eq!(scaling.lines().count(), 3);
}

#[test]
fn outputs_do_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run(&cfg, &a, &["--threads", "1"]);
    run(&cfg, &b, &["--threads", "4"]);
    run(&cfg, &c, &["--threads", "4", "--seed", "43"]);
    for f in ["mse.csv", "scaling.csv", "summary.json", "estimates.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("mse.csv")).unwrap(), fs::read(c.join("mse.csv")).unwrap());
}

#[test]
fn simulate_then_estimate_from_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let cfg = cfg.to_str().unwrap();
    let sim = dir.path().join("sim");
    ok(&qdt(&["simulate", "--config", cfg, "--out", sim.to_str().unwrap()]));
    let record = sim.join("record.csv");
    let text = fs::read_to_string(&record).unwrap();
    assert!(text.starts_with("outcome_index,probe_index,count,shots\n"));
    // 3 outcomes x 20 probes
    assert_eq!(text.lines().count(), 61);

    let est = dir.path().join("est");
    let out = qdt(&[
        "estimate",
        "--config",
        cfg,
        "--record",
        record.to_str().unwrap(),
        "--out",
        est.to_str().unwrap(),
    ]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("final_mse="));
    let povm = json(&est.join("povm.json"));
    assert_eq!(povm["dim"], 4);
    assert_eq!(povm["elements"].as_array().unwrap().len(), 3);
}

#[test]
fn optimize_cross_validate_scaling_theory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let cfg = cfg.to_str().unwrap();
    let o = |name: &str| dir.path().join(name);

    ok(&qdt(&["optimize-resources", "--config", cfg, "--out", o("opt").to_str().unwrap()]));
    let eta = json(&o("opt").join("eta.json"));
    let fractions: Vec<f64> = eta["eta"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(fractions.len(), 20);
    assert!((fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(eta["converged"], true);
    assert!(eta["objective"].as_f64().unwrap() < eta["uniform_objective"].as_f64().unwrap());

    ok(&qdt(&["cross-validate", "--config", cfg, "--out", o("cv").to_str().unwrap()]));
    let cv = json(&o("cv").join("cv.json"));
    assert_eq!(cv["split"]["estimation"].as_array().unwrap().len(), 15);
    assert_eq!(cv["split"]["validation"].as_array().unwrap().len(), 5);

    ok(&qdt(&["scaling-study", "--config", cfg, "--out", o("sc").to_str().unwrap()]));
    let trials = fs::read_to_string(o("sc").join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 2 * 10);

    let out = qdt(&["check-theory", "--config", cfg, "--out", o("th").to_str().unwrap()]);
    ok(&out);
    let theory = json(&o("th").join("theory.json"));
    let outcomes = theory["outcomes"].as_array().unwrap();
    assert_eq!(outcomes.len(), 3);
    for oc in outcomes {
        assert_eq!(oc["rank_b"], 16);
        assert_eq!(oc["range_condition"]["holds"], true);
    }
}
