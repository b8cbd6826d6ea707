use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparse-ec"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(
        &p,
        r#"{"simulation": {"n_samples": 80}, "hemodynamics": {"n_samples": 20},
            "em": {"max_iter": 2}, "algorithm1": {"max_iter": 20}}"#,
    )
    .unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_basis_and_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data.json");
    let basis = dir.path().join("basis.json");

    let o = run(&["simulate", "--config", s(&cfg), "--seed", "3", "--out", s(&data)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = json(&data);
    assert_eq!(d["x"].as_array().unwrap().len(), 80);
    assert_eq!(d["seed"], 3);

    let o = run(&["build-basis", "--config", s(&cfg), "--out", s(&basis)]);
    assert!(o.status.success());
    assert_eq!(json(&basis)["taps"], 16);

    let measured = dir.path().join("measured.json");
    let o = run(&[
        "estimate-measured", "--config", s(&cfg), "--data", s(&data), "--basis", s(&basis), "--out", s(&measured),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&measured);
    assert_eq!(m["a_hat"].as_array().unwrap().len(), 7);
    assert!(m["sigma_hat"].as_f64().unwrap() > 0.0);
    assert_eq!(m["alpha_hat"].as_array().unwrap().len(), 5);
    assert!(m["gamma"].as_array().unwrap().iter().all(|g| g.as_f64().unwrap() >= 0.0));

    let bold = dir.path().join("bold.json");
    let o = run(&[
        "estimate-bold", "--config", s(&cfg), "--data", s(&data), "--basis", s(&basis), "--max-iter", "1",
        "--out", s(&bold),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let b = json(&bold);
    assert_eq!(b["iterations"], 1);
    assert!(b["diagnostics"]["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(b["params"]["gamma"].as_array().unwrap().len(), 49);

    let fig = dir.path().join("fig.csv");
    let o = run(&["export-fig", "--basis", s(&basis), "--out", s(&fig)]);
    assert!(o.status.success());
    let text = fs::read_to_string(&fig).unwrap();
    assert_eq!(text.lines().count(), 17);
    assert!(text.lines().nth(16).unwrap().starts_with("30,"));
}

#[test]
fn bench_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut reports = Vec::new();
    for jobs in ["1", "2"] {
        let out = dir.path().join(format!("t1_{jobs}.json"));
        let o = run(&[
            "bench", "table1", "--runs", "2", "--config", s(&cfg), "--seed", "5", "--jobs", jobs, "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("paper: nonlinear"));
        assert!(out.with_extension("txt").exists());
        let mut r = json(&out);
        for arm in r["arms"].as_array_mut().unwrap() {
            arm.as_object_mut().unwrap().remove("mean_wall_time_s");
            for run in arm["runs"].as_array_mut().unwrap() {
                run.as_object_mut().unwrap().remove("wall_time_s");
            }
        }
        reports.push(r);
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0]["seeds"], serde_json::json!([5, 6]));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"em": {"tol": 0}}"#).unwrap();
    assert_eq!(run(&["build-basis", "--config", s(&bad)]).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["export-fig", "--basis", s(&missing)]).status.code(), Some(4));

    let unstable = dir.path().join("unstable.json");
    fs::write(&unstable, r#"{"simulation": {"a_true": [[0.5, 0.0], [0.0, -1.0]], "n_samples": 20}}"#).unwrap();
    let o = run(&["simulate", "--config", s(&unstable), "--neuronal-only"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}
