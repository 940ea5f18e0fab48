use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixfpca"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small simulated dataset; returns the data CSV path.
fn simulate(dir: &Path, p: u32, n: u32, grid: u32) -> PathBuf {
    let out = dir.join("sim");
    ok(&[
        "simulate", "--n", &n.to_string(), "--p", &p.to_string(), "--grid", &grid.to_string(), "--seed", "7",
        "--out", s(&out),
    ]);
    out.join("data.csv")
}

fn fit(data: &Path, out: &Path, method: &str, grid: u32) {
    ok(&[
        "fit", "--data", s(data), "--method", method, "--grid", &grid.to_string(), "--k-candidates", "4,5", "--out",
        s(out),
    ]);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    for args in [
        vec!["fit", "--data", "d.csv", "--method", "bogus", "--out", s(&out)],
        vec!["benchmark", "--reps", "0", "--out", s(&out)],
        vec!["benchmark", "--methods", "m2fpca,nope", "--out", s(&out)],
        vec!["--threads", "0", "plot", "--input", "m.json", "--out", s(&out)],
        vec!["fit", "--data", "d.csv", "--k-candidates", "2", "--out", s(&out)],
        vec!["fit", "--data", "d.csv", "--var-threshold", "1.5", "--out", s(&out)],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["fit", "--data", s(&dir.path().join("none.csv")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn simulate_fit_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 2, 60, 8);
    let sim = data.parent().unwrap();
    for f in ["data.csv", "data.json", "truth.json", "manifest.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }

    let out = dir.path().join("fit");
    fit(&data, &out, "m2fpca", 8);
    for f in ["model.json", "eigen.json", "scores.csv", "summary.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let eigen = json(&out.join("eigen.json"));
    let values: Vec<f64> = eigen["eigenvalues"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]));
    assert!(values.iter().all(|&v| v >= 0.0));
    // full flavor: stacked eigenfunctions of length J·m
    assert_eq!(eigen["eigenfunctions"].as_array().unwrap().len(), 16);

    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["parameters"]["method"], "m2fpca");
    assert_eq!(manifest["parameters"]["grid_size"], 8);
    assert!(manifest["substreams"]["sampler"].is_u64());

    let scores = std::fs::read_to_string(out.join("scores.csv")).unwrap();
    assert!(scores.starts_with("subject_id,l,component,score"));

    let pred = dir.path().join("pred");
    ok(&[
        "predict", "--data", s(&data), "--model", s(&out.join("model.json")), "--subject", "s0001,s0002",
        "--times", "0.1,0.5", "--out", s(&pred),
    ]);
    let mut rdr = csv::Reader::from_path(pred.join("predictions.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["subject_id", "component", "time", "latent_mean", "latent_sd", "observed_prediction"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    // 2 subjects × 2 components × 2 times
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let sd: f64 = r[4].parse().unwrap();
        assert!(sd > 0.0 && sd <= 1.0 + 1e-9, "{r:?}");
    }
    assert!(pred.join("manifest.json").exists());
}

#[test]
fn ps_method_gives_shared_eigenfunctions() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 3, 60, 8);
    let out = dir.path().join("fit");
    fit(&data, &out, "ps_m2fpca", 8);
    let eigen = json(&out.join("eigen.json"));
    assert_eq!(eigen["flavor"], "partially_separable");
    assert_eq!(eigen["eigenfunctions"].as_array().unwrap().len(), 8);
    assert_eq!(json(&out.join("manifest.json"))["parameters"]["method"], "ps_m2fpca");

    let sc = dir.path().join("scores");
    ok(&["scores", "--eigen", s(&out.join("eigen.json")), "--data", s(&data), "--out", s(&sc)]);
    let text = std::fs::read_to_string(sc.join("scores.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("s0001,1,x1_binary,"));
}

#[test]
fn fit_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 2, 50, 6);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fit(&data, &a, "m2fpca", 6);
    fit(&data, &b, "m2fpca", 6);
    for f in ["model.json", "eigen.json", "scores.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn plots_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 60, 6);
    let out = dir.path().join("fit");
    fit(&data, &out, "m2fpca", 6);
    let (p1, p2) = (dir.path().join("p1"), dir.path().join("p2"));
    ok(&["plot", "--input", s(&out.join("model.json")), "--out", s(&p1)]);
    ok(&["plot", "--input", s(&out.join("model.json")), "--out", s(&p2)]);
    let a = std::fs::read_to_string(p1.join("covariance.svg")).unwrap();
    assert_eq!(a, std::fs::read_to_string(p2.join("covariance.svg")).unwrap());
    assert_eq!(a.matches(r#"class="panel""#).count(), 16);

    ok(&["plot", "--input", s(&out.join("eigen.json")), "--out", s(&p1)]);
    let e = std::fs::read_to_string(p1.join("eigenfunctions.svg")).unwrap();
    assert_eq!(e.matches(r#"class="panel""#).count(), 4);

    let o = run(&["plot", "--input", s(&p1.join("manifest.json")), "--out", s(&p2)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn benchmark_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    ok(&[
        "--threads", "1", "benchmark", "--n", "40", "--p", "2", "--grid", "6", "--reps", "1", "--k-candidates", "4",
        "--methods", "m2fpca,naive_mfpca", "--out", s(&out),
    ]);
    let mut rdr = csv::Reader::from_path(out.join("benchmark.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["scenario", "n", "method", "mean_ise", "sd_ise", "n_fail"]);
    let methods: Vec<String> = rdr.records().map(|r| r.unwrap()[2].to_string()).collect();
    assert_eq!(methods, ["m2fpca", "naive_mfpca"]);
    assert!(out.join("benchmark.json").exists());
    assert_eq!(json(&out.join("manifest.json"))["threads"], 1);
}
