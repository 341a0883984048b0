use std::path::Path;
use std::process::{Command, Output};

fn stiefel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stiefel")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn hypergeom_prints_h() {
    let o = stiefel(&["hypergeom", "--n", "3", "--d", "7,5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let h_line = text.lines().find(|l| l.starts_with("h = ")).unwrap();
    let h: Vec<f64> = h_line[4..].split(", ").map(|s| s.parse().unwrap()).collect();
    assert!((h[0] - 0.88).abs() < 0.01 && (h[1] - 0.85).abs() < 0.005, "{h:?}");

    let o = stiefel(&["hypergeom", "--n", "4", "--d", "0,0"]);
    assert!(stdout(&o).contains("log_0f1 = 0\n"));

    let o = stiefel(&["hypergeom", "--n", "5", "--d", "3,2,1"]);
    assert!(stdout(&o).contains("stabilized = true"));

    let o = stiefel(&["hypergeom", "--n", "3", "--d", "-1,2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sample_fit_and_mode_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    std::fs::write(p("cfg.json"), r#"{"mcmc": {"iters": 300, "burn_in": 100, "chains": 2}}"#).unwrap();
    for run in ["a", "b"] {
        let o = stiefel(&["--seed", "5", "--out", &p(run), "sample", "--n", "3", "--d", "9,3", "--count", "80"]);
        assert!(o.status.success(), "{o:?}");
        let data = p(&format!("{run}/data.csv"));
        let o = stiefel(&["--seed", "5", "--config", &p("cfg.json"), "--out", &p(run), "fit", &data]);
        assert!(o.status.success(), "{o:?}");
    }
    for f in ["data.csv", "fit.json", "trace_chain0.csv", "trace_chain1.csv"] {
        assert_eq!(std::fs::read(p(&format!("a/{f}"))).unwrap(), std::fs::read(p(&format!("b/{f}"))).unwrap(), "{f}");
    }
    let fit = json(&dir.path().join("a/fit.json"));
    assert_eq!(fit["chains"].as_array().unwrap().len(), 2);
    assert!(fit["acceptance_rate"].as_f64().unwrap() > 0.8);
    let manifest = json(&dir.path().join("a/manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["mcmc"]["iters"], 300);

    let o = stiefel(&["--out", &p("m"), "mode", &p("a/data.csv")]);
    assert!(o.status.success());
    let mode = json(&dir.path().join("m/mode.json"));
    let d: Vec<f64> = mode["d"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(d[0] > d[1] && d[1] > 0.0);
}

#[test]
fn single_square_observation_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("one.csv");
    std::fs::write(&data, "# stiefel n=3 p=3 N=1\n1,0,0,0,1,0,0,0,1\n").unwrap();
    let o = stiefel(&["--out", dir.path().to_str().unwrap(), "fit", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("N >= 3") && err.contains("||Psi||_2"), "{err}");
}

#[test]
fn test_rejects_mismatched_manifolds() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    std::fs::write(&a, "# stiefel n=2 p=1\n1,0\n0,1\n").unwrap();
    std::fs::write(&b, "# stiefel n=3 p=1\n1,0,0\n").unwrap();
    let o = stiefel(&["--out", dir.path().to_str().unwrap(), "test", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stiefel(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn simulate_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    std::fs::write(&cfg, r#"{"simulate": {"sizes": [50, 500], "replicates": 3, "estimator": "posterior_mode"}}"#)
        .unwrap();
    let out = dir.path().join("sim");
    let o = stiefel(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "simulate"]);
    assert!(o.status.success(), "{o:?}");
    let errors = std::fs::read_to_string(out.join("errors.csv")).unwrap();
    assert_eq!(errors.lines().count(), 1 + 6);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("n_obs,replicates,mean_relative_error,sd_relative_error"));
}
