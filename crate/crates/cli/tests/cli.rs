use std::path::Path;
use std::process::{Command, Output};

fn utweak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_utweak")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn check_arctan_passes_with_positive_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = utweak(&["check", "--model", "builtin:arctan", "--alpha", "0.5", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path());
    assert!(s["metrics"]["lambda0"].as_f64().unwrap() > 0.25);
    assert_eq!(s["passed"], true);
    let gap = std::fs::read_to_string(dir.path().join("gap.csv")).unwrap();
    assert!(gap.starts_with("x,lambda,xi,gap\n"));
}

#[test]
fn check_grusin_fails_ellipticity() {
    let dir = tempfile::tempdir().unwrap();
    let o = utweak(&["check", "--model", "builtin:grusin", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["ellipticity"]["verdict"], "fail");
}

#[test]
fn ou_weak_error_tracks_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = utweak(&["weak-error", "--model", "builtin:ou", "--phi", "x1^2", "--delta", "0.1", "--exact", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // exact sup over the mesh of |E X_t^2 - E Y_n^2| from x = 1
    let closed = utweak_core::oracles::ou_sup_error_x2(1.0, 0.1, 10.0);
    let text = std::fs::read_to_string(dir.path().join("weak_error.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let mut worst: f64 = 0.0;
    for r in rows.records() {
        let r = r.unwrap();
        let (t, est, se): (f64, f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap());
        let ex = utweak_core::oracles::ou_exact_moments(1.0, t).1;
        let n = (t / 0.1).round() as u32;
        let eu = utweak_core::oracles::ou_euler_moments(1.0, 0.1, n).1;
        // the estimate is |exact - MC mean of Y^2|, so it sits within a few stderr of the closed form
        worst = worst.max(((est - (ex - eu).abs()).abs() - 4.0 * se).max(0.0));
    }
    assert_eq!(worst, 0.0);
    let sup = summary(dir.path())["metrics"]["sup"].as_f64().unwrap();
    assert!(sup >= closed * 0.5 && sup <= closed + 0.1, "{sup} vs {closed}");
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = |dir: &Path, threads: &str| {
        let o = utweak(&[
            "--threads", threads, "simulate", "--model", "builtin:arctan", "--paths", "40", "--horizon", "1", "--jacobian", "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    args(a.path(), "1");
    args(b.path(), "3");
    for f in ["paths.csv", "meta.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn summary_replays_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o = utweak(&[
        "derivative", "--model", "builtin:arctan", "--paths", "200", "--horizon", "2", "--seed", "0x2a", "--out", a.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let from = a.path().join("summary.json");
    let o = utweak(&["--from-summary", from.to_str().unwrap(), "--out", b.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (sa, sb) = (summary(a.path()), summary(b.path()));
    assert_eq!(sa["artifacts"], sb["artifacts"]);
    assert_eq!(sa["metrics"], sb["metrics"]);
    assert_eq!(sb["command"]["run"]["seed"], 42);
    assert_eq!(sb["command"]["run"]["out"], b.path().to_str().unwrap());
}

#[test]
fn malformed_model_reports_path_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"dim\": 1,\n  \"noise\": 1,\n  \"convention\": \"ito\",\n  \"drift\": [\"-x1\"],\n  \"diffusion\": [[\"1\"]\n}\n").unwrap();
    let o = utweak(&["simulate", "--model", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json") && err.contains("line 7"), "{err}");
}

#[test]
fn json_models_run_and_usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ou.json");
    std::fs::write(&path, r#"{"dim": 1, "noise": 1, "convention": "ito", "drift": ["-x1"], "diffusion": [["1"]]}"#).unwrap();
    let out = dir.path().join("run");
    let o = utweak(&["decay", "--model", path.to_str().unwrap(), "--lambda", "1", "--paths", "20", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // constant rate 1: exp(-2t) exactly
    assert!((summary(&out)["metrics"]["rate"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert_eq!(code(&utweak(&["no-such-command"])), 1);
    assert_eq!(code(&utweak(&["check"])), 1);
    assert_eq!(code(&utweak(&["check", "--model", "builtin:nope"])), 1);
    assert_eq!(code(&utweak(&["--help"])), 0);
}

#[test]
fn reproduce_and_examples() {
    let dir = tempfile::tempdir().unwrap();
    let o = utweak(&["reproduce", "circle", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let s = summary(dir.path());
    assert_eq!(s["command"]["subcommand"], "reproduce");
    assert_eq!(s["command"]["name"], "circle");
    assert!(s["metrics"]["divergence_delta_0.01"].as_f64().unwrap() > 1.0);
    let o = utweak(&["examples", "--json"]);
    assert_eq!(code(&o), 0);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["examples"].as_array().unwrap().len(), 8);
}

#[test]
fn ergodic_against_invariant_law() {
    let dir = tempfile::tempdir().unwrap();
    let o = utweak(&[
        "ergodic", "--model", "builtin:ou", "--phi", "x1^2", "--invariant", "--delta", "0.01", "--paths", "100", "--horizon", "50", "--stride", "100", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let m = &summary(dir.path())["metrics"];
    assert!((m["oracle"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}
