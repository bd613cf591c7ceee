use std::path::Path;
use std::process::Command;

fn opsteer(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_opsteer")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const ANALYTIC: &str = r#"{
    "version": 1,
    "scenario": {"kind": "random", "n": 6, "seed": 1},
    "target": 0.5,
    "x0": {"kind": "random", "seed": 2},
    "controller": {"kind": "known_analytic", "eps": 0.05},
    "horizon": 100,
    "budget": 40.0
}"#;

#[test]
fn simulate_writes_record_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", ANALYTIC);
    let out = dir.path().join("out");
    let res = opsteer(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("record.json")).unwrap()).unwrap();
    let traj = record["trajectory_file"].as_str().unwrap();
    let text = std::fs::read_to_string(out.join(traj)).unwrap();
    assert!(text.starts_with("t,x_1,"));
    assert!(record["final_err_inf"].as_f64().unwrap() <= 0.05);
}

#[test]
fn feasibility_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", ANALYTIC);
    let out = dir.path().join("out");
    let res = opsteer(&["feasibility", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("feasibility.json")).unwrap()).unwrap();
    assert_eq!(rep["result"]["feasible"], true);
    assert_eq!(rep["verification"]["meets_eps"], true);
}

#[test]
fn online_and_estimate_emit_traces() {
    let dir = tempfile::tempdir().unwrap();
    let online = write(
        dir.path(),
        "online.json",
        &ANALYTIC.replace(r#"{"kind": "known_analytic", "eps": 0.05}"#, r#"{"kind": "adaptive_online"}"#),
    );
    let out = dir.path().join("online");
    assert!(opsteer(&["online", "--config", &online, "--out", out.to_str().unwrap()]).status.success());
    let names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(names.iter().any(|n| n.ends_with(".cycles.csv")));
    assert!(names.iter().any(|n| n.ends_with(".estimator.csv")));

    let probe = write(
        dir.path(),
        "probe.json",
        &ANALYTIC.replace(r#"{"kind": "known_analytic", "eps": 0.05}"#, r#"{"kind": "pe_probe", "alpha": 0.01}"#),
    );
    let out = dir.path().join("probe");
    assert!(opsteer(&["estimate", "--config", &probe, "--out", out.to_str().unwrap()]).status.success());
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", ANALYTIC);
    let read = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        assert!(opsteer(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", seed]).status.success());
        std::fs::read_to_string(out.join("record.json")).unwrap()
    };
    assert_eq!(read("5", "a"), read("5", "b"));
    assert_ne!(read("5", "c"), read("6", "d"));
}

#[test]
fn sweep_subcommand_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.json",
        r#"{"version": 1, "parallelism": 4,
            "base": {"version": 1, "scenario": {"kind": "random", "n": 5, "seed": 3},
                     "target": 0.5, "x0": {"kind": "random", "seed": 4},
                     "controller": {"kind": "known_analytic"}, "horizon": 80},
            "controllers": [{"kind": "known_analytic"}, {"kind": "gradient_baseline"}],
            "budgets": [10, 20, 30]}"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(opsteer(&["sweep", "--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(opsteer(&["sweep", "--config", &cfg, "--out", b.to_str().unwrap(), "--parallelism", "1"]).status.success());
    let csv_a = std::fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("sweep.csv")).unwrap());
    assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 7);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let missing = opsteer(&["simulate", "--config", "/nonexistent/cfg.json", "--out", out]);
    assert_eq!(missing.status.code(), Some(1));

    let bad = write(dir.path(), "bad.json", &ANALYTIC.replace("\"target\": 0.5", "\"target\": 2.0"));
    let res = opsteer(&["simulate", "--config", &bad, "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("target"));

    let wrong = write(dir.path(), "wrong.json", ANALYTIC);
    assert_eq!(opsteer(&["online", "--config", &wrong, "--out", out]).status.code(), Some(1));

    // Λ = I makes the mixing matrix singular.
    let singular = write(
        dir.path(),
        "singular.json",
        r#"{"version": 1,
            "scenario": {"kind": "inline", "adjacency": [[0, 1], [1, 0]], "lambda": [1, 1], "h": [0.5, 0.5]},
            "target": 0.5, "x0": {"kind": "explicit", "values": [0.1, 0.9]},
            "controller": {"kind": "known_analytic", "a": 0.5, "b": 0.9}, "horizon": 10}"#,
    );
    assert_ne!(opsteer(&["simulate", "--config", &singular, "--out", out]).status.code(), Some(0));
}
