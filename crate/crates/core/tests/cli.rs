use std::path::Path;
use std::process::{Command, Output};

use fas_portsel::bench::parse_csv;
use fas_portsel::channel::read_fchan;

const ARRAY: &str = r#""array": {"n_x": 3, "n_y": 3, "w_x": 2.0, "w_y": 2.0, "carrier_hz": 2e9}"#;
const SCENARIO: &str = r#""scenario": {"users_k": 2, "selected_n": 3, "tx_power_dbm": 20,
    "noise_psd_dbm_hz": -174, "bandwidth_hz": 1e7, "distance_m": [200, 200],
    "fading": {"kind": "rayleigh"}, "master_seed": 4}"#;

fn fasbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fasbench"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_config(extra: &str) -> String {
    format!(
        r#"{{ {ARRAY}, {SCENARIO},
        "algorithms": [{{"name": "exhaustive"}}, {{"name": "random"}}, {{"name": "autoport"}},
                       {{"name": "basic_ga", "label": "ga_short", "config": {{"iterations_i": 5}}}}],
        "realizations": 4, "normalization": "vs_exhaustive", "seed": 2 {extra} }}"#
    )
}

#[test]
fn generated_channels_feed_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(
        d,
        "run.json",
        &run_config(r#", "sweep": {"parameter": "tx_power_dbm", "values": [0, 30]}"#),
    );
    let chan = d.join("c.fchan").to_string_lossy().into_owned();
    let out = fasbench(&["channels", "generate", "--config", &cfg, "--out", &chan]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_fchan(Path::new(&chan)).unwrap().len(), 4);

    let from_file = d.join("a.csv").to_string_lossy().into_owned();
    let generated = d.join("b.csv").to_string_lossy().into_owned();
    let out = fasbench(&[
        "--no-timing",
        "run",
        "--config",
        &cfg,
        "--out",
        &from_file,
        "--channels",
        &chan,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ga_short"));
    assert!(fasbench(&["--no-timing", "run", "--config", &cfg, "--out", &generated])
        .status
        .success());
    assert_eq!(std::fs::read(&from_file).unwrap(), std::fs::read(&generated).unwrap());

    let rows = parse_csv(&std::fs::read_to_string(&from_file).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows
        .iter()
        .all(|r| r.normalized.unwrap() <= 1.0 + 1e-9 && r.wall_time_s == 0.0));
    assert!(rows
        .iter()
        .filter(|r| r.algorithm == "exhaustive")
        .all(|r| r.normalized == Some(1.0)));
    assert!(d.join("a.realizations.csv").exists());

    let report = fasbench(&["report", "--in", &from_file, "--kind", "table"]);
    assert!(report.status.success());
    assert_eq!(String::from_utf8_lossy(&report.stdout).lines().count(), 9);
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(d, "run.json", &run_config(""));
    let paths: Vec<String> = ["s1.csv", "s2.csv"]
        .iter()
        .map(|n| d.join(n).to_string_lossy().into_owned())
        .collect();
    for (seed, p) in ["1", "2"].iter().zip(&paths) {
        assert!(
            fasbench(&["--seed", seed, "--no-timing", "run", "--config", &cfg, "--out", p])
                .status
                .success()
        );
    }
    assert_ne!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
}

#[test]
fn oversized_exhaustive_is_refused_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "big.json",
        r#"{"array": {"n_x": 8, "n_y": 8, "w_x": 2.0, "w_y": 2.0, "carrier_hz": 2e9},
            "scenario": {"users_k": 4, "selected_n": 8, "tx_power_dbm": 20, "noise_psd_dbm_hz": -174,
                         "bandwidth_hz": 1e7, "distance_m": [200, 200, 200, 200],
                         "fading": {"kind": "rayleigh"}, "master_seed": 0},
            "algorithms": [{"name": "autoport"}], "realizations": 2,
            "normalization": "vs_exhaustive", "seed": 0}"#,
    );
    let out_path = dir.path().join("big.csv");
    let out = fasbench(&["run", "--config", &cfg, "--out", &out_path.to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_path.exists());
}

#[test]
fn bad_invocations_exit_with_usage_or_config_errors() {
    assert_eq!(fasbench(&["run"]).status.code(), Some(2));
    assert_eq!(
        fasbench(&["run", "--config", "/nonexistent.json", "--out", "/tmp/x.csv"])
            .status
            .code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"array": {"n_x": 3}, "unknown": 1}"#);
    assert_eq!(
        fasbench(&["run", "--config", &cfg, "--out", "/tmp/x.csv"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn mock_evolution_writes_a_log_and_a_convergence_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write(
        d,
        "evolve.json",
        &format!(
            r#"{{ {ARRAY}, {SCENARIO},
            "evolution": {{"population_m": 3, "generations_g": 2, "eval_budget_f": 8, "batch_b": 2,
                          "task": "crossover_op", "seed": 4}},
            "providers": {{"scripted": {{"kind": "mock", "schedule": ["crossover_frequency"]}}}} }}"#
        ),
    );
    let log = d.join("run.jsonl").to_string_lossy().into_owned();
    let out = fasbench(&[
        "--no-timing",
        "evolve",
        "--config",
        &cfg,
        "--provider",
        "scripted",
        "--out",
        &log,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["evaluations"], 8);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 8);

    let curve = fasbench(&["report", "--in", &log, "--kind", "convergence"]);
    let text = String::from_utf8(curve.stdout).unwrap();
    assert!(text.starts_with("evals,best_fitness\n"));
    assert_eq!(text.lines().count(), 9);

    let missing = fasbench(&["evolve", "--config", &cfg, "--provider", "remote", "--out", &log]);
    assert_eq!(missing.status.code(), Some(2));
}
