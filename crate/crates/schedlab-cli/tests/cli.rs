//! End-to-end checks of the command-line surface: exit codes, outputs,
//! and override round-trips.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_schedlab"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("schedlab-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// A config small enough that every verb finishes in well under a second.
fn write_quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("quick.cfg");
    fs::write(
        &path,
        "workload.kind = tpcc\n\
         workload.arrival_rate_tps = 8000\n\
         sim.queues = 4\n\
         sim.k_bits = 256\n\
         harness.warmup_secs = 0.3\n\
         harness.measure_secs = 0.4\n\
         harness.round_secs = 0.3\n\
         harness.repeats = 1\n\
         harness.train_sample = 2000\n\
         seed = 7\n",
    )
    .unwrap();
    path
}

fn run_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_writes_report_and_echoes_overrides() {
    let dir = tmp_dir("run");
    let cfg = write_quick_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--policy", "balanced_kmeans", "--seed", "42", "--output"])
        .arg(&out_dir)
        .output()
        .unwrap();
    let stdout = run_ok(&out);
    assert!(stdout.contains("balanced_kmeans"), "{stdout}");
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("workload,policy,seed,"));
    assert_eq!(csv.lines().count(), 2);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    // Override round-trip: the echoed config block carries the override
    // values verbatim.
    assert_eq!(json["config"]["seed"], "42");
    assert_eq!(json["config"]["policy"], "balanced_kmeans");
    assert_eq!(json["policy"], "balanced_kmeans");
}

#[test]
fn run_with_trace_supports_audit() {
    let dir = tmp_dir("trace");
    let cfg = write_quick_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--trace", "--output"])
        .arg(&out_dir)
        .output()
        .unwrap();
    run_ok(&out);
    assert!(out_dir.join("decisions.csv").exists());
    let trace = out_dir.join("events.csv.gz");
    assert!(trace.exists());
    let audit = bin().args(["audit", "--trace"]).arg(&trace).output().unwrap();
    let stdout = run_ok(&audit);
    assert!(stdout.contains("audit: ok"), "{stdout}");
}

#[test]
fn sweep_writes_one_row_per_rate() {
    let dir = tmp_dir("sweep");
    let cfg = write_quick_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--rates", "2000,4000", "--output"])
        .arg(&out_dir)
        .output()
        .unwrap();
    run_ok(&out);
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("workload,policy,rate_tps,"));
}

#[test]
fn rounds_reports_baseline_row() {
    let dir = tmp_dir("rounds");
    let cfg = write_quick_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["rounds", "--config"])
        .arg(&cfg)
        .args(["--policy", "balanced_kmeans", "--rounds", "2", "--output"])
        .arg(&out_dir)
        .output()
        .unwrap();
    let stdout = run_ok(&out);
    assert!(stdout.contains("round  0"), "{stdout}");
    let csv = fs::read_to_string(out_dir.join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4); // header + rounds 0..2
}

#[test]
fn train_then_inspect_model() {
    let dir = tmp_dir("train");
    let cfg = write_quick_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--output")
        .arg(&out_dir)
        .output()
        .unwrap();
    let stdout = run_ok(&out);
    assert!(stdout.contains("4-fold accuracy"), "{stdout}");
    let model = out_dir.join("abort.model");
    assert!(model.exists());
    assert!(out_dir.join("abort.centroids").exists());
    assert!(out_dir.join("warmup.log").exists());

    let inspect = bin()
        .args(["inspect-model", "--model"])
        .arg(&model)
        .args(["--top", "5", "--dict"])
        .arg(out_dir.join("features.dict"))
        .output()
        .unwrap();
    let stdout = run_ok(&inspect);
    assert!(stdout.contains("k_bits 256"), "{stdout}");
    assert!(stdout.contains("V3") || stdout.contains("V1") || stdout.contains("V2"));

    // Truncated model file: clean error, exit 2.
    let broken = dir.join("broken.model");
    fs::write(&broken, "schedlab-abort-model v1\nk_bits 256\n").unwrap();
    let bad = bin().args(["inspect-model", "--model"]).arg(&broken).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn distributions_exports_matrix() {
    let dir = tmp_dir("dist");
    let cfg = write_quick_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["distributions", "--config"])
        .arg(&cfg)
        .args(["--policy", "random", "--output"])
        .arg(&out_dir)
        .output()
        .unwrap();
    let stdout = run_ok(&out);
    assert!(stdout.contains("partition quality"), "{stdout}");
    let csv = fs::read_to_string(out_dir.join("distribution.csv")).unwrap();
    assert!(csv.starts_with("key,q0,q1,q2,q3"));
}

#[test]
fn config_errors_exit_one() {
    let dir = tmp_dir("errors");
    let cfg = write_quick_config(&dir);

    // Unknown policy (DFS is out of scope).
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--policy", "dfs", "--output"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown policy"));

    // Missing --config flag: usage text, exit 1.
    let out = bin().args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Nonexistent config path.
    let out = bin()
        .args(["run", "--config", "/nonexistent/nope.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Invalid override key is named.
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--set", "bogus.key=1", "--output"])
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus.key"));
}

#[test]
fn help_exits_zero_for_every_verb() {
    for verb in ["run", "sweep", "rounds", "train", "inspect-model", "audit", "distributions"] {
        let out = bin().args([verb, "--help"]).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{verb} --help");
    }
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
