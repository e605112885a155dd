use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use calcheck::pipeline::{sha256_hex, RunReport};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_calcheck"));
    c.env_remove("CALCHECK_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate_weather(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let mut args = vec!["simulate", "weather", "--seed", "3", "--out", p(dir)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("records.jsonl")
}

#[test]
fn calibrated_weather_is_accepted_and_biased_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let good = simulate_weather(&tmp.path().join("good"), &[]);
    let o = run(&["check", p(&good), "--out", p(&tmp.path().join("rep"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = RunReport::from_json(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    assert!(!report.rejects());
    assert_eq!(report.provenance.input_digest, sha256_hex(&std::fs::read(&good).unwrap()));
    assert!(tmp.path().join("rep/report.json").exists());
    assert!(tmp.path().join("rep/coverage.csv").exists());

    let bad = simulate_weather(&tmp.path().join("bad"), &["--bias", "1.0"]);
    assert_eq!(code(&run(&["check", p(&bad)])), 1);
}

#[test]
fn config_errors_exit_2_and_data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let good = simulate_weather(tmp.path(), &[]);
    let o = run(&["check", p(&good), "--testing", "nope"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    assert_eq!(code(&run(&["check", p(&good), "--alpha", "1.5"])), 2);
    assert_eq!(code(&run(&["check", p(&good), "--model", "particles"])), 3);
    assert_eq!(code(&run(&["check", p(&good), "--metric", "folded_ks", "--testing", "ks", "--tolerance", "0.02"])), 2);

    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"mu\":0,\"sigma\":1,\"y\":0}\n{\"mu\":0,\"sigma\":\"x\",\"y\":0}\n").unwrap();
    let o = run(&["check", p(&bad)]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2") && err.contains("`sigma`"), "{err}");

    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(&run(&["check", p(&empty)])), 3);
}

#[test]
fn config_file_is_merged_with_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let good = simulate_weather(tmp.path(), &[]);
    let cfg = tmp.path().join("recipe.toml");
    std::fs::write(&cfg, "metric = \"folded_ks\"\ntesting = \"ks\"\nalpha = 0.1\n").unwrap();
    let o = run(&["check", p(&good), "--config", p(&cfg), "--alpha", "0.01"]);
    let report = RunReport::from_json(std::str::from_utf8(&o.stdout).unwrap()).unwrap();
    assert_eq!(report.provenance.config.metric, "folded_ks");
    assert_eq!(report.report.alpha, 0.01);
    std::fs::write(&cfg, "metric = \"coverage\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&run(&["check", p(&good), "--config", p(&cfg)])), 2);
}

#[test]
fn monitor_streams_from_stdin_and_alarms() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = simulate_weather(tmp.path(), &["--bias", "1.0"]);
    let mut child = bin()
        .args(["monitor", "-", "--lambda", "0.9"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&std::fs::read(&bad).unwrap()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 1);
    let out = String::from_utf8(o.stdout).unwrap();
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("t,e_value,log_e,threshold,alarmed"));
    assert_eq!(lines.count(), 365);
    assert!(String::from_utf8_lossy(&o.stderr).contains("first crossing"));
}

#[test]
fn interrupted_monitor_keeps_partial_state() {
    let tmp = tempfile::tempdir().unwrap();
    let f = tmp.path().join("s.jsonl");
    std::fs::write(&f, "{\"mu\":0,\"sigma\":1,\"y\":0.1}\n{\"mu\":0,\"sigma\":1,\"y\":0.2}\nnot json\n").unwrap();
    let out = tmp.path().join("rep");
    let o = run(&["monitor", p(&f), "--out", p(&out)]);
    assert_eq!(code(&o), 3);
    let report = RunReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let m = report.monitor.unwrap();
    assert!(!m.complete);
    assert_eq!(m.final_state.t, 2);
    assert!(m.interruption.unwrap().contains("line 3"));
}

#[test]
fn seeds_make_runs_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run(&["simulate", "robot", "--seed", "5", "--out", p(&a)])), 0);
    let o = bin().args(["simulate", "robot", "--out", p(&b)]).env("CALCHECK_SEED", "5").output().unwrap();
    assert_eq!(code(&o), 0);
    let ra = std::fs::read(a.join("records.jsonl")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("records.jsonl")).unwrap());
    assert!(a.join("track.csv").exists());

    let rec = a.join("records.jsonl");
    let c1 = run(&["check", p(&rec), "--metric", "halfplane", "--seed", "9"]);
    let c2 = run(&["check", p(&rec), "--metric", "halfplane", "--seed", "9"]);
    assert_eq!(c1.stdout, c2.stdout);
}

#[test]
fn sweep_writes_summary_and_envelope() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("robot.toml");
    std::fs::write(&cfg, "n_particles = 100\nn_steps = 40\n").unwrap();
    let out = tmp.path().join("sweep");
    let o = run(&[
        "simulate",
        "drift_sweep",
        "--sim-config",
        p(&cfg),
        "--multipliers",
        "0,4",
        "--n-seeds",
        "3",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let env = std::fs::read_to_string(out.join("envelope.csv")).unwrap();
    assert_eq!(env.lines().count(), 1 + 2 * 40);
    assert!(out.join("sweep.json").exists());
}

#[test]
fn report_rerenders_saved_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let good = simulate_weather(tmp.path(), &[]);
    let rep = tmp.path().join("rep");
    run(&["check", p(&good), "--bins", "3", "--out", p(&rep)]);
    let csv = tmp.path().join("csv");
    let o = run(&["report", p(&rep.join("report.json")), "--out", p(&csv)]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("variance_binned"), "{text}");
    assert!(csv.join("bin2_coverage.csv").exists());
    std::fs::write(tmp.path().join("junk.json"), "{}").unwrap();
    assert_eq!(code(&run(&["report", p(&tmp.path().join("junk.json"))])), 3);
}
