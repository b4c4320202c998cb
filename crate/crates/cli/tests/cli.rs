//! Black-box tests of the `dqtrack` binary and its artifact formats.

use dqtrack::harness::{EpisodeLog, ExperimentConfig};
use dqtrack::sim::TrajectoryShape;
use dqtrack_cli::config::{config_digest, load_config, RunManifest};
use dqtrack_cli::csvio;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dqtrack"));
    c.env_remove("DQTRACK_OUT_DIR");
    c
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Quick config: the circle preset cut to 5 s, one seed.
fn quick_config(compensate: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(TrajectoryShape::Circle, compensate);
    cfg.trajectory.duration = 5.0;
    cfg.gp.n_end = 2;
    cfg.seeds = vec![3];
    cfg
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, toml::to_string(cfg).unwrap()).unwrap();
    path
}

#[test]
fn missing_config_exits_2_with_path() {
    let out = bin().args(["run", "--config", "/nonexistent/cfg.toml", "--out", "/tmp"]).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/nonexistent/cfg.toml"), "{}", stderr(&out));
}

#[test]
fn unknown_preset_exits_2() {
    let out = bin().args(["run", "--preset", "moebius-closedloop", "--out", "/tmp"]).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("moebius-closedloop"));
}

#[test]
fn missing_out_dir_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "cfg.toml", &quick_config(true));
    let out = bin().arg("run").arg("--config").arg(&cfg_path).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("DQTRACK_OUT_DIR"));
}

#[test]
fn env_var_supplies_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "cfg.toml", &quick_config(true));
    let out_dir = tmp.path().join("via_env");
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg_path)
        .env("DQTRACK_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn run_artifacts_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(true);
    let cfg_path = write_config(tmp.path(), "cfg.toml", &cfg);
    let out_dir = tmp.path().join("run");
    let out = bin()
        .arg("run")
        .args(["--label", "quick-closedloop"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.seeds, vec![3]);
    assert_eq!(manifest.label, "quick-closedloop");
    assert!(manifest.compensated);
    assert_eq!(manifest.config_digest, config_digest(&load_config(&cfg_path).unwrap()));

    // tick log round-trips through the library reader
    let text = std::fs::read_to_string(out_dir.join("ticks_seed3.csv")).unwrap();
    assert_eq!(csvio::peek_schema(&text).as_deref(), Some(csvio::LOG_SCHEMA_GP));
    let log = csvio::read_tick_log(&text).unwrap();
    assert_eq!(log.seed, 3);
    assert!(log.compensated);
    assert_eq!(log.ticks.len(), 500); // 5 s at 100 Hz
    let rewritten = csvio::write_tick_log(&log, true);
    assert_eq!(rewritten, text);

    // update log reconstructs the final bound
    let utext = std::fs::read_to_string(out_dir.join("updates_seed3.csv")).unwrap();
    let (updates, bound) = csvio::read_updates(&utext).unwrap();
    assert_eq!(updates.len(), 2);
    let b = bound.unwrap();
    assert_eq!(b.m, updates.last().unwrap().m);
    assert!(b.gamma > 0.0 && b.gamma < 1.0);

    // gp-diagnose succeeds on a log with model columns
    let diag = tmp.path().join("diag.csv");
    let out = bin()
        .arg("gp-diagnose")
        .arg(out_dir.join("ticks_seed3.csv"))
        .arg("--out")
        .arg(&diag)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dtext = std::fs::read_to_string(&diag).unwrap();
    assert!(dtext.starts_with("# dqtrack-gp-diagnose-v1"));
    assert_eq!(dtext.lines().count(), 2 + 500);

    // before the first retrain the band is the prior width; learning
    // shrinks it
    let first = log.ticks.first().unwrap();
    let last = log.ticks.last().unwrap();
    assert_eq!(first.gp_generation, 0);
    assert_eq!(first.var_omega, 0.2); // prior variance = signal variance
    assert!(last.gp_generation > 0);
    assert!(last.var_omega < first.var_omega);
}

#[test]
fn json_format_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "cfg.toml", &quick_config(true));
    let out_dir = tmp.path().join("run");
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg_path)
        .args(["--format", "json"])
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log: EpisodeLog = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("episode_seed3.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(log.seed, 3);
    assert!(log.final_bound.is_some());
}

#[test]
fn gp_disabled_run_has_plain_schema_and_diagnose_refuses() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(false);
    cfg.gp.enabled = false;
    let cfg_path = write_config(tmp.path(), "cfg.toml", &cfg);
    let out_dir = tmp.path().join("run");
    let out = bin()
        .arg("run")
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ticks = out_dir.join("ticks_seed3.csv");
    let text = std::fs::read_to_string(&ticks).unwrap();
    assert_eq!(csvio::peek_schema(&text).as_deref(), Some(csvio::LOG_SCHEMA_NOGP));
    assert!(!out_dir.join("updates_seed3.csv").exists());
    // reader round-trip on the plain schema too
    let log = csvio::read_tick_log(&text).unwrap();
    assert_eq!(csvio::write_tick_log(&log, false), text);

    let out = bin().arg("gp-diagnose").arg(&ticks).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no model columns"));
}

fn do_run(cfg_path: &Path, out_dir: &Path, label: &str, no_compensate: bool) {
    let mut c = bin();
    c.arg("run")
        .arg("--config")
        .arg(cfg_path)
        .args(["--label", label])
        .args(["--seed", "3", "--seed", "4"])
        .arg("--out")
        .arg(out_dir);
    if no_compensate {
        c.arg("--no-compensate");
    }
    let out = c.output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn table_pairs_runs_and_emits_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "cfg.toml", &quick_config(true));
    let gp_dir = tmp.path().join("gp");
    let nogp_dir = tmp.path().join("nogp");
    do_run(&cfg_path, &gp_dir, "quick-closedloop", false);
    do_run(&cfg_path, &nogp_dir, "quick-openloop", true);

    let summary = tmp.path().join("summary.csv");
    let out = bin()
        .arg("table")
        .arg(&gp_dir)
        .arg(&nogp_dir)
        .arg("--out")
        .arg(&summary)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("quick"), "{text}");

    let csv = std::fs::read_to_string(&summary).unwrap();
    assert!(csv.starts_with(&format!("# {}", csvio::SUMMARY_SCHEMA)));
    // header + one scenario row
    assert_eq!(csv.lines().count(), 3);
    let row = csv.lines().last().unwrap();
    assert!(row.starts_with("quick,2,2,"), "{row}");
}

#[test]
fn table_rejects_empty_dir_and_unknown_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = bin().arg("table").arg(&empty).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("manifest.json"));

    // tamper the schema line of a valid run
    let cfg_path = write_config(tmp.path(), "cfg.toml", &quick_config(true));
    let run_dir = tmp.path().join("run");
    do_run(&cfg_path, &run_dir, "quick-closedloop", false);
    let ticks = run_dir.join("ticks_seed3.csv");
    let text = std::fs::read_to_string(&ticks).unwrap();
    let tampered = text.replacen(csvio::LOG_SCHEMA_GP, "dqtrack-log-v9", 1);
    std::fs::write(&ticks, tampered).unwrap();
    let out = bin().arg("table").arg(&run_dir).output().unwrap();
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("dqtrack-log-v9") && err.contains(csvio::LOG_SCHEMA_GP), "{err}");
}

#[test]
fn config_digest_ignores_key_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(true);
    let text = toml::to_string(&cfg).unwrap();

    // swap two adjacent scalar lines inside the [trajectory] table
    let lines: Vec<&str> = text.lines().collect();
    let i = lines.iter().position(|l| l.starts_with("amplitude")).unwrap();
    let j = lines.iter().position(|l| l.starts_with("base_height")).unwrap();
    let mut reordered = lines.clone();
    reordered.swap(i, j);
    let text2 = reordered.join("\n");
    assert_ne!(text, text2);

    let p1 = tmp.path().join("a.toml");
    let p2 = tmp.path().join("b.toml");
    std::fs::write(&p1, &text).unwrap();
    std::fs::write(&p2, &text2).unwrap();
    let d1 = config_digest(&load_config(&p1).unwrap());
    let d2 = config_digest(&load_config(&p2).unwrap());
    assert_eq!(d1, d2);

    // a real change does move the digest
    let mut other = cfg.clone();
    other.control_dt = 0.02;
    assert_ne!(config_digest(&other), d1);
}

#[test]
fn presets_listed() {
    let out = bin().arg("presets").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    for name in ["lemniscate-closedloop", "circle-openloop", "spiral-closedloop"] {
        assert!(text.contains(name));
    }
}
