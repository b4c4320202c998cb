//! `dqtrack`: run pose-tracking episodes, tabulate results and inspect the
//! learned disturbance models.
//!
//! Exit codes: 0 success, 2 configuration problem, 3 runtime failure.

use clap::{Parser, Subcommand};
use dqtrack_cli::config::{
    config_digest, load_config, preset, preset_names, RunManifest, ARTIFACT_VERSION,
};
use dqtrack_cli::csvio;
use dqtrack::harness::{run_episode, summary_table, EpisodeLog, ExperimentConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "dqtrack", version, about = "Dual-quaternion tracking control testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (one or more seeds) and write its artifacts.
    Run {
        /// TOML experiment description. Mutually exclusive with --preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in scenario, e.g. lemniscate-closedloop.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Override the seed list from the config; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output directory. Falls back to $DQTRACK_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train the models but never inject their means.
        #[arg(long)]
        no_compensate: bool,
        /// Episodes run in parallel.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Artifact format for episode logs.
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
        /// Label recorded in the manifest.
        #[arg(long)]
        label: Option<String>,
    },
    /// Aggregate run directories into a comparison table.
    Table {
        /// Run directories produced by `dqtrack run`.
        dirs: Vec<PathBuf>,
        /// Also write the table as CSV to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the model-vs-truth trace from a tick log.
    GpDiagnose {
        /// A ticks CSV written by `dqtrack run`.
        log: PathBuf,
        /// Write the diagnosis CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, preset, seeds, out, no_compensate, workers, format, label } => {
            cmd_run(config, preset, seeds, out, no_compensate, workers, &format, label)
        }
        Command::Table { dirs, out } => cmd_table(&dirs, out.as_deref()),
        Command::GpDiagnose { log, out } => cmd_gp_diagnose(&log, out.as_deref()),
        Command::Presets => {
            for p in preset_names() {
                println!("{p}");
            }
            ExitCode::SUCCESS
        }
    }
}

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("dqtrack: {msg}");
    ExitCode::from(code)
}

/// Write atomically: a temp file in the same directory, then rename, so a
/// crash never leaves a half-written artifact behind.
fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config_path: Option<PathBuf>,
    preset_name: Option<String>,
    seed_override: Vec<u64>,
    out: Option<PathBuf>,
    no_compensate: bool,
    workers: usize,
    format: &str,
    label: Option<String>,
) -> ExitCode {
    let (mut cfg, default_label) = match (config_path, preset_name) {
        (Some(path), None) => match load_config(&path) {
            Ok(c) => {
                let stem =
                    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (c, stem)
            }
            Err(e) => return fail(EXIT_CONFIG, &e),
        },
        (None, Some(name)) => match preset(&name) {
            Some(pair) => pair,
            None => {
                return fail(
                    EXIT_CONFIG,
                    &format!("unknown preset {name:?}; available: {}", preset_names().join(", ")),
                )
            }
        },
        _ => return fail(EXIT_CONFIG, "exactly one of --config or --preset is required"),
    };
    let label = label.unwrap_or(default_label);
    if !seed_override.is_empty() {
        cfg.seeds = seed_override;
    }
    if no_compensate {
        cfg.gp.compensate = false;
    }
    if workers == 0 {
        return fail(EXIT_CONFIG, "--workers must be >= 1");
    }
    if let Err(e) = cfg.validate() {
        return fail(EXIT_CONFIG, &e.to_string());
    }
    let out_dir = match out.or_else(|| std::env::var_os("DQTRACK_OUT_DIR").map(PathBuf::from)) {
        Some(d) => d,
        None => return fail(EXIT_CONFIG, "no output directory: pass --out or set DQTRACK_OUT_DIR"),
    };
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return fail(EXIT_RUNTIME, &format!("cannot create {}: {e}", out_dir.display()));
    }

    let started = std::time::Instant::now();
    let logs = match run_seeds(&cfg, workers) {
        Ok(l) => l,
        Err(e) => return fail(EXIT_RUNTIME, &e),
    };

    let mut outputs = Vec::new();
    for log in &logs {
        let res = match format {
            "json" => {
                let name = format!("episode_seed{}.json", log.seed);
                let text = match serde_json::to_string_pretty(log) {
                    Ok(t) => t,
                    Err(e) => return fail(EXIT_RUNTIME, &format!("serialization failed: {e}")),
                };
                outputs.push(name.clone());
                write_atomic(&out_dir.join(name), &text)
            }
            _ => {
                let ticks_name = format!("ticks_seed{}.csv", log.seed);
                let r = write_atomic(
                    &out_dir.join(&ticks_name),
                    &csvio::write_tick_log(log, cfg.gp.enabled),
                );
                outputs.push(ticks_name);
                if r.is_ok() && cfg.gp.enabled {
                    let upd_name = format!("updates_seed{}.csv", log.seed);
                    let r2 = write_atomic(&out_dir.join(&upd_name), &csvio::write_updates(log));
                    outputs.push(upd_name);
                    r2
                } else {
                    r
                }
            }
        };
        if let Err(e) = res {
            return fail(EXIT_RUNTIME, &format!("cannot write artifact: {e}"));
        }
    }

    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        label,
        config_digest: config_digest(&cfg),
        compensated: cfg.gp.compensate,
        seeds: cfg.seeds.clone(),
        outputs,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest_text = match serde_json::to_string_pretty(&manifest) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_RUNTIME, &format!("serialization failed: {e}")),
    };
    if let Err(e) = write_atomic(&out_dir.join("manifest.json"), &manifest_text) {
        return fail(EXIT_RUNTIME, &format!("cannot write manifest: {e}"));
    }
    println!(
        "{} episode(s) -> {} ({:.1} s)",
        logs.len(),
        out_dir.display(),
        manifest.wall_clock_seconds
    );
    ExitCode::SUCCESS
}

/// Run all configured seeds on a small worker pool, preserving seed order
/// in the result.
fn run_seeds(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<EpisodeLog>, String> {
    let seeds = &cfg.seeds;
    let slots: Mutex<Vec<Option<Result<EpisodeLog, String>>>> =
        Mutex::new(vec![None; seeds.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let res = run_episode(cfg, seeds[i]).map_err(|e| e.to_string());
                slots.lock().unwrap()[i] = Some(res);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("worker pool covered every seed"))
        .collect()
}

fn read_manifest(dir: &Path) -> Result<RunManifest, String> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("cannot parse {}: {e}", path.display()))
}

fn cmd_table(dirs: &[PathBuf], out: Option<&Path>) -> ExitCode {
    if dirs.is_empty() {
        return fail(EXIT_CONFIG, "no run directories given");
    }
    // cells keyed by manifest label; each side collects episode logs
    let mut cells: Vec<(String, Vec<EpisodeLog>, Vec<EpisodeLog>)> = Vec::new();
    let mut seen_schemas: Vec<String> = Vec::new();
    for dir in dirs {
        let manifest = match read_manifest(dir) {
            Ok(m) => m,
            Err(e) => return fail(EXIT_CONFIG, &e),
        };
        let mut logs = Vec::new();
        for name in &manifest.outputs {
            if !name.starts_with("ticks_") || !name.ends_with(".csv") {
                continue;
            }
            let path = dir.join(name);
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, &format!("cannot read {}: {e}", path.display())),
            };
            match csvio::peek_schema(&text) {
                Some(s) => {
                    if !seen_schemas.contains(&s) {
                        seen_schemas.push(s.clone());
                    }
                    if s != csvio::LOG_SCHEMA_GP && s != csvio::LOG_SCHEMA_NOGP {
                        return fail(
                            EXIT_CONFIG,
                            &format!(
                                "mixed or unknown schemas: expected {} or {}, {} has {s:?}",
                                csvio::LOG_SCHEMA_GP,
                                csvio::LOG_SCHEMA_NOGP,
                                path.display()
                            ),
                        );
                    }
                }
                None => return fail(EXIT_CONFIG, &format!("{} is empty", path.display())),
            }
            match csvio::read_tick_log(&text) {
                Ok(l) => logs.push(l),
                Err(e) => return fail(EXIT_CONFIG, &format!("{}: {e}", path.display())),
            }
        }
        if logs.is_empty() {
            return fail(EXIT_CONFIG, &format!("{} contains no tick logs", dir.display()));
        }
        // strip the compensation suffix so closed/open-loop runs of the
        // same scenario land in the same row
        let base = manifest
            .label
            .trim_end_matches("-closedloop")
            .trim_end_matches("-openloop")
            .to_string();
        let cell = match cells.iter_mut().find(|(l, _, _)| *l == base) {
            Some(c) => c,
            None => {
                cells.push((base, Vec::new(), Vec::new()));
                cells.last_mut().unwrap()
            }
        };
        if manifest.compensated {
            cell.1.extend(logs);
        } else {
            cell.2.extend(logs);
        }
    }
    for (label, gp, nogp) in &cells {
        if gp.is_empty() || nogp.is_empty() {
            return fail(
                EXIT_CONFIG,
                &format!(
                    "scenario {label:?} needs both compensated and uncompensated runs \
                     ({} compensated, {} uncompensated found)",
                    gp.len(),
                    nogp.len()
                ),
            );
        }
    }
    let rows = summary_table(&cells);
    print!("{}", csvio::render_summary_text(&rows));
    if let Some(path) = out {
        if let Err(e) = write_atomic(path, &csvio::write_summary_csv(&rows)) {
            return fail(EXIT_RUNTIME, &format!("cannot write {}: {e}", path.display()));
        }
    }
    ExitCode::SUCCESS
}

fn cmd_gp_diagnose(log_path: &Path, out: Option<&Path>) -> ExitCode {
    let text = match std::fs::read_to_string(log_path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, &format!("cannot read {}: {e}", log_path.display())),
    };
    match csvio::peek_schema(&text).as_deref() {
        Some(csvio::LOG_SCHEMA_GP) => {}
        Some(csvio::LOG_SCHEMA_NOGP) => {
            return fail(
                EXIT_CONFIG,
                &format!("{} has no model columns (schema {})", log_path.display(), csvio::LOG_SCHEMA_NOGP),
            )
        }
        Some(other) => {
            return fail(EXIT_CONFIG, &format!("{} has unexpected schema {other:?}", log_path.display()))
        }
        None => return fail(EXIT_CONFIG, &format!("{} is empty", log_path.display())),
    }
    let log = match csvio::read_tick_log(&text) {
        Ok(l) => l,
        Err(e) => return fail(EXIT_CONFIG, &format!("{}: {e}", log_path.display())),
    };
    let mut body = String::new();
    use std::fmt::Write as _;
    writeln!(body, "# dqtrack-gp-diagnose-v1").unwrap();
    writeln!(
        body,
        "t,rho_omega_true_0,rho_omega_true_1,rho_omega_true_2,\
         mu_omega_0,mu_omega_1,mu_omega_2,sd2_omega,rho_bound_omega,\
         rho_v_true_0,rho_v_true_1,rho_v_true_2,mu_v_0,mu_v_1,mu_v_2,sd2_v,rho_bound_v,\
         gp_generation"
    )
    .unwrap();
    for r in &log.ticks {
        let sd2o = 2.0 * r.var_omega.max(0.0).sqrt();
        let sd2v = 2.0 * r.var_v.max(0.0).sqrt();
        writeln!(
            body,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},\
             {:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.t,
            r.rho_omega_true[0],
            r.rho_omega_true[1],
            r.rho_omega_true[2],
            r.mu_omega[0],
            r.mu_omega[1],
            r.mu_omega[2],
            sd2o,
            r.rho_bound_omega,
            r.rho_v_true[0],
            r.rho_v_true[1],
            r.rho_v_true[2],
            r.mu_v[0],
            r.mu_v[1],
            r.mu_v[2],
            sd2v,
            r.rho_bound_v,
            r.gp_generation,
        )
        .unwrap();
    }
    match out {
        Some(path) => {
            if let Err(e) = write_atomic(path, &body) {
                return fail(EXIT_RUNTIME, &format!("cannot write {}: {e}", path.display()));
            }
        }
        None => print!("{body}"),
    }
    ExitCode::SUCCESS
}
