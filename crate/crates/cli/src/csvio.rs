//! CSV artifacts: per-tick logs, per-retraining logs and summary tables.
//!
//! Every file starts with a `# <schema>` line so downstream commands can
//! refuse mixed inputs. Floats are written as full-precision scientific
//! notation so a round trip through the reader is bit-exact.

use dqtrack::control::UltimateBound;
use dqtrack::harness::{EpisodeLog, SummaryRow, TickRow, UpdateRow};
use std::fmt::Write as _;

pub const LOG_SCHEMA_GP: &str = "dqtrack-log-v1";
pub const LOG_SCHEMA_NOGP: &str = "dqtrack-log-v1-nogp";
pub const UPDATES_SCHEMA: &str = "dqtrack-updates-v1";
pub const SUMMARY_SCHEMA: &str = "dqtrack-summary-v1";

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_arr(row: &mut Vec<String>, a: &[f64]) {
    for &x in a {
        row.push(f(x));
    }
}

fn arr_cols(name: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{name}_{i}")).collect()
}

/// Column layout shared by writer and reader. The no-GP variant drops the
/// posterior columns entirely instead of writing sentinels.
fn tick_columns(with_gp: bool) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend(arr_cols("q_true", 8));
    cols.extend(arr_cols("q_d", 8));
    cols.extend(arr_cols("meas_att", 4));
    cols.extend(arr_cols("meas_pos", 3));
    cols.extend(arr_cols("dq_vec", 3));
    cols.push("dq0".into());
    cols.extend(arr_cols("dp", 3));
    cols.push("v_lyap".into());
    cols.extend(arr_cols("cmd_omega", 3));
    cols.extend(arr_cols("cmd_v", 3));
    cols.extend(arr_cols("rho_omega_true", 3));
    cols.extend(arr_cols("rho_v_true", 3));
    if with_gp {
        cols.extend(arr_cols("mu_omega", 3));
        cols.extend(arr_cols("mu_v", 3));
        cols.push("var_omega".into());
        cols.push("var_v".into());
        cols.push("rho_bound_omega".into());
        cols.push("rho_bound_v".into());
        cols.push("gp_generation".into());
    }
    cols
}

pub fn log_schema(with_gp: bool) -> &'static str {
    if with_gp {
        LOG_SCHEMA_GP
    } else {
        LOG_SCHEMA_NOGP
    }
}

pub fn write_tick_log(log: &EpisodeLog, with_gp: bool) -> String {
    let mut out = String::new();
    writeln!(out, "# {}", log_schema(with_gp)).unwrap();
    writeln!(out, "# seed={} compensated={}", log.seed, log.compensated).unwrap();
    writeln!(out, "{}", tick_columns(with_gp).join(",")).unwrap();
    for r in &log.ticks {
        let mut row: Vec<String> = vec![f(r.t)];
        push_arr(&mut row, &r.q_true);
        push_arr(&mut row, &r.q_d);
        push_arr(&mut row, &r.meas_att);
        push_arr(&mut row, &r.meas_pos);
        push_arr(&mut row, &r.dq_vec);
        row.push(f(r.dq0));
        push_arr(&mut row, &r.dp);
        row.push(f(r.v_lyap));
        push_arr(&mut row, &r.cmd_omega);
        push_arr(&mut row, &r.cmd_v);
        push_arr(&mut row, &r.rho_omega_true);
        push_arr(&mut row, &r.rho_v_true);
        if with_gp {
            push_arr(&mut row, &r.mu_omega);
            push_arr(&mut row, &r.mu_v);
            row.push(f(r.var_omega));
            row.push(f(r.var_v));
            row.push(f(r.rho_bound_omega));
            row.push(f(r.rho_bound_v));
            row.push(r.gp_generation.to_string());
        }
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

pub fn write_updates(log: &EpisodeLog) -> String {
    let mut out = String::new();
    writeln!(out, "# {UPDATES_SCHEMA}").unwrap();
    writeln!(out, "# seed={} compensated={}", log.seed, log.compensated).unwrap();
    let mut cols = vec!["n".to_string(), "t".into(), "n_samples".into()];
    cols.extend(arr_cols("info_gain_omega", 3));
    cols.extend(arr_cols("beta_omega", 3));
    cols.extend(arr_cols("info_gain_v", 3));
    cols.extend(arr_cols("beta_v", 3));
    for c in ["c_omega", "c_v", "eps0", "m", "gamma"] {
        cols.push(c.into());
    }
    writeln!(out, "{}", cols.join(",")).unwrap();
    let gamma = log.final_bound.as_ref().map(|b| b.gamma).unwrap_or(f64::NAN);
    for u in &log.updates {
        let mut row = vec![u.n.to_string(), f(u.t), u.n_samples.to_string()];
        push_arr(&mut row, &u.info_gain_omega);
        push_arr(&mut row, &u.beta_omega);
        push_arr(&mut row, &u.info_gain_v);
        push_arr(&mut row, &u.beta_v);
        for x in [u.c_omega, u.c_v, u.eps0, u.m, gamma] {
            row.push(f(x));
        }
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

pub struct ParsedHeader {
    pub schema: String,
    pub seed: u64,
    pub compensated: bool,
}

/// Split a file into its schema line, metadata line and data lines, and
/// check the column header against the expected layout.
fn parse_header<'a>(
    text: &'a str,
    expect_cols: Option<&[String]>,
) -> Result<(ParsedHeader, Vec<&'a str>), String> {
    let mut lines = text.lines();
    let schema_line = lines.next().ok_or("empty file")?;
    let schema = schema_line
        .strip_prefix("# ")
        .ok_or_else(|| format!("missing schema line, got {schema_line:?}"))?
        .to_string();
    let meta = lines.next().ok_or("missing metadata line")?;
    let meta = meta.strip_prefix("# ").ok_or("malformed metadata line")?;
    let mut seed = 0u64;
    let mut compensated = false;
    for part in meta.split_whitespace() {
        if let Some(v) = part.strip_prefix("seed=") {
            seed = v.parse().map_err(|e| format!("bad seed: {e}"))?;
        } else if let Some(v) = part.strip_prefix("compensated=") {
            compensated = v.parse().map_err(|e| format!("bad compensated flag: {e}"))?;
        }
    }
    let header = lines.next().ok_or("missing column header")?;
    if let Some(cols) = expect_cols {
        let got: Vec<&str> = header.split(',').collect();
        if got != cols.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err("column header does not match schema".into());
        }
    }
    Ok((ParsedHeader { schema, seed, compensated }, lines.collect()))
}

pub fn peek_schema(text: &str) -> Option<String> {
    text.lines().next()?.strip_prefix("# ").map(str::to_string)
}

fn parse_fields(line: &str, expected: usize) -> Result<Vec<f64>, String> {
    let vals: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| format!("bad number in row: {e}"))?;
    if vals.len() != expected {
        return Err(format!("expected {expected} fields, got {}", vals.len()));
    }
    Ok(vals)
}

struct FieldCursor<'a> {
    vals: &'a [f64],
    i: usize,
}

impl<'a> FieldCursor<'a> {
    fn new(vals: &'a [f64]) -> Self {
        FieldCursor { vals, i: 0 }
    }
    fn take(&mut self) -> f64 {
        let x = self.vals[self.i];
        self.i += 1;
        x
    }
    fn take3(&mut self) -> [f64; 3] {
        [self.take(), self.take(), self.take()]
    }
    fn take4(&mut self) -> [f64; 4] {
        [self.take(), self.take(), self.take(), self.take()]
    }
    fn take8(&mut self) -> [f64; 8] {
        let mut a = [0.0; 8];
        for x in a.iter_mut() {
            *x = self.take();
        }
        a
    }
}

pub fn read_tick_log(text: &str) -> Result<EpisodeLog, String> {
    let schema = peek_schema(text).ok_or("empty file")?;
    let with_gp = match schema.as_str() {
        LOG_SCHEMA_GP => true,
        LOG_SCHEMA_NOGP => false,
        other => return Err(format!("unexpected schema {other:?}")),
    };
    let cols = tick_columns(with_gp);
    let (hdr, rows) = parse_header(text, Some(&cols))?;
    let mut ticks = Vec::with_capacity(rows.len());
    for line in rows {
        let vals = parse_fields(line, cols.len())?;
        let mut c = FieldCursor::new(&vals);
        let t = c.take();
        let q_true = c.take8();
        let q_d = c.take8();
        let meas_att = c.take4();
        let meas_pos = c.take3();
        let dq_vec = c.take3();
        let dq0 = c.take();
        let dp = c.take3();
        let v_lyap = c.take();
        let cmd_omega = c.take3();
        let cmd_v = c.take3();
        let rho_omega_true = c.take3();
        let rho_v_true = c.take3();
        let (mu_omega, mu_v, var_omega, var_v, rho_bound_omega, rho_bound_v, gp_generation) =
            if with_gp {
                (
                    c.take3(),
                    c.take3(),
                    c.take(),
                    c.take(),
                    c.take(),
                    c.take(),
                    c.take() as usize,
                )
            } else {
                ([0.0; 3], [0.0; 3], 0.0, 0.0, 0.0, 0.0, 0)
            };
        ticks.push(TickRow {
            t,
            q_true,
            q_d,
            meas_att,
            meas_pos,
            dq_vec,
            dq0,
            dp,
            v_lyap,
            cmd_omega,
            cmd_v,
            rho_omega_true,
            rho_v_true,
            mu_omega,
            mu_v,
            var_omega,
            var_v,
            rho_bound_omega,
            rho_bound_v,
            gp_generation,
        });
    }
    Ok(EpisodeLog {
        seed: hdr.seed,
        compensated: hdr.compensated,
        ticks,
        updates: Vec::new(),
        final_bound: None,
    })
}

/// Read a retraining log, returning the rows and the bound reconstructed
/// from the last one.
pub fn read_updates(text: &str) -> Result<(Vec<UpdateRow>, Option<UltimateBound>), String> {
    let schema = peek_schema(text).ok_or("empty file")?;
    if schema != UPDATES_SCHEMA {
        return Err(format!("unexpected schema {schema:?}"));
    }
    let (_hdr, rows) = parse_header(text, None)?;
    let mut updates = Vec::with_capacity(rows.len());
    let mut gamma = f64::NAN;
    for line in rows {
        let vals = parse_fields(line, 20)?;
        let mut c = FieldCursor::new(&vals);
        let n = c.take() as usize;
        let t = c.take();
        let n_samples = c.take() as usize;
        let u = UpdateRow {
            n,
            t,
            n_samples,
            info_gain_omega: c.take3(),
            beta_omega: c.take3(),
            info_gain_v: c.take3(),
            beta_v: c.take3(),
            c_omega: c.take(),
            c_v: c.take(),
            eps0: c.take(),
            m: c.take(),
        };
        gamma = c.take();
        updates.push(u);
    }
    let final_bound = updates.last().map(|u| UltimateBound {
        c_omega: u.c_omega,
        c_v: u.c_v,
        eps0: u.eps0,
        m: u.m,
        gamma,
    });
    Ok((updates, final_bound))
}

pub fn write_summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    writeln!(out, "# {SUMMARY_SCHEMA}").unwrap();
    writeln!(
        out,
        "label,episodes_gp,episodes_nogp,mae_att_gp,mse_att_gp,mae_pos_gp,mse_pos_gp,\
         mae_att_nogp,mse_att_nogp,mae_pos_nogp,mse_pos_nogp,improvement_att,improvement_pos"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.episodes_gp,
            r.episodes_nogp,
            f(r.gp.mae_att),
            f(r.gp.mse_att),
            f(r.gp.mae_pos),
            f(r.gp.mse_pos),
            f(r.nogp.mae_att),
            f(r.nogp.mse_att),
            f(r.nogp.mae_pos),
            f(r.nogp.mse_pos),
            f(r.improvement_att),
            f(r.improvement_pos),
        )
        .unwrap();
    }
    out
}

/// Human-readable rendering of the same table.
pub fn render_summary_text(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<24} {:>4} {:>12} {:>12} {:>12} {:>12} {:>8} {:>8}",
        "scenario", "eps", "mae_att_gp", "mae_att_off", "mae_pos_gp", "mae_pos_off", "impr_att",
        "impr_pos"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<24} {:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.2} {:>8.2}",
            r.label,
            r.episodes_gp,
            r.gp.mae_att,
            r.nogp.mae_att,
            r.gp.mae_pos,
            r.nogp.mae_pos,
            r.improvement_att,
            r.improvement_pos,
        )
        .unwrap();
    }
    out
}
