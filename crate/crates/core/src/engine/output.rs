//! CSV and JSON serialisation of a [`SimLog`].
//!
//! Numbers use the shortest representation that parses back to the same
//! `f64`, so equal logs give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::log::{SimLog, StateRow};
use super::{theorem2_report, Theorem2Report};
use crate::error::{Error, Result};

pub const STATES_FILE: &str = "states.csv";
pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFiles {
    pub states: PathBuf,
    pub telemetry: PathBuf,
    pub diagnostics: PathBuf,
    pub summary: PathBuf,
}

/// Machine-readable outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub t_final: f64,
    pub substeps: usize,
    pub snapshot_mode: bool,
    pub p_construction: String,
    /// Command-line overrides applied on top of the scenario document.
    pub overrides: BTreeMap<String, String>,
    pub completed: bool,
    pub error: Option<String>,
    pub state_rows: usize,
    pub control_steps: usize,
    pub final_time: f64,
    pub final_formation_error: Vec<f64>,
    pub final_formation_error_stacked: f64,
    pub final_tracking_error: Vec<f64>,
    pub final_estimation_error_xi: Vec<f64>,
    pub final_estimation_error_s: Vec<f64>,
    pub final_estimation_error_delta: Vec<f64>,
    pub max_abs_input: Vec<Vec<f64>>,
    pub box_violations: usize,
    pub constraint_violations: usize,
    pub dominance_violations: usize,
    pub infeasible_steps: usize,
    pub fallback_steps: usize,
    pub lyapunov_plateau: f64,
    pub theorem1_condition_holds: bool,
    pub theorem2: Option<Theorem2Report>,
    pub runtime_seconds: f64,
    /// SHA-256 of the states file followed by the telemetry file.
    pub sha256: String,
}

/// Run context that is not part of the log itself.
#[derive(Debug, Clone, Default)]
pub struct RunInfo {
    pub overrides: BTreeMap<String, String>,
    pub runtime_seconds: f64,
    pub error: Option<String>,
}

fn num(out: &mut String, v: f64) {
    let _ = write!(out, "{v}");
}

fn line(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        num(out, v);
    }
    out.push('\n');
}

/// Column names of the states file. Agents are numbered from 1.
pub fn state_columns(log: &SimLog) -> Vec<String> {
    let m = log.agent_count();
    let mut cols = vec!["t".to_string()];
    for i in 0..m {
        cols.extend((1..=log.state_dims[i]).map(|k| format!("x{}_{k}", i + 1)));
    }
    let leader_dim = log.states.first().map_or(0, |r| r.leader.len());
    cols.extend((1..=leader_dim).map(|k| format!("xi0_{k}")));
    for i in 0..m {
        let a = i + 1;
        cols.extend((1..=log.state_dims[i]).map(|k| format!("xi_hat{a}_{k}")));
        cols.extend((1..=log.state_dims[i]).map(|k| format!("delta_hat{a}_{k}")));
        cols.push(format!("c_s{a}"));
        cols.push(format!("c_delta{a}"));
    }
    for i in 0..m {
        cols.extend((1..=log.input_dims[i]).map(|j| format!("u{}_{j}", i + 1)));
    }
    cols.extend(log.fault_labels.iter().map(|l| format!("theta_{l}")));
    for i in 0..m {
        let a = i + 1;
        for name in [
            "err_xi", "err_s", "err_delta", "eps_xi", "eps_s", "eps_delta", "formation_err", "tracking_err", "v",
        ] {
            cols.push(format!("{name}{a}"));
        }
    }
    for name in ["err_xi", "err_s", "err_delta", "eps_xi", "eps_s", "eps_delta", "formation_err", "v"] {
        cols.push(format!("{name}_total"));
    }
    cols
}

fn state_values(row: &StateRow) -> Vec<f64> {
    let mut v = vec![row.t];
    for x in &row.x {
        v.extend(x.iter());
    }
    v.extend(row.leader.iter());
    for o in &row.observers {
        v.extend(o.xi_hat.iter());
        v.extend(o.delta_hat.iter());
        v.push(o.c_s);
        v.push(o.c_delta);
    }
    for u in &row.u {
        v.extend(u.iter());
    }
    v.extend(row.thetas.iter());
    for i in 0..row.x.len() {
        v.extend([
            row.estimation.xi[i],
            row.estimation.s[i],
            row.estimation.delta[i],
            row.local_xi[i],
            row.local_s[i],
            row.local_delta[i],
            row.formation.per_agent[i],
            row.tracking[i],
            row.lyapunov[i],
        ]);
    }
    v.extend([
        row.estimation.stacked_xi(),
        row.estimation.stacked_s(),
        row.estimation.stacked_delta(),
        row.stacked_local_xi(),
        row.stacked_local_s(),
        row.stacked_local_delta(),
        row.formation.stacked,
        row.total_lyapunov(),
    ]);
    v
}

pub fn states_csv(log: &SimLog) -> String {
    let mut out = String::new();
    line(&mut out, &state_columns(log));
    for row in &log.states {
        push_row(&mut out, state_values(row));
    }
    out
}

pub fn telemetry_csv(log: &SimLog) -> String {
    let width = log.input_dims.iter().copied().max().unwrap_or(0);
    let mut cols: Vec<String> = ["k", "t", "agent"].iter().map(|s| s.to_string()).collect();
    cols.extend((1..=width).map(|j| format!("u_{j}")));
    cols.extend(
        [
            "iterations",
            "cost",
            "fallback_cost",
            "fallback_feasible",
            "used_fallback",
            "constraint_lhs",
            "constraint_bound",
            "feasible",
            "s_norm",
            "in_box",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let mut out = String::new();
    line(&mut out, &cols);
    let flag = |b: bool| if b { "1" } else { "0" };
    for r in &log.telemetry {
        let mut cells = vec![r.k.to_string(), format!("{}", r.t), (r.agent + 1).to_string()];
        cells.extend((0..width).map(|j| r.u.get(j).map(|v| format!("{v}")).unwrap_or_default()));
        cells.extend([
            r.iterations.to_string(),
            format!("{}", r.cost),
            format!("{}", r.fallback_cost),
            flag(r.fallback_feasible).into(),
            flag(r.used_fallback).into(),
            format!("{}", r.lhs),
            format!("{}", r.bound),
            flag(r.feasible).into(),
            format!("{}", r.s_norm),
            flag(r.in_box).into(),
        ]);
        line(&mut out, &cells);
    }
    out
}

fn flatten_json(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_json(&key, v, out);
            }
        }
        Value::Array(items) => {
            for (k, v) in items.iter().enumerate() {
                flatten_json(&format!("{prefix}.{}", k + 1), v, out);
            }
        }
        Value::Null => out.push((prefix.to_string(), "not evaluated".into())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// The diagnostics header as `key,value` rows; nested fields use dotted keys
/// and list entries are numbered from 1.
pub fn diagnostics_csv(log: &SimLog) -> Result<String> {
    let value = serde_json::to_value(&log.header).map_err(|e| Error::Io(e.to_string()))?;
    let mut rows = Vec::new();
    flatten_json("", &value, &mut rows);
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    Ok(out)
}

pub fn summary(log: &SimLog, info: &RunInfo, sha256: String) -> Summary {
    let last = log.final_row();
    let pick = |f: &dyn Fn(&StateRow) -> Vec<f64>| last.map(f).unwrap_or_default();
    Summary {
        scenario: log.header.scenario.clone(),
        seed: log.header.seed,
        t_final: log.header.t_final,
        substeps: log.header.substeps,
        snapshot_mode: log.header.snapshot_mode,
        p_construction: log.header.p_construction.to_string(),
        overrides: info.overrides.clone(),
        completed: info.error.is_none(),
        error: info.error.clone(),
        state_rows: log.states.len(),
        control_steps: log.telemetry.iter().map(|r| r.k + 1).max().unwrap_or(0),
        final_time: last.map_or(0.0, |r| r.t),
        final_formation_error: pick(&|r| r.formation.per_agent.clone()),
        final_formation_error_stacked: last.map_or(0.0, |r| r.formation.stacked),
        final_tracking_error: pick(&|r| r.tracking.clone()),
        final_estimation_error_xi: pick(&|r| r.estimation.xi.clone()),
        final_estimation_error_s: pick(&|r| r.estimation.s.clone()),
        final_estimation_error_delta: pick(&|r| r.estimation.delta.clone()),
        max_abs_input: log.max_abs_input(),
        box_violations: log.box_violations(),
        constraint_violations: log.constraint_violations(),
        dominance_violations: log.dominance_violations(),
        infeasible_steps: log.telemetry.iter().filter(|r| !r.feasible).count(),
        fallback_steps: log.fallback_steps(),
        lyapunov_plateau: log.plateau(),
        theorem1_condition_holds: log.header.graph.condition_theorem1_holds,
        theorem2: log.header.theorem2_inputs.as_ref().map(|i| theorem2_report(log, i)),
        runtime_seconds: info.runtime_seconds,
        sha256,
    }
}

/// Writes the states, telemetry, diagnostics and summary files into `dir`
/// (created if missing).
pub fn write_outputs(log: &SimLog, dir: &Path, info: &RunInfo) -> Result<(OutputFiles, Summary)> {
    fs::create_dir_all(dir)?;
    let states = states_csv(log);
    let telemetry = telemetry_csv(log);
    let mut hasher = Sha256::new();
    hasher.update(states.as_bytes());
    hasher.update(telemetry.as_bytes());
    let digest = hasher.finalize();
    let sha256 = digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });
    let files = OutputFiles {
        states: dir.join(STATES_FILE),
        telemetry: dir.join(TELEMETRY_FILE),
        diagnostics: dir.join(DIAGNOSTICS_FILE),
        summary: dir.join(SUMMARY_FILE),
    };
    fs::write(&files.states, states)?;
    fs::write(&files.telemetry, telemetry)?;
    fs::write(&files.diagnostics, diagnostics_csv(log)?)?;
    let summary = summary(log, info, sha256);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&files.summary, json + "\n")?;
    Ok((files, summary))
}

/// Columnar plot data: outputs against their targets, error norms, control
/// inputs and fault signals over time. Returns the written paths.
pub fn write_plot_series(log: &SimLog, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let m = log.agent_count();

    let mut outputs = String::new();
    let mut cols = vec!["t".to_string()];
    let leader_channels = log.channels.first().copied().unwrap_or(0);
    cols.extend((1..=leader_channels).map(|c| format!("y0_{c}")));
    for i in 0..m {
        cols.extend((1..=log.channels[i]).map(|c| format!("y{}_{c}", i + 1)));
        cols.extend((1..=log.channels[i]).map(|c| format!("target{}_{c}", i + 1)));
    }
    line(&mut outputs, &cols);
    for r in &log.states {
        let mut v = vec![r.t];
        v.extend(r.leader.iter().take(leader_channels));
        for i in 0..m {
            let n = log.channels[i];
            v.extend(r.x[i].iter().take(n));
            v.extend((0..n).map(|c| r.leader[c] + log.displacements[i][c]));
        }
        push_row(&mut outputs, v);
    }

    let mut errors = String::new();
    let mut cols = vec!["t".to_string()];
    for i in 0..m {
        let a = i + 1;
        for name in ["formation_err", "tracking_err", "err_xi", "err_s", "err_delta"] {
            cols.push(format!("{name}{a}"));
        }
    }
    cols.extend(["formation_err_total", "eps_xi_total", "eps_s_total", "eps_delta_total"].map(String::from));
    line(&mut errors, &cols);
    for r in &log.states {
        let mut v = vec![r.t];
        for i in 0..m {
            v.extend([
                r.formation.per_agent[i],
                r.tracking[i],
                r.estimation.xi[i],
                r.estimation.s[i],
                r.estimation.delta[i],
            ]);
        }
        v.extend([r.formation.stacked, r.stacked_local_xi(), r.stacked_local_s(), r.stacked_local_delta()]);
        push_row(&mut errors, v);
    }

    let mut controls = String::new();
    let mut cols = vec!["t".to_string()];
    for i in 0..m {
        cols.extend((1..=log.input_dims[i]).map(|j| format!("u{}_{j}", i + 1)));
    }
    line(&mut controls, &cols);
    for r in &log.states {
        let mut v = vec![r.t];
        for u in &r.u {
            v.extend(u.iter());
        }
        push_row(&mut controls, v);
    }

    let mut faults = String::new();
    let mut cols = vec!["t".to_string()];
    cols.extend(log.fault_labels.iter().map(|l| format!("theta_{l}")));
    line(&mut faults, &cols);
    for r in &log.states {
        push_row(&mut faults, std::iter::once(r.t).chain(r.thetas.iter().copied()));
    }

    let mut paths = Vec::new();
    for (name, body) in [
        ("plot_outputs.csv", outputs),
        ("plot_errors.csv", errors),
        ("plot_controls.csv", controls),
        ("plot_faults.csv", faults),
    ] {
        let path = dir.join(name);
        fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}
