//! Offline views of logs: per-step tables of trajectory logs, cost
//! recomputation, and plot-ready series from a metrics file.
//!
//! Series files are tab-separated with a header row. The three training
//! series are `surrogate_advantage.tsv` (the clipped objective, i.e. the
//! negated surrogate loss), `learning_rate.tsv` and `value_function.tsv`
//! (value loss), plus `average_reward.tsv`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::env::{compute_cost_terms, task_reward, CostParams, CostVector, NUM_COSTS};
use crate::error::{Error, Result};
use crate::eval::TrajectoryLog;

/// (file name, metrics field, column name) of each emitted series.
pub const SERIES: [(&str, &str, &str); 4] = [
    ("surrogate_advantage.tsv", "surrogate_loss", "surrogate_advantage"),
    ("learning_rate.tsv", "learning_rate", "learning_rate"),
    ("value_function.tsv", "value_loss", "value_loss"),
    ("average_reward.tsv", "average_ll_reward", "average_reward"),
];

/// Largest absolute difference between logged and recomputed cost terms
/// and rewards over the whole log.
pub fn recompute_deviation(log: &TrajectoryLog) -> Result<f64> {
    let params = CostParams::for_task(&log.header.task, log.header.control_dt);
    let mut worst: f64 = 0.0;
    for r in &log.records {
        let i = &r.inputs;
        let costs = compute_cost_terms(
            &log.header.model,
            &i.state,
            &i.contacts,
            &i.torques,
            &i.history,
            &i.action,
            &i.command,
            &params,
        )?;
        let reward = task_reward(&log.header.task.reward_weights, &costs);
        for (a, b) in costs.as_array().iter().zip(r.costs.as_array()) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((reward - r.reward).abs());
    }
    Ok(worst)
}

/// One row per control step: time, reward, base height and velocity,
/// command, torque peak, foot contacts and all cost terms.
pub fn step_table(log: &TrajectoryLog) -> String {
    let mut out = String::from("step\ttime\treward\theight\tvx\tvy\tyaw_rate\tcmd_vx\tcmd_vy\tcmd_yaw_rate\tmax_abs_torque\tfeet_in_contact\tbehavior");
    for name in CostVector::NAMES {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    for r in &log.records {
        let s = &r.inputs.state;
        let c = &r.inputs.command;
        let feet: usize = r.contact_summary.feet_in_contact.iter().filter(|&&f| f).count();
        let behavior = r.behavior.map_or_else(|| "-".to_string(), |b| b.to_string());
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.step, r.time, r.reward, s.q[2], s.u[0], s.u[1], s.u[5], c.vx, c.vy, c.yaw_rate, r.max_abs_torque, feet, behavior
        );
        let costs: [f64; NUM_COSTS] = r.costs.as_array();
        for v in costs {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

/// Writes the series files from a metrics file into `out_dir` and returns
/// their paths. An empty metrics file yields no files.
pub fn metric_series(metrics: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows: Vec<serde_json::Value> = crate::metrics::read_jsonl(metrics)?;
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (file, field, column) in SERIES {
        let mut text = format!("iteration\t{column}\n");
        for (n, row) in rows.iter().enumerate() {
            let get = |k: &str| row.get(k).and_then(|v| v.as_f64());
            let (Some(it), Some(v)) = (get("iteration"), get(field)) else {
                return Err(Error::LogFormat(format!(
                    "{} line {}: missing '{field}' or 'iteration'",
                    metrics.display(),
                    n + 1
                )));
            };
            let v = if field == "surrogate_loss" { -v } else { v };
            let _ = writeln!(text, "{it}\t{v}");
        }
        let path = out_dir.join(file);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// What a log file holds, judged from its first non-empty line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Empty,
    Trajectory,
    Metrics,
}

pub fn detect(path: &Path) -> Result<LogKind> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let Some(first) = text.lines().find(|l| !l.trim().is_empty()) else {
        return Ok(LogKind::Empty);
    };
    let v: serde_json::Value =
        serde_json::from_str(first).map_err(|e| Error::LogFormat(format!("{}: {e}", path.display())))?;
    if v.get("schema").is_some() {
        Ok(LogKind::Trajectory)
    } else if v.get("iteration").is_some() {
        Ok(LogKind::Metrics)
    } else {
        Err(Error::LogFormat(format!("{}: neither a trajectory nor a metrics log", path.display())))
    }
}
