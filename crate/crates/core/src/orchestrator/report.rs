use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::{run_seed, RunRecord};
use crate::domain::{MetricValue, TaskKind};
use crate::error::{Error, Result};

/// Mean and standard error of the solved runs; N/A runs are only counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// `None` when every run was N/A.
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
    pub n: usize,
    pub not_available: usize,
}

/// Sample standard deviation over √n. A single value has standard error 0.
pub fn summarize(metrics: &[MetricValue]) -> Result<Summary> {
    if metrics.is_empty() {
        return Err(Error::EmptyInput("metrics"));
    }
    let vals: Vec<f64> = metrics.iter().filter_map(|m| m.value()).collect();
    let not_available = metrics.len() - vals.len();
    if vals.is_empty() {
        return Ok(Summary {
            mean: None,
            std_error: None,
            n: 0,
            not_available,
        });
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let se = if vals.len() < 2 {
        0.0
    } else {
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() / n.sqrt()
    };
    Ok(Summary {
        mean: Some(mean),
        std_error: Some(se),
        n: vals.len(),
        not_available,
    })
}

/// 100 for a zero loss, falling linearly to 0 at `loss_ref`; N/A scores 0.
pub fn score_map(loss: MetricValue, loss_ref: f64) -> Result<f64> {
    if !(loss_ref > 0.0 && loss_ref.is_finite()) {
        return Err(Error::Contract(format!("loss_ref must be positive, got {loss_ref}")));
    }
    Ok(match loss {
        MetricValue::NotSolved => 0.0,
        MetricValue::Value(l) => 100.0 * (1.0 - l / loss_ref).max(0.0),
    })
}

/// Worst finite loss across the compared records, the reference for
/// [`score_map`]. Callers pass records of one task.
pub fn reference_loss(records: &[RunRecord]) -> Option<f64> {
    records
        .iter()
        .filter_map(|r| r.metric.value())
        .filter(|v| v.is_finite())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iter: usize,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub stddev: f64,
    /// Seeds whose last value was carried forward to this iteration.
    pub carried: usize,
}

/// Best-objective curve averaged over records. Shorter runs repeat their
/// last value.
pub fn curves(records: &[RunRecord]) -> Vec<CurveRow> {
    let len = records.iter().map(|r| r.rows.len()).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let mut carried = 0;
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| !r.rows.is_empty())
                .map(|r| match r.rows.get(i) {
                    Some(row) => row.best_objective,
                    None => {
                        carried += 1;
                        r.rows.last().expect("non-empty").best_objective
                    }
                })
                .collect();
            let n = vals.len().max(1) as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            CurveRow {
                iter: i + 1,
                mean,
                stddev: var.sqrt(),
                carried,
            }
        })
        .collect()
}

pub fn emit_curves<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in curves(records) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Arm label used in reports.
pub fn arm_name(r: &RunRecord) -> &'static str {
    match (r.edit_enabled, r.dynamic_temperature) {
        (true, true) => "gso",
        (true, false) => "gso_wo_dynamic",
        (false, true) => "gso_wo_edit",
        (false, false) => "gso_wo_both",
    }
}

/// Runs every configured seed, in parallel threads; records come back in
/// seed order.
pub fn sweep(config: &RunConfig, base_dir: &Path) -> Result<Vec<RunRecord>> {
    config.validate()?;
    std::thread::scope(|s| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| s.spawn(move || run_seed(config, seed, base_dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

/// {edit on, off} × {dynamic on, off} × seeds. Each seed sees the same
/// task instance in all four arms.
pub fn run_ablation(config: &RunConfig, base_dir: &Path) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (edit, dynamic) in [(true, true), (true, false), (false, true), (false, false)] {
        let mut c = config.clone();
        c.edit_enabled = edit;
        c.dynamic_temperature = dynamic;
        out.extend(sweep(&c, base_dir)?);
    }
    Ok(out)
}

pub fn write_records<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub arm: String,
    pub task: String,
    pub runs: usize,
    pub solved: usize,
    pub mean: Option<f64>,
    pub std_error: Option<f64>,
    pub not_available: usize,
    pub mean_score: f64,
}

/// [`reference_loss`] over the records of `task`, or 1 when nothing positive
/// is available.
pub fn task_reference(records: &[RunRecord], task: TaskKind) -> f64 {
    let same: Vec<RunRecord> = records.iter().filter(|r| r.task == task).cloned().collect();
    reference_loss(&same).filter(|v| *v > 0.0).unwrap_or(1.0)
}

/// One row per (task, arm), in first-appearance order, with scores mapped against
/// the worst finite loss of that task.
pub fn summary_table(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    let mut groups: Vec<(TaskKind, &'static str)> = Vec::new();
    for r in records {
        if !groups.contains(&(r.task, arm_name(r))) {
            groups.push((r.task, arm_name(r)));
        }
    }
    groups
        .into_iter()
        .map(|(task, arm)| {
            let rs: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.task == task && arm_name(r) == arm)
                .collect();
            let metrics: Vec<MetricValue> = rs.iter().map(|r| r.metric).collect();
            let loss_ref = task_reference(records, task);
            let s = summarize(&metrics)?;
            let scores = metrics
                .iter()
                .map(|m| score_map(*m, loss_ref))
                .collect::<Result<Vec<_>>>()?;
            Ok(SummaryRow {
                arm: arm.to_string(),
                task: rs[0].task.to_string(),
                runs: rs.len(),
                solved: rs.iter().filter(|r| r.solved).count(),
                mean: s.mean,
                std_error: s.std_error,
                not_available: s.not_available,
                mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
            })
        })
        .collect()
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `records.jsonl`, `summary.csv` and `curves.csv` under `dir`. Several arms
/// get one curve file each, prefixed by task when tasks are mixed.
pub fn write_outputs(dir: &Path, records: &[RunRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_records(
        records,
        std::io::BufWriter::new(std::fs::File::create(dir.join("records.jsonl"))?),
    )?;
    write_summary(
        &summary_table(records)?,
        std::fs::File::create(dir.join("summary.csv"))?,
    )?;
    let mut groups: Vec<(TaskKind, &'static str)> = Vec::new();
    for r in records {
        if !groups.contains(&(r.task, arm_name(r))) {
            groups.push((r.task, arm_name(r)));
        }
    }
    let one_task = groups.iter().all(|g| g.0 == groups[0].0);
    if groups.len() <= 1 {
        emit_curves(records, std::fs::File::create(dir.join("curves.csv"))?)?;
    } else {
        for (task, arm) in groups {
            let rs: Vec<RunRecord> = records
                .iter()
                .filter(|r| r.task == task && arm_name(r) == arm)
                .cloned()
                .collect();
            let name = if one_task {
                format!("curves_{arm}.csv")
            } else {
                format!("curves_{task}_{arm}.csv")
            };
            emit_curves(&rs, std::fs::File::create(dir.join(name))?)?;
        }
    }
    Ok(())
}
