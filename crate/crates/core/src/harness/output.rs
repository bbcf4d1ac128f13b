//! Run directories.
//!
//! ```text
//! <run>/trace-<cycle>.jsonl            one line per trace record
//! <run>/errors-<cycle>.json            error log the learner saw
//! <run>/fragility-report-<cycle>.json  learner output (loop only)
//! <run>/improvement-plan-<cycle>.json  plan plus the outcome of each attempt
//! <run>/metrics.csv                    one row per cycle
//! <run>/gain.json                      verdict (loop only)
//! ```
//!
//! Every file is a pure function of the scenario and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{AntifragilityGain, CycleMetrics};
use super::{Attempt, CycleReport, HarnessError, LoopOutcome};
use crate::builder::ImprovementPlan;

#[derive(Serialize)]
struct PlanFile<'a> {
    #[serde(flatten)]
    plan: &'a ImprovementPlan,
    attempts: &'a [Attempt],
}

fn json<T: Serialize + ?Sized>(value: &T) -> Result<String, HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Output(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn write_cycle(dir: &Path, c: &CycleReport) -> Result<(), HarnessError> {
    let n = c.metrics.cycle;
    fs::write(dir.join(format!("trace-{n}.jsonl")), c.trace.to_jsonl())?;
    fs::write(dir.join(format!("errors-{n}.json")), json(&c.errors)?)?;
    if let Some(report) = &c.report {
        fs::write(dir.join(format!("fragility-report-{n}.json")), json(report)?)?;
    }
    if let Some(plan) = &c.plan {
        fs::write(dir.join(format!("improvement-plan-{n}.json")), json(&PlanFile { plan, attempts: &c.attempts })?)?;
    }
    Ok(())
}

fn write_metrics(dir: &Path, rows: &[CycleMetrics]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Output(e.to_string()))?;
    fs::write(dir.join("metrics.csv"), bytes)?;
    Ok(())
}

/// Writes a single scenario run.
pub fn write_run(dir: &Path, run: &CycleReport) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_cycle(dir, run)?;
    write_metrics(dir, std::slice::from_ref(&run.metrics))
}

/// Writes every cycle of a loop plus the gain verdict.
pub fn write_loop(dir: &Path, outcome: &LoopOutcome) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    for c in &outcome.cycles {
        write_cycle(dir, c)?;
    }
    write_metrics(dir, &outcome.metrics())?;
    fs::write(dir.join("gain.json"), json(&outcome.gain)?)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Table,
    Structured,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "structured" => Ok(ReportFormat::Structured),
            other => Err(format!("unknown format `{other}`, expected table or structured")),
        }
    }
}

/// Metrics rows and, for loops, the gain of a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub metrics: Vec<CycleMetrics>,
    pub gain: Option<AntifragilityGain>,
}

pub fn read_run(dir: &Path) -> Result<RunSummary, HarnessError> {
    let mut reader =
        csv::Reader::from_path(dir.join("metrics.csv")).map_err(|e| HarnessError::Output(e.to_string()))?;
    let metrics = reader
        .deserialize()
        .collect::<Result<Vec<CycleMetrics>, _>>()
        .map_err(|e| HarnessError::Output(e.to_string()))?;
    let gain_path = dir.join("gain.json");
    let gain = if gain_path.exists() {
        let text = fs::read_to_string(gain_path)?;
        Some(serde_json::from_str(&text).map_err(|e| HarnessError::Output(e.to_string()))?)
    } else {
        None
    };
    Ok(RunSummary { metrics, gain })
}

pub fn render(summary: &RunSummary, format: ReportFormat) -> Result<String, HarnessError> {
    if format == ReportFormat::Structured {
        return json(summary);
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5}  {:>8}  {:>8}  {:>12}  {:>13}  {:>11}  {:>12}",
        "cycle", "failures", "injected", "availability", "mean-recovery", "escalations", "improvements"
    );
    for m in &summary.metrics {
        let _ = writeln!(
            out,
            "{:>5}  {:>8}  {:>8}  {:>12.4}  {:>13.2}  {:>11}  {:>12}",
            m.cycle, m.failures, m.injected, m.availability, m.mean_recovery, m.escalations, m.improvements_applied
        );
    }
    if let Some(gain) = &summary.gain {
        let _ = writeln!(out, "verdict: {}", gain.verdict);
    }
    Ok(out)
}
