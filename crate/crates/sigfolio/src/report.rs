//! Metric tables, evaluation summaries and the plot-ready tables built from
//! them.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! runs give byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sigfolio_core::env::EpisodeTrace;
use sigfolio_core::evaluate::{EvaluationReport, ExpertProfit};
use sigfolio_core::ppo::IterationMetrics;
use sigfolio_core::PricePanel;

use crate::csvio::{format_date, writer, write_text, FileError};

pub const EXPERT_HEADER: [&str; 4] = ["report", "expert", "signals", "average_profit"];
pub const GAINS_HEADER: [&str; 3] = ["average_gain", "max_gain", "min_gain"];
pub const EQUITY_HEADER: [&str; 5] = ["report", "period", "step", "date", "value"];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> FileError + '_ {
    move |source| FileError::Csv { path: path.into(), source }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> FileError + '_ {
    move |source| FileError::Io { path: path.into(), source }
}

fn num(x: f64) -> String {
    format!("{x}")
}

pub fn metrics_record(m: &IterationMetrics) -> [String; 7] {
    [
        m.iteration.to_string(),
        num(m.mean_reward),
        num(m.mean_length),
        num(m.policy_loss),
        num(m.value_loss),
        num(m.entropy),
        m.version.to_string(),
    ]
}

/// The training metrics table as text.
pub fn metrics_table(metrics: &[IterationMetrics]) -> String {
    let mut out = IterationMetrics::HEADER.join(",");
    out.push('\n');
    for m in metrics {
        out += &metrics_record(m).join(",");
        out.push('\n');
    }
    out
}

pub fn write_metrics(path: &Path, metrics: &[IterationMetrics]) -> Result<(), FileError> {
    write_text(path, &metrics_table(metrics))
}

pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>, FileError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(IterationMetrics::HEADER) {
        return Err(FileError::Header { path: path.into(), expected: IterationMetrics::HEADER.join(",") });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| FileError::Row { path: path.into(), line, reason };
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", IterationMetrics::HEADER[i])));
        let u = |i: usize| rec[i].parse::<u64>().map_err(|e| bad(format!("{}: {e}", IterationMetrics::HEADER[i])));
        out.push(IterationMetrics {
            iteration: u(0)?,
            mean_reward: f(1)?,
            mean_length: f(2)?,
            policy_loss: f(3)?,
            value_loss: f(4)?,
            entropy: f(5)?,
            version: u(6)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRow {
    pub expert: String,
    pub signals: usize,
    pub average_profit: f64,
}

impl From<&ExpertProfit> for ExpertRow {
    fn from(e: &ExpertProfit) -> Self {
        Self { expert: e.expert.to_string(), signals: e.signals, average_profit: e.average_profit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    pub start_date: String,
    pub end_date: String,
    pub steps: usize,
    pub gain: f64,
    pub reason: String,
    /// Dates matching `equity`.
    pub dates: Vec<String>,
    /// Portfolio value at the start and after every step.
    pub equity: Vec<f64>,
}

/// What `evaluate` writes as JSON. Gains are `None` when no period ran;
/// ratios are `None` unless the best expert's average profit is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub checkpoint_version: u64,
    pub start_date: String,
    pub end_date: String,
    pub periods: Vec<PeriodSummary>,
    pub average_gain: Option<f64>,
    pub max_gain: Option<f64>,
    pub min_gain: Option<f64>,
    pub experts: Vec<ExpertRow>,
    pub best_expert: Option<ExpertRow>,
    pub average_gain_ratio: Option<f64>,
    pub max_gain_ratio: Option<f64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl EvaluationSummary {
    pub fn new(
        report: &EvaluationReport,
        traces: &[EpisodeTrace],
        panel: &PricePanel,
        range: std::ops::Range<usize>,
        checkpoint_version: u64,
    ) -> Self {
        let cal = panel.calendar();
        let date = |t: usize| format_date(cal[t.min(cal.len() - 1)]);
        let periods = traces
            .iter()
            .map(|tr| PeriodSummary {
                start_date: date(tr.start_day_index),
                end_date: tr.rows.last().map_or_else(|| date(tr.start_day_index), |r| format_date(r.day)),
                steps: tr.rows.len(),
                gain: tr.gain(),
                reason: tr.reason.as_str().to_string(),
                dates: std::iter::once(date(tr.start_day_index)).chain(tr.rows.iter().map(|r| format_date(r.day))).collect(),
                equity: std::iter::once(tr.initial_value).chain(tr.rows.iter().map(|r| r.value)).collect(),
            })
            .collect();
        Self {
            checkpoint_version,
            start_date: date(range.start),
            end_date: date(range.end.saturating_sub(1)),
            periods,
            average_gain: finite(report.average_gain),
            max_gain: finite(report.max_gain),
            min_gain: finite(report.min_gain),
            experts: report.experts.iter().map(ExpertRow::from).collect(),
            best_expert: report.best_expert.as_ref().map(ExpertRow::from),
            average_gain_ratio: report.average_gain_ratio,
            max_gain_ratio: report.max_gain_ratio,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<(), FileError> {
        write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, FileError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| FileError::Row { path: path.into(), line: e.line() as u64, reason: e.to_string() })
    }
}

/// Step-by-step detail of every evaluation period.
pub fn write_trace(path: &Path, traces: &[EpisodeTrace], panel: &PricePanel) -> Result<(), FileError> {
    let mut w = writer(path)?;
    let mut header = vec![String::from("period"), String::from("date"), String::from("day_index"), String::from("w_cash")];
    header.extend(panel.symbols().iter().map(|s| format!("w_{s}")));
    header.extend(["mu", "rate_of_return", "log_return", "value"].map(String::from));
    w.write_record(&header).map_err(csv_err(path))?;
    for (p, tr) in traces.iter().enumerate() {
        for row in &tr.rows {
            let mut rec = vec![p.to_string(), format_date(row.day), row.day_index.to_string()];
            rec.extend(row.weights.as_slice().iter().map(|x| num(*x)));
            rec.extend([row.mu, row.rate_of_return, row.log_return, row.value].map(num));
            w.write_record(&rec).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Writes `expert_profit.csv`, `gains.csv`, `equity.csv` and
/// `learning_curve.csv` into `dir`. Empty inputs give header-only tables.
pub fn write_tables(dir: &Path, metrics: &[IterationMetrics], summaries: &[EvaluationSummary]) -> Result<(), FileError> {
    let path = dir.join("expert_profit.csv");
    let mut w = writer(&path)?;
    w.write_record(EXPERT_HEADER).map_err(csv_err(&path))?;
    for (i, s) in summaries.iter().enumerate() {
        for e in &s.experts {
            w.write_record([i.to_string(), e.expert.clone(), e.signals.to_string(), num(e.average_profit)])
                .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("gains.csv");
    let mut w = writer(&path)?;
    w.write_record(GAINS_HEADER).map_err(csv_err(&path))?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, num);
    for s in summaries {
        w.write_record([opt(s.average_gain), opt(s.max_gain), opt(s.min_gain)]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("equity.csv");
    let mut w = writer(&path)?;
    w.write_record(EQUITY_HEADER).map_err(csv_err(&path))?;
    for (i, s) in summaries.iter().enumerate() {
        for (p, period) in s.periods.iter().enumerate() {
            for (k, (v, date)) in period.equity.iter().zip(&period.dates).enumerate() {
                w.write_record([i.to_string(), p.to_string(), k.to_string(), date.clone(), num(*v)]).map_err(csv_err(&path))?;
            }
        }
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("learning_curve.csv");
    let mut w = writer(&path)?;
    w.write_record(["iteration", "mean_reward", "mean_length"]).map_err(csv_err(&path))?;
    for m in metrics {
        w.write_record([m.iteration.to_string(), num(m.mean_reward), num(m.mean_length)]).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}
