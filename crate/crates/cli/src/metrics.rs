//! CSV output for simulation traces.

use std::path::{Path, PathBuf};

use riskcost_core::riskmetrics::{cvar_sorted, RiskError};
use riskcost_core::{Action, LossSample, PolicyConfig, Trace};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no traces to write")]
    Empty,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Serialize)]
struct StepRow {
    step: u64,
    action: Action,
    loss: f64,
    epsilon: f64,
    p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub replication: usize,
    pub total_loss: f64,
    pub far: f64,
    pub frr: f64,
    pub chr: f64,
    /// `beta * CVaR_alpha` of the replication's per-step losses.
    pub cvar_contribution: f64,
}

pub fn replication_file_name(replication: usize) -> String {
    format!("replication_{replication}.csv")
}

pub const SUMMARY_FILE: &str = "summary.csv";

pub fn summary_row(trace: &Trace, config: &PolicyConfig) -> Result<SummaryRow, MetricsError> {
    let losses: Vec<f64> = trace.steps.iter().map(|s| s.loss).collect();
    let cvar = if losses.is_empty() {
        0.0
    } else {
        cvar_sorted(&LossSample::uniform(losses)?, config.alpha)?
    };
    let rates = &trace.summary.rates;
    Ok(SummaryRow {
        replication: trace.header.replication,
        total_loss: trace.summary.total_loss,
        far: rates.far,
        frr: rates.frr,
        chr: rates.chr,
        cvar_contribution: config.beta * cvar,
    })
}

/// Writes one CSV per replication plus `summary.csv` into `dir` and returns
/// the paths written, summary last.
pub fn write_metrics(traces: &[Trace], config: &PolicyConfig, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    if traces.is_empty() {
        return Err(MetricsError::Empty);
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(traces.len() + 1);
    let mut summary = csv::Writer::from_path(dir.join(SUMMARY_FILE))?;
    for trace in traces {
        let path = dir.join(replication_file_name(trace.header.replication));
        let mut w = csv::Writer::from_path(&path)?;
        for s in &trace.steps {
            w.serialize(StepRow {
                step: s.t,
                action: s.action,
                loss: s.loss,
                epsilon: s.epsilon,
                p: s.p,
            })?;
        }
        w.flush()?;
        written.push(path);
        summary.serialize(summary_row(trace, config)?)?;
    }
    summary.flush()?;
    written.push(dir.join(SUMMARY_FILE));
    Ok(written)
}
