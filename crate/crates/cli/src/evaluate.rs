//! Offline evaluation of trace files: rates, risk functional, CVaR and a
//! robust loss curve over a list of ambiguity radii.

use std::path::{Path, PathBuf};

use riskcost_core::policy::{cumulative_objective, ObjectiveSummary, PolicyError};
use riskcost_core::riskmetrics::{self, risk_functional, RiskError};
use riskcost_core::robust::{dro_policy_value, RobustError};
use riskcost_core::simulator::SimError;
use riskcost_core::{AmbiguityKind, AmbiguitySpec, LossSample, PolicyConfig, Rates, Trace};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("no trace files (*.jsonl) found in {0}")]
    NoTraces(String),
    #[error("{path}: {source}")]
    Trace { path: String, source: SimError },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationReport {
    pub replication: usize,
    pub steps: usize,
    pub rates: Rates,
    pub risk_functional: f64,
    pub total_loss: f64,
    pub mean_loss: f64,
    /// CVaR at the configured alpha of per-step losses.
    pub cvar: f64,
    pub leakage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustPoint {
    pub delta: f64,
    pub worst_case_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub replications: Vec<ReplicationReport>,
    pub objective: ObjectiveSummary,
    pub ambiguity: AmbiguityKind,
    pub robust_curve: Vec<RobustPoint>,
}

/// Loads every `*.jsonl` trace in `dir`, sorted by file name.
pub fn load_traces(dir: &Path) -> Result<Vec<Trace>, EvaluateError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(EvaluateError::NoTraces(dir.display().to_string()));
    }
    paths
        .iter()
        .map(|p| {
            let file = std::fs::File::open(p)?;
            Trace::read_jsonl(std::io::BufReader::new(file)).map_err(|source| EvaluateError::Trace {
                path: p.display().to_string(),
                source,
            })
        })
        .collect()
}

pub fn evaluate(
    traces: &[Trace],
    config: &PolicyConfig,
    kind: AmbiguityKind,
    deltas: &[f64],
) -> Result<EvaluationReport, EvaluateError> {
    let mut reports = Vec::with_capacity(traces.len());
    let mut pooled = Vec::new();
    let mut pooled_leakage = 0.0;
    for t in traces {
        let losses: Vec<f64> = t.steps.iter().map(|s| s.loss).collect();
        let n = losses.len().max(1) as f64;
        let leakage: f64 = t.steps.iter().map(|s| s.leakage).sum();
        let rates = riskmetrics::empirical_rates(t.steps.iter().map(|s| (s.action, s.label)));
        let cvar = if losses.is_empty() {
            0.0
        } else {
            riskmetrics::cvar_sorted(&LossSample::uniform(losses.clone())?, config.alpha)?
        };
        reports.push(ReplicationReport {
            replication: t.header.replication,
            steps: losses.len(),
            risk_functional: risk_functional(&rates, &config.costs, leakage / n),
            rates,
            total_loss: losses.iter().sum(),
            mean_loss: losses.iter().sum::<f64>() / n,
            cvar,
            leakage,
        });
        pooled_leakage += leakage;
        pooled.extend(losses);
    }

    let logs: Vec<_> = traces.iter().map(Trace::loss_records).collect();
    let objective = cumulative_objective(&logs, config)?;

    let mut robust_curve = Vec::with_capacity(deltas.len());
    if !pooled.is_empty() {
        let per_step_leakage = pooled_leakage / pooled.len() as f64;
        let sample = LossSample::uniform(pooled)?;
        for &delta in deltas {
            let spec = AmbiguitySpec::new(kind, delta)?;
            robust_curve.push(RobustPoint {
                delta,
                worst_case_loss: dro_policy_value(&sample, &spec, config.lambda(), per_step_leakage)?,
            });
        }
    }
    Ok(EvaluationReport {
        replications: reports,
        objective,
        ambiguity: kind,
        robust_curve,
    })
}

pub fn write_robust_csv(points: &[RobustPoint], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
