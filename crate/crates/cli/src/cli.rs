//! Command-line surface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use riskcost_core::calibration::{self, reliability_bins, CalibrationKind};
use riskcost_core::riskmetrics::{challenge_cost_sweep, cost_curve, uniform_thresholds};
use riskcost_core::simulator::{initial_map, run_simulation};
use riskcost_core::{AdaptivePolicy, AmbiguityKind, CalibrationMap, CostParameters, Label};
use serde::Serialize;

use crate::config::{load_scenario, ScenarioFile};
use crate::evaluate::{evaluate, load_traces, write_robust_csv};
use crate::metrics::write_metrics;
use crate::service::{serve, ServiceState};

/// Exit status for invalid input (bad flags, files or values).
pub const EXIT_VALIDATION: u8 = 2;
/// Exit status for failures while running a valid command.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "riskcost", version, about = "Risk-cost adaptive authentication toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded replications of a scenario and write traces and metrics.
    Simulate(SimulateArgs),
    /// Summarize trace files: rates, risk functional, CVaR, robust curve.
    Evaluate(EvaluateArgs),
    /// Fit a calibration map from a CSV of raw_score,label.
    Calibrate(CalibrateArgs),
    /// Cost curve over accept thresholds from a CSV of p,label.
    Sweep(SweepArgs),
    /// Serve the decision engine over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of replications; overrides the scenario file.
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of *.jsonl trace files.
    #[arg(long)]
    pub traces: PathBuf,
    /// Scenario file supplying costs, alpha and beta.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "tv")]
    pub robust: AmbiguityKind,
    /// Comma-separated ambiguity radii.
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05,0.1,0.2")]
    pub delta: Vec<f64>,
    /// Optional CSV for the robust curve (delta,worst_case_loss).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CSV with header raw_score,label.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "platt")]
    pub kind: KindArg,
    /// Output path for the fitted map (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional reliability-diagram CSV.
    #[arg(long)]
    pub reliability: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum KindArg {
    Platt,
    Isotonic,
}

impl From<KindArg> for CalibrationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Platt => CalibrationKind::Platt,
            KindArg::Isotonic => CalibrationKind::Isotonic,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// CSV with header p,label.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub c_fa: f64,
    #[arg(long)]
    pub c_fr: f64,
    /// Number of threshold intervals on [0,1].
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also sweep challenge friction costs (comma-separated) with this rho.
    #[arg(long, value_delimiter = ',')]
    pub challenge_costs: Vec<f64>,
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Scenario file supplying the policy and challenge model.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Calibration map (JSON, as written by `calibrate`). Without it the map
    /// is fitted on the scenario's warm-up sample.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Calibrate(a) => calibrate(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Serve(a) => serve_cmd(&a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value).map_err(runtime)?);
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut file = load_scenario(&args.scenario).map_err(invalid)?;
    if let Some(n) = args.seeds {
        file.scenario.replications = n;
        file.validate().map_err(invalid)?;
    }
    let traces = run_simulation(&file.scenario, &file.policy).map_err(runtime)?;
    std::fs::create_dir_all(&args.out).map_err(runtime)?;
    for t in &traces {
        let path = args.out.join(format!("trace_{}.jsonl", t.header.replication));
        std::fs::write(&path, t.to_jsonl_bytes()).map_err(runtime)?;
    }
    write_metrics(&traces, &file.policy, &args.out).map_err(runtime)?;
    let text = crate::config::write_scenario(&file).map_err(runtime)?;
    std::fs::write(args.out.join("scenario.toml"), text).map_err(runtime)?;
    println!(
        "wrote {} replication(s) to {} (scenario {})",
        traces.len(),
        args.out.display(),
        file.scenario.fingerprint()
    );
    Ok(())
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<(), CliError> {
    let file = load_scenario(&args.scenario).map_err(invalid)?;
    let traces = load_traces(&args.traces).map_err(invalid)?;
    let report = evaluate(&traces, &file.policy, args.robust, &args.delta).map_err(invalid)?;
    if let Some(out) = &args.out {
        write_robust_csv(&report.robust_curve, out).map_err(runtime)?;
    }
    print_json(&report)
}

fn read_pairs(path: &Path, first: &str) -> Result<(Vec<f64>, Vec<Label>), CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(invalid)?;
    let headers = reader.headers().map_err(invalid)?.clone();
    if headers.len() < 2 || &headers[0] != first || &headers[1] != "label" {
        return Err(invalid(format!("{}: expected header `{first},label`", path.display())));
    }
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(invalid)?;
        let line = i + 2;
        let x: f64 = row[0]
            .trim()
            .parse()
            .map_err(|_| invalid(format!("line {line}: bad {first} `{}`", &row[0])))?;
        let label: Label = row[1]
            .trim()
            .parse()
            .map_err(|_| invalid(format!("line {line}: bad label `{}`", &row[1])))?;
        xs.push(x);
        labels.push(label);
    }
    Ok((xs, labels))
}

#[derive(Serialize)]
struct CalibrateSummary {
    samples: usize,
    ece: f64,
    map: CalibrationMap,
}

pub fn calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let (scores, labels) = read_pairs(&args.input, "raw_score")?;
    let map = calibration::fit(args.kind.into(), &scores, &labels).map_err(invalid)?;
    let probs: Vec<f64> = scores.iter().map(|&s| calibration::apply_calibration(&map, s)).collect();
    let diagram = reliability_bins(&probs, &labels, args.bins).map_err(invalid)?;
    std::fs::write(&args.out, serde_json::to_vec_pretty(&map).map_err(runtime)?).map_err(runtime)?;
    if let Some(path) = &args.reliability {
        let mut w = csv::Writer::from_path(path).map_err(runtime)?;
        for b in &diagram.bins {
            w.serialize(b).map_err(runtime)?;
        }
        w.flush().map_err(runtime)?;
    }
    print_json(&CalibrateSummary {
        samples: scores.len(),
        ece: diagram.ece,
        map,
    })
}

#[derive(Serialize)]
struct SweepRow {
    threshold: f64,
    far: f64,
    frr: f64,
    expected_loss: f64,
    risk_functional: f64,
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let (ps, labels) = read_pairs(&args.input, "p")?;
    if let Some(i) = ps.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(invalid(format!("line {}: p outside [0,1]", i + 2)));
    }
    let costs = CostParameters::new(args.c_fa, args.c_fr, 0.0, 0.0).map_err(invalid)?;
    let scored: Vec<(f64, Label)> = ps.into_iter().zip(labels).collect();
    let curve = cost_curve(&scored, &costs, &uniform_thresholds(args.steps)).map_err(invalid)?;
    let mut w = csv::Writer::from_path(&args.out).map_err(runtime)?;
    for pt in &curve.points {
        w.serialize(SweepRow {
            threshold: pt.threshold,
            far: pt.rates.far,
            frr: pt.rates.frr,
            expected_loss: pt.expected_loss,
            risk_functional: pt.risk_functional,
        })
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    let best = curve.best();
    println!(
        "argmin threshold {} expected_loss {} (Bayes threshold {})",
        best.threshold,
        best.expected_loss,
        riskcost_core::decision::accept_threshold(&costs)
    );
    if !args.challenge_costs.is_empty() {
        if !(0.0..=1.0).contains(&args.rho) || args.challenge_costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(invalid("rho must lie in [0,1] and challenge costs must be >= 0"));
        }
        let points = challenge_cost_sweep(&scored, &costs, args.rho, &args.challenge_costs);
        print_json(&points)?;
    }
    Ok(())
}

fn load_map(path: &Path) -> Result<CalibrationMap, CliError> {
    let text = std::fs::read_to_string(path).map_err(invalid)?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn build_service(file: &ScenarioFile, map: CalibrationMap, seed: u64) -> Result<ServiceState, CliError> {
    let policy = AdaptivePolicy::new(file.policy.clone(), file.scenario.challenge.clone(), map, seed)
        .map_err(invalid)?;
    Ok(ServiceState::new(policy))
}

pub fn serve_cmd(args: &ServeArgs) -> Result<(), CliError> {
    let file = load_scenario(&args.scenario).map_err(invalid)?;
    let map = match &args.map {
        Some(p) => load_map(p)?,
        None => initial_map(&file.scenario, &file.policy, file.scenario.seed).map_err(runtime)?,
    };
    let state = build_service(&file, map, args.seed)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(runtime)?;
    rt.block_on(serve(state, &args.bind)).map_err(runtime)
}
