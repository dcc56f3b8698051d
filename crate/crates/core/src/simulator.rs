//! Seeded synthetic authentication streams.
//!
//! Raw scores are Gaussian per class (higher means more impostor-like), the
//! legitimate mean can drift linearly after a start step, and an optional
//! hill-climbing adversary moves the impostor mean toward whatever gets
//! accepted. Each replication runs the decide → challenge → feedback →
//! reoptimize loop and produces a [`Trace`].
//!
//! Randomness is split into independent ChaCha streams (events, challenge
//! outcomes, warm-up calibration, exploration) so two policies run on the
//! same seed see the same base noise.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibration::{self, CalibrationError, CalibrationMap, PlattParams};
use crate::decision::ActionRisks;
use crate::domain::{
    Action, AuthEvent, ChallengeModel, ChallengeParams, DomainError, Label, LossRecord,
};
use crate::policy::{AdaptivePolicy, DriftRecord, Outcome, PolicyConfig, PolicyError, StepDecision};
use crate::riskmetrics::{self, Rates};

const EVENT_STREAM: u64 = 0;
const OUTCOME_STREAM: u64 = 1;
const WARMUP_STREAM: u64 = 2;
const POLICY_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(#[from] DomainError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("warm-up calibration failed: {0}")]
    Calibration(#[from] CalibrationError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreModel {
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    /// Shift added to the legitimate mean per step after `start_step`.
    pub rate: f64,
    #[serde(default)]
    pub start_step: u64,
}

/// Hill-climbing prober. This is a stand-in threat model: it sees only
/// whether its own attempts were accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    pub probe_step_size: f64,
    pub probe_batch: usize,
    #[serde(default = "yes")]
    pub adapt: bool,
    /// Sign of the move when a batch is fully rejected. Defaults to the
    /// direction of the legitimate score mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<f64>,
}

fn yes() -> bool {
    true
}

/// How the deployment calibration map is obtained before step 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialCalibration {
    /// Fit `PolicyConfig::calibration_kind` on `warmup` undrifted events.
    #[default]
    Warmup,
    /// Exact posterior of the equal-variance Gaussian model (a Platt map).
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub impostor_prior: f64,
    #[serde(default = "scenario_defaults::legit_score")]
    pub legit_score: ScoreModel,
    #[serde(default = "scenario_defaults::impostor_score")]
    pub impostor_score: ScoreModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversaryConfig>,
    #[serde(default = "scenario_defaults::challenge")]
    pub challenge: ChallengeModel,
    pub horizon: u64,
    #[serde(default = "scenario_defaults::replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "scenario_defaults::warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub initial_calibration: InitialCalibration,
}

pub mod scenario_defaults {
    use super::ScoreModel;
    use crate::domain::{ChallengeModel, ChallengeParams};

    pub fn legit_score() -> ScoreModel {
        ScoreModel {
            mean: -1.0,
            stddev: 1.0,
        }
    }
    pub fn impostor_score() -> ScoreModel {
        ScoreModel {
            mean: 1.0,
            stddev: 1.0,
        }
    }
    pub fn challenge() -> ChallengeModel {
        ChallengeModel::uniform(ChallengeParams {
            rho: 0.9,
            rho_legit: None,
            c_ch: 1.0,
            leakage: 1.0,
        })
    }
    pub fn replications() -> usize {
        1
    }
    pub fn warmup() -> usize {
        5000
    }
}

impl Scenario {
    /// Scenario with every optional field at its documented default.
    pub fn minimal(impostor_prior: f64, horizon: u64) -> Self {
        Self {
            impostor_prior,
            legit_score: scenario_defaults::legit_score(),
            impostor_score: scenario_defaults::impostor_score(),
            drift: None,
            adversary: None,
            challenge: scenario_defaults::challenge(),
            horizon,
            replications: scenario_defaults::replications(),
            seed: 0,
            warmup: scenario_defaults::warmup(),
            initial_calibration: InitialCalibration::Warmup,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let pi = self.impostor_prior;
        if !(pi.is_finite() && pi > 0.0 && pi < 1.0) {
            return Err(DomainError::new(
                "impostor_prior",
                format!("impostor_prior must lie in (0,1), got {pi}"),
            ));
        }
        for (name, m) in [("legit_score", &self.legit_score), ("impostor_score", &self.impostor_score)] {
            if !m.mean.is_finite() {
                return Err(DomainError::new(format!("{name}.mean"), "mean must be finite"));
            }
            if !(m.stddev.is_finite() && m.stddev > 0.0) {
                return Err(DomainError::new(format!("{name}.stddev"), "stddev must be > 0"));
            }
        }
        if let Some(d) = &self.drift {
            if !d.rate.is_finite() {
                return Err(DomainError::new("drift.rate", "rate must be finite"));
            }
        }
        if let Some(a) = &self.adversary {
            if !(a.probe_step_size.is_finite() && a.probe_step_size >= 0.0) {
                return Err(DomainError::new(
                    "adversary.probe_step_size",
                    "probe_step_size must be finite and >= 0",
                ));
            }
            if a.probe_batch == 0 {
                return Err(DomainError::new("adversary.probe_batch", "probe_batch must be >= 1"));
            }
            if let Some(dir) = a.direction {
                if dir != 1.0 && dir != -1.0 {
                    return Err(DomainError::new("adversary.direction", "direction must be 1 or -1"));
                }
            }
        }
        self.challenge.validate()?;
        if self.horizon == 0 {
            return Err(DomainError::new("horizon", "horizon must be >= 1"));
        }
        if self.replications == 0 {
            return Err(DomainError::new("replications", "replications must be >= 1"));
        }
        match self.initial_calibration {
            InitialCalibration::Warmup if self.warmup < 2 => {
                return Err(DomainError::new("warmup", "warmup must be >= 2"));
            }
            InitialCalibration::Analytic if self.legit_score.stddev != self.impostor_score.stddev => {
                return Err(DomainError::new(
                    "initial_calibration",
                    "analytic calibration needs equal class stddevs",
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Legitimate score mean at `step`, including drift.
    pub fn legit_mean_at(&self, step: u64) -> f64 {
        match &self.drift {
            Some(d) if step >= d.start_step => {
                self.legit_score.mean + d.rate * (step - d.start_step) as f64
            }
            _ => self.legit_score.mean,
        }
    }

    /// Posterior map for the undrifted equal-variance model.
    pub fn analytic_calibration(&self) -> PlattParams {
        let (mi, ml) = (self.impostor_score.mean, self.legit_score.mean);
        let var = self.legit_score.stddev.powi(2);
        let pi = self.impostor_prior;
        PlattParams::new(
            (mi - ml) / var,
            (pi / (1.0 - pi)).ln() + (ml * ml - mi * mi) / (2.0 * var),
        )
    }

    fn adversary_direction(&self) -> f64 {
        self.adversary
            .and_then(|a| a.direction)
            .unwrap_or(if self.legit_score.mean >= self.impostor_score.mean {
                1.0
            } else {
                -1.0
            })
    }
}

// ---------------------------------------------------------------------------
// Event generation and adversary
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryState {
    pub probe_mean: f64,
    pub direction: f64,
    /// Outcomes of the current, incomplete batch: (raw score, accepted).
    pub batch: Vec<(f64, bool)>,
    pub last_accept_rate: Option<f64>,
    pub batches_completed: u64,
}

impl AdversaryState {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            probe_mean: scenario.impostor_score.mean,
            direction: scenario.adversary_direction(),
            batch: Vec::new(),
            last_accept_rate: None,
            batches_completed: 0,
        }
    }
}

/// Draws one event. The truth draw and one standard-normal draw are always
/// consumed (plus one uniform when buckets are configured), so the stream
/// position never depends on earlier decisions.
pub fn generate_event<R: Rng + ?Sized>(
    scenario: &Scenario,
    step: u64,
    event_id: u64,
    adversary: Option<&AdversaryState>,
    rng: &mut R,
) -> AuthEvent {
    let impostor = rng.random::<f64>() < scenario.impostor_prior;
    let z: f64 = rng.sample(StandardNormal);
    let raw_score = if impostor {
        let probe = scenario
            .adversary
            .filter(|a| a.adapt)
            .and(adversary)
            .map(|s| s.probe_mean);
        probe.unwrap_or(scenario.impostor_score.mean) + scenario.impostor_score.stddev * z
    } else {
        scenario.legit_mean_at(step) + scenario.legit_score.stddev * z
    };

    let mut event = AuthEvent {
        event_id,
        timestamp_step: step,
        raw_score,
        features: Vec::new(),
        bucket: None,
        truth: Some(if impostor { Label::Impostor } else { Label::Legitimate }),
    };

    let buckets = &scenario.challenge.buckets;
    let total: f64 = buckets.iter().map(|b| b.weight).sum();
    if total > 0.0 {
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = buckets.len() - 1;
        for (i, b) in buckets.iter().enumerate() {
            acc += b.weight;
            if u < acc {
                chosen = i;
                break;
            }
        }
        event.bucket = Some(buckets[chosen].name.clone());
        event.features = vec![chosen as f64];
    }
    event
}

/// Records one impostor attempt. When the batch fills up, the probe mean
/// moves by `probe_step_size` toward the mean of the accepted scores (never
/// past it), or in the configured direction if nothing was accepted.
pub fn adversary_update(
    state: &AdversaryState,
    config: &AdversaryConfig,
    observed: (f64, Action),
) -> AdversaryState {
    let mut next = state.clone();
    if !config.adapt {
        return next;
    }
    let (score, action) = observed;
    next.batch.push((score, action == Action::Accept));
    if next.batch.len() < config.probe_batch {
        return next;
    }

    let accepted: Vec<f64> = next.batch.iter().filter(|b| b.1).map(|b| b.0).collect();
    next.last_accept_rate = Some(accepted.len() as f64 / next.batch.len() as f64);
    let step = config.probe_step_size;
    if accepted.is_empty() {
        next.probe_mean += step * next.direction;
    } else {
        let target = accepted.iter().sum::<f64>() / accepted.len() as f64;
        let gap = target - next.probe_mean;
        if gap.abs() <= step {
            next.probe_mean = target;
        } else {
            next.probe_mean += gap.signum() * step;
        }
    }
    next.batch.clear();
    next.batches_completed += 1;
    next
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

/// One step of a trace as persisted (one JSON object per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub event_id: u64,
    pub raw_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bucket: Option<String>,
    pub p: f64,
    pub action: Action,
    pub risks: ActionRisks,
    pub cvar_terms: [f64; 3],
    pub voi: Option<f64>,
    pub explored: bool,
    pub label: Label,
    pub loss: f64,
    pub leakage: f64,
    /// Committed leakage (spent plus reserved) right after this decision.
    pub epsilon: f64,
    pub challenge: ChallengeParams,
}

impl StepRecord {
    pub fn loss_record(&self) -> LossRecord {
        LossRecord {
            event_id: self.event_id,
            action: self.action,
            label: self.label,
            realized_loss: self.loss,
            leakage_spent: self.leakage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub rates: Rates,
    pub total_loss: f64,
    pub total_leakage: f64,
    pub epsilon_final: f64,
    pub refits: u64,
    pub skipped_refits: u64,
    pub max_drift_index: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub fingerprint: String,
    pub replication: usize,
    pub seed: u64,
    pub horizon: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub drift: Vec<DriftRecord>,
    pub summary: TraceSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum TraceLine {
    Header(TraceHeader),
    Step(StepRecord),
    Drift(DriftRecord),
    Summary(TraceSummary),
}

impl Trace {
    pub fn loss_records(&self) -> Vec<LossRecord> {
        self.steps.iter().map(StepRecord::loss_record).collect()
    }

    pub fn total_loss(&self) -> f64 {
        self.summary.total_loss
    }

    fn summarize(steps: &[StepRecord], drift: &[DriftRecord], policy: &AdaptivePolicy) -> TraceSummary {
        TraceSummary {
            rates: riskmetrics::empirical_rates(steps.iter().map(|s| (s.action, s.label))),
            total_loss: steps.iter().map(|s| s.loss).sum(),
            total_leakage: steps.iter().map(|s| s.leakage).sum(),
            epsilon_final: policy.state.epsilon_spent(),
            refits: policy.state.refits(),
            skipped_refits: policy.state.skipped_refits(),
            max_drift_index: drift.iter().map(|d| d.index).reduce(f64::max),
        }
    }

    /// Line-delimited JSON: header, one line per step, drift records, summary.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut line = |value: &TraceLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut out, value)?;
            out.write_all(b"\n")
        };
        line(&TraceLine::Header(self.header.clone()))?;
        for s in &self.steps {
            line(&TraceLine::Step(s.clone()))?;
        }
        for d in &self.drift {
            line(&TraceLine::Drift(*d))?;
        }
        line(&TraceLine::Summary(self.summary.clone()))
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, SimError> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut drift = Vec::new();
        let mut summary = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| SimError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                TraceLine::Header(h) => header = Some(h),
                TraceLine::Step(s) => steps.push(s),
                TraceLine::Drift(d) => drift.push(d),
                TraceLine::Summary(s) => summary = Some(s),
            }
        }
        let missing = |what: &str| SimError::Parse {
            line: 0,
            message: format!("missing {what} line"),
        };
        Ok(Trace {
            header: header.ok_or_else(|| missing("header"))?,
            steps,
            drift,
            summary: summary.ok_or_else(|| missing("summary"))?,
        })
    }
}

// ---------------------------------------------------------------------------
// Simulation loop
// ---------------------------------------------------------------------------

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deployment calibration map for one replication.
pub fn initial_map(
    scenario: &Scenario,
    config: &PolicyConfig,
    replication_seed: u64,
) -> Result<CalibrationMap, SimError> {
    match scenario.initial_calibration {
        InitialCalibration::Analytic => Ok(scenario.analytic_calibration().into()),
        InitialCalibration::Warmup => {
            let mut rng = stream_rng(replication_seed, WARMUP_STREAM);
            let mut scores = Vec::with_capacity(scenario.warmup);
            let mut labels = Vec::with_capacity(scenario.warmup);
            for i in 0..scenario.warmup {
                let e = generate_event(scenario, 0, i as u64, None, &mut rng);
                scores.push(e.raw_score);
                labels.push(e.truth.expect("generated events carry truth"));
            }
            Ok(calibration::fit(config.calibration_kind, &scores, &labels)?)
        }
    }
}

/// Runs one replication with seed `scenario.seed ^ replication`.
pub fn run_replication(
    scenario: &Scenario,
    config: &PolicyConfig,
    replication: usize,
) -> Result<Trace, SimError> {
    let seed = scenario.seed ^ replication as u64;
    let mut event_rng = stream_rng(seed, EVENT_STREAM);
    let mut outcome_rng = stream_rng(seed, OUTCOME_STREAM);
    let map = initial_map(scenario, config, seed)?;
    let mut policy = AdaptivePolicy::new(
        config.clone(),
        scenario.challenge.clone(),
        map,
        seed ^ POLICY_SEED_SALT,
    )?;

    let mut adversary = scenario.adversary.map(|_| AdversaryState::new(scenario));
    let mut pending: VecDeque<(StepDecision, Outcome, u64, f64, Option<String>)> = VecDeque::new();
    let mut steps = Vec::with_capacity(scenario.horizon as usize);

    let mut resolve = |policy: &mut AdaptivePolicy,
                       (decision, outcome, _, epsilon, bucket): (StepDecision, Outcome, u64, f64, Option<String>)|
     -> Result<(), SimError> {
        let record = policy.feedback(&decision, &outcome)?;
        steps.push(StepRecord {
            t: decision.step,
            event_id: decision.event_id,
            raw_score: decision.raw_score,
            bucket,
            p: decision.p,
            action: decision.action,
            risks: decision.risks,
            cvar_terms: decision.cvar_terms,
            voi: decision.voi,
            explored: decision.explored,
            label: outcome.label,
            loss: record.realized_loss,
            leakage: record.leakage_spent,
            epsilon,
            challenge: decision.challenge,
        });
        Ok(())
    };

    for t in 0..scenario.horizon {
        let event = generate_event(scenario, t, t, adversary.as_ref(), &mut event_rng);
        let label = event.truth.expect("generated events carry truth");
        let mut decision = policy.decide(&event)?;
        decision.step = t;
        let epsilon = policy.state.epsilon_committed();

        let challenge_passed = (decision.action == Action::Challenge).then(|| {
            let u: f64 = outcome_rng.random();
            match label {
                // The step-up catches an impostor with probability rho.
                Label::Impostor => u >= decision.challenge.rho,
                Label::Legitimate => u < decision.challenge.rho_for_legit(),
            }
        });

        if let (Some(cfg), Some(state)) = (scenario.adversary.as_ref(), adversary.as_mut()) {
            if label.is_impostor() {
                *state = adversary_update(state, cfg, (event.raw_score, decision.action));
            }
        }

        let outcome = Outcome {
            event_id: event.event_id,
            label,
            challenge_passed,
        };
        pending.push_back((decision, outcome, t + config.feedback_lag as u64, epsilon, event.bucket));
        while pending.front().is_some_and(|p| p.2 <= t) {
            let item = pending.pop_front().expect("front checked");
            resolve(&mut policy, item)?;
        }
    }
    while let Some(item) = pending.pop_front() {
        resolve(&mut policy, item)?;
    }

    let drift = policy.state.drift_history().to_vec();
    let summary = Trace::summarize(&steps, &drift, &policy);
    Ok(Trace {
        header: TraceHeader {
            fingerprint: scenario.fingerprint(),
            replication,
            seed,
            horizon: scenario.horizon,
        },
        steps,
        drift,
        summary,
    })
}

/// Runs all replications (concurrently) and returns their traces in
/// replication order.
pub fn run_simulation(scenario: &Scenario, config: &PolicyConfig) -> Result<Vec<Trace>, SimError> {
    scenario.validate()?;
    config.validate()?;
    (0..scenario.replications)
        .into_par_iter()
        .map(|r| run_replication(scenario, config, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CostParameters;

    fn config() -> PolicyConfig {
        let mut c = PolicyConfig::new(CostParameters::new(100.0, 5.0, 1.0, 0.0).unwrap());
        c.beta = 0.0;
        c
    }

    #[test]
    fn zero_prior_generates_only_legit() {
        let mut s = Scenario::minimal(0.5, 10);
        s.impostor_prior = 0.0;
        let mut rng = stream_rng(3, EVENT_STREAM);
        for t in 0..1000 {
            let e = generate_event(&s, t, t, None, &mut rng);
            assert_eq!(e.truth, Some(Label::Legitimate));
        }
    }

    #[test]
    fn fixed_seed_reproduces_events() {
        let s = Scenario::minimal(0.3, 10);
        let draw = || {
            let mut rng = stream_rng(11, EVENT_STREAM);
            (0..50)
                .map(|t| generate_event(&s, t, t, None, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn rejected_batch_moves_by_step() {
        let mut s = Scenario::minimal(0.3, 10);
        let cfg = AdversaryConfig {
            probe_step_size: 0.25,
            probe_batch: 3,
            adapt: true,
            direction: None,
        };
        s.adversary = Some(cfg);
        let mut st = AdversaryState::new(&s);
        assert_eq!(st.direction, -1.0);
        for score in [1.0, 1.2, 0.8] {
            st = adversary_update(&st, &cfg, (score, Action::Reject));
        }
        assert_eq!(st.probe_mean, 0.75);
        assert_eq!(st.last_accept_rate, Some(0.0));
        assert!(st.batch.is_empty());
    }

    #[test]
    fn accepted_batch_moves_toward_accepted_mean() {
        let s = Scenario::minimal(0.3, 10);
        let cfg = AdversaryConfig {
            probe_step_size: 5.0,
            probe_batch: 2,
            adapt: true,
            direction: None,
        };
        let mut st = AdversaryState::new(&s);
        st = adversary_update(&st, &cfg, (0.2, Action::Accept));
        st = adversary_update(&st, &cfg, (3.0, Action::Reject));
        // Step larger than the gap: lands exactly on the accepted mean.
        assert_eq!(st.probe_mean, 0.2);
        assert_eq!(st.last_accept_rate, Some(0.5));
    }

    #[test]
    fn zero_step_adversary_is_stationary() {
        let s = Scenario::minimal(0.3, 10);
        let cfg = AdversaryConfig {
            probe_step_size: 0.0,
            probe_batch: 1,
            adapt: true,
            direction: None,
        };
        let mut st = AdversaryState::new(&s);
        for i in 0..20 {
            let a = if i % 2 == 0 { Action::Accept } else { Action::Reject };
            st = adversary_update(&st, &cfg, (i as f64, a));
        }
        assert_eq!(st.probe_mean, s.impostor_score.mean);
    }

    #[test]
    fn zero_horizon_rejected() {
        let s = Scenario::minimal(0.3, 0);
        let err = run_simulation(&s, &config()).unwrap_err();
        assert!(err.to_string().contains("horizon"));
    }

    #[test]
    fn scenario_validation_names_fields() {
        let mut s = Scenario::minimal(1.5, 10);
        assert_eq!(s.validate().unwrap_err().field, "impostor_prior");
        s.impostor_prior = 0.1;
        s.legit_score.stddev = 0.0;
        assert_eq!(s.validate().unwrap_err().field, "legit_score.stddev");
    }

    #[test]
    fn analytic_map_is_bayes_posterior() {
        let mut s = Scenario::minimal(0.2, 1);
        s.legit_score = ScoreModel { mean: -0.5, stddev: 1.5 };
        s.impostor_score = ScoreModel { mean: 1.0, stddev: 1.5 };
        let map = s.analytic_calibration();
        let pdf = |x: f64, m: ScoreModel| (-(x - m.mean).powi(2) / (2.0 * m.stddev.powi(2))).exp();
        for x in [-2.0, 0.0, 0.7, 3.0] {
            let num = 0.2 * pdf(x, s.impostor_score);
            let post = num / (num + 0.8 * pdf(x, s.legit_score));
            assert!((map.raw_probability(x) - post).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_round_trips_through_jsonl() {
        let mut s = Scenario::minimal(0.2, 300);
        s.seed = 5;
        s.warmup = 500;
        let traces = run_simulation(&s, &config()).unwrap();
        let bytes = traces[0].to_jsonl_bytes();
        let back = Trace::read_jsonl(bytes.as_slice()).unwrap();
        assert_eq!(back, traces[0]);
        assert_eq!(back.steps.len(), 300);
    }

    #[test]
    fn feedback_lag_preserves_order_and_cap() {
        let mut s = Scenario::minimal(0.3, 400);
        s.warmup = 500;
        let mut c = config();
        c.feedback_lag = 7;
        c.epsilon_max = Some(5.0);
        let t = run_simulation(&s, &c).unwrap().remove(0);
        assert_eq!(t.steps.len(), 400);
        assert!(t.steps.windows(2).all(|w| w[0].t + 1 == w[1].t));
        assert!(t.steps.iter().all(|st| st.epsilon <= 5.0));
        assert!(t.summary.epsilon_final <= 5.0);
    }
}
