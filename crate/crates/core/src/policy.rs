//! Sequential risk- and privacy-aware authentication policy.
//!
//! Each step calibrates the raw score, prices every action, adds a β-weighted
//! tail term estimated from the losses previously realized under that action,
//! enforces the privacy budget, and takes the argmin. Feedback appends the
//! realized loss to the action's rolling buffer and charges the leakage of an
//! issued challenge. Every `reoptimize_every` updates the calibration map is
//! refit on the rolling window and the drift index is recomputed.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{self, CalibrationError, CalibrationKind, CalibrationMap, Histogram};
use crate::decision::{self, ActionRisks, DecisionError, SignalModel};
use crate::domain::{Action, AuthEvent, ChallengeModel, ChallengeParams, CostParameters, Label, LossRecord};
use crate::riskmetrics::{self, LossSample, RiskError};
use crate::robust::{AmbiguityKind, AmbiguitySpec, RobustError};

/// Buffers shorter than this contribute no tail or robustness term.
pub const CVAR_WARMUP: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("invalid policy config: {field}: {message}")]
    InvalidConfig { field: String, message: String },
    #[error("outcome for event {outcome} does not match decision for event {decision}")]
    EventMismatch { decision: u64, outcome: u64 },
    #[error("challenge issued for event {0} but no challenge outcome was supplied")]
    MissingChallengeOutcome(u64),
    #[error("raw score for event {0} is not finite")]
    NonFiniteScore(u64),
    #[error("no replications to aggregate")]
    NoReplications,
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

fn invalid(field: &str, message: impl Into<String>) -> PolicyError {
    PolicyError::InvalidConfig {
        field: field.to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

/// Which gate decides whether CHALLENGE is on the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChallengeRule {
    /// Challenge competes on its ρ-priced risk.
    #[default]
    Bayes,
    /// Challenge is only available when its value of information is positive.
    Voi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Economic constants; `costs.lambda` is the soft price per leakage unit.
    pub costs: CostParameters,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    /// Robust radius; 0 disables robustification.
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub ambiguity_kind: AmbiguityKind,
    /// Hard cap on cumulative leakage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_max: Option<f64>,
    #[serde(default = "defaults::window")]
    pub window: usize,
    #[serde(default = "defaults::reoptimize_every")]
    pub reoptimize_every: usize,
    #[serde(default)]
    pub challenge_rule: ChallengeRule,
    #[serde(default)]
    pub explore_rate: f64,
    /// Refit the calibration map on each reoptimization. When false the map
    /// fitted at deployment stays fixed.
    #[serde(default = "defaults::yes")]
    pub refit_calibration: bool,
    #[serde(default)]
    pub calibration_kind: CalibrationKind,
    /// Steps between a decision and the arrival of its outcome.
    #[serde(default)]
    pub feedback_lag: usize,
    #[serde(default = "defaults::drift_bins")]
    pub drift_bins: usize,
}

mod defaults {
    pub fn alpha() -> f64 {
        0.99
    }
    pub fn beta() -> f64 {
        0.1
    }
    pub fn window() -> usize {
        500
    }
    pub fn reoptimize_every() -> usize {
        100
    }
    pub fn drift_bins() -> usize {
        10
    }
    pub fn yes() -> bool {
        true
    }
}

impl PolicyConfig {
    pub fn new(costs: CostParameters) -> Self {
        Self {
            costs,
            alpha: defaults::alpha(),
            beta: defaults::beta(),
            delta: 0.0,
            ambiguity_kind: AmbiguityKind::default(),
            epsilon_max: None,
            window: defaults::window(),
            reoptimize_every: defaults::reoptimize_every(),
            challenge_rule: ChallengeRule::default(),
            explore_rate: 0.0,
            refit_calibration: true,
            calibration_kind: CalibrationKind::default(),
            feedback_lag: 0,
            drift_bins: defaults::drift_bins(),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.costs.lambda()
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.alpha.is_finite() && (0.0..1.0).contains(&self.alpha)) {
            return Err(invalid("alpha", "alpha must lie in [0,1)"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(invalid("beta", "beta must be finite and >= 0"));
        }
        AmbiguitySpec::new(self.ambiguity_kind, self.delta)
            .map_err(|e| invalid("delta", e.to_string()))?;
        if let Some(cap) = self.epsilon_max {
            if !(cap.is_finite() && cap >= 0.0) {
                return Err(invalid("epsilon_max", "epsilon_max must be finite and >= 0"));
            }
        }
        if self.window == 0 {
            return Err(invalid("window", "window must be >= 1"));
        }
        if self.reoptimize_every == 0 {
            return Err(invalid("reoptimize_every", "reoptimize_every must be >= 1"));
        }
        if !(self.explore_rate.is_finite() && (0.0..=1.0).contains(&self.explore_rate)) {
            return Err(invalid("explore_rate", "explore_rate must lie in [0,1]"));
        }
        if self.drift_bins == 0 {
            return Err(invalid("drift_bins", "drift_bins must be >= 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub step: u64,
    pub index: f64,
}

/// Mutable state of one policy instance. Single owner.
#[derive(Debug, Clone)]
pub struct PolicyState {
    step: u64,
    epsilon_spent: f64,
    /// Leakage of challenges issued but not yet resolved by feedback.
    epsilon_pending: f64,
    buffers: [VecDeque<f64>; 3],
    log: Vec<LossRecord>,
    map: CalibrationMap,
    rng: ChaCha8Rng,
    labeled_window: VecDeque<(f64, Label)>,
    prob_history: VecDeque<f64>,
    drift: Vec<DriftRecord>,
    skipped_refits: u64,
    refits: u64,
}

impl PolicyState {
    pub fn new(map: CalibrationMap, seed: u64) -> Self {
        Self {
            step: 0,
            epsilon_spent: 0.0,
            epsilon_pending: 0.0,
            buffers: Default::default(),
            log: Vec::new(),
            map,
            rng: ChaCha8Rng::seed_from_u64(seed),
            labeled_window: VecDeque::new(),
            prob_history: VecDeque::new(),
            drift: Vec::new(),
            skipped_refits: 0,
            refits: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epsilon_spent(&self) -> f64 {
        self.epsilon_spent
    }

    /// Spent plus reserved-by-unresolved-challenges leakage.
    pub fn epsilon_committed(&self) -> f64 {
        self.epsilon_spent + self.epsilon_pending
    }

    pub fn buffer(&self, action: Action) -> &VecDeque<f64> {
        &self.buffers[action.index()]
    }

    pub fn log(&self) -> &[LossRecord] {
        &self.log
    }

    pub fn calibration(&self) -> &CalibrationMap {
        &self.map
    }

    pub fn drift_history(&self) -> &[DriftRecord] {
        &self.drift
    }

    pub fn last_drift(&self) -> Option<f64> {
        self.drift.last().map(|d| d.index)
    }

    pub fn skipped_refits(&self) -> u64 {
        self.skipped_refits
    }

    pub fn refits(&self) -> u64 {
        self.refits
    }
}

// ---------------------------------------------------------------------------
// Step
// ---------------------------------------------------------------------------

/// Everything decided for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDecision {
    pub event_id: u64,
    pub step: u64,
    pub raw_score: f64,
    pub p: f64,
    pub action: Action,
    /// Analytic one-step risks at `p`.
    pub risks: ActionRisks,
    /// β·CVaR tail term per action, indexed ACCEPT, CHALLENGE, REJECT.
    pub cvar_terms: [f64; 3],
    /// Score each available action was ranked by (`None` = infeasible).
    pub scores: [Option<f64>; 3],
    pub voi: Option<f64>,
    pub explored: bool,
    /// Challenge parameters in force for this event.
    pub challenge: ChallengeParams,
}

/// Chooses an action for `event`. Only the exploration generator and the
/// pending-leakage reservation of an issued challenge are mutated.
pub fn policy_step(
    state: &mut PolicyState,
    config: &PolicyConfig,
    model: &ChallengeModel,
    event: &AuthEvent,
) -> Result<StepDecision, PolicyError> {
    if !event.raw_score.is_finite() {
        return Err(PolicyError::NonFiniteScore(event.event_id));
    }
    let costs = &config.costs;
    let p = calibration::apply_calibration(&state.map, event.raw_score);
    let challenge = model.at(event);
    let risks = decision::action_risks(p, &challenge, costs)?;

    let mut cvar_terms = [0.0; 3];
    let mut estimates = [risks.accept, risks.challenge.unwrap_or(0.0), risks.reject];
    for action in Action::ALL {
        let buf = &state.buffers[action.index()];
        if buf.len() < CVAR_WARMUP {
            continue;
        }
        if config.beta > 0.0 {
            let cvar = riskmetrics::cvar_uniform(buf.iter().copied(), config.alpha)?;
            cvar_terms[action.index()] = config.beta * cvar;
        }
        if config.delta > 0.0 {
            // Robustness premium of the action's realized-loss history on top
            // of its contextual risk.
            let sample = LossSample::uniform(buf.iter().copied().collect())?;
            let spec = AmbiguitySpec::new(config.ambiguity_kind, config.delta)?;
            estimates[action.index()] += spec.worst_case_mean(&sample)? - sample.mean();
        }
    }

    let leakage_penalty = config.lambda() * challenge.leakage;
    let within_cap = config
        .epsilon_max
        .is_none_or(|cap| state.epsilon_committed() + challenge.leakage <= cap);
    let mut voi = None;
    let mut challenge_feasible = within_cap;
    if config.challenge_rule == ChallengeRule::Voi {
        let signal = SignalModel::from_challenge(&challenge);
        let v = decision::value_of_information(
            p,
            &signal,
            &challenge,
            costs,
            config.lambda(),
            challenge.leakage,
        )?;
        voi = Some(v);
        challenge_feasible &= decision::step_up_gate(v);
    }

    let ranked = ActionRisks {
        accept: estimates[0] + cvar_terms[0],
        reject: estimates[2] + cvar_terms[2],
        challenge: challenge_feasible.then(|| estimates[1] + cvar_terms[1]),
    };
    let scores = [
        Some(ranked.accept),
        ranked.challenge.map(|c| c + leakage_penalty),
        Some(ranked.reject),
    ];

    let mut explored = false;
    let action = if config.explore_rate > 0.0 && state.rng.random::<f64>() < config.explore_rate {
        explored = true;
        let feasible: Vec<Action> = Action::ALL
            .into_iter()
            .filter(|a| scores[a.index()].is_some())
            .collect();
        feasible[state.rng.random_range(0..feasible.len())]
    } else {
        decision::bayes_action(&ranked, leakage_penalty)
    };

    if action == Action::Challenge {
        state.epsilon_pending += challenge.leakage;
    }

    Ok(StepDecision {
        event_id: event.event_id,
        step: state.step,
        raw_score: event.raw_score,
        p,
        action,
        risks,
        cvar_terms,
        scores,
        voi,
        explored,
        challenge,
    })
}

// ---------------------------------------------------------------------------
// Update
// ---------------------------------------------------------------------------

/// Observed outcome of a decision. `challenge_passed` is whether the user
/// completed the step-up; it is required when the action was CHALLENGE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub event_id: u64,
    pub label: Label,
    #[serde(default)]
    pub challenge_passed: Option<bool>,
}

/// Realized loss of a decision under the outcome table.
pub fn realized_loss(
    action: Action,
    label: Label,
    challenge_passed: Option<bool>,
    challenge: &ChallengeParams,
    costs: &CostParameters,
) -> Option<f64> {
    Some(match (action, label) {
        (Action::Accept, Label::Impostor) => costs.c_fa(),
        (Action::Accept, Label::Legitimate) => 0.0,
        (Action::Reject, Label::Legitimate) => costs.c_fr(),
        (Action::Reject, Label::Impostor) => 0.0,
        (Action::Challenge, label) => {
            let passed = challenge_passed?;
            challenge.c_ch
                + match (label, passed) {
                    (Label::Impostor, true) => costs.c_fa(),
                    (Label::Legitimate, false) => costs.c_fr(),
                    _ => 0.0,
                }
        }
    })
}

/// Applies feedback for `decision`: logs the realized loss, pushes it into
/// the action's buffer, charges leakage for an issued challenge and advances
/// the step counter.
pub fn policy_update(
    state: &mut PolicyState,
    config: &PolicyConfig,
    decision: &StepDecision,
    outcome: &Outcome,
) -> Result<LossRecord, PolicyError> {
    if decision.event_id != outcome.event_id {
        return Err(PolicyError::EventMismatch {
            decision: decision.event_id,
            outcome: outcome.event_id,
        });
    }
    let loss = realized_loss(
        decision.action,
        outcome.label,
        outcome.challenge_passed,
        &decision.challenge,
        &config.costs,
    )
    .ok_or(PolicyError::MissingChallengeOutcome(decision.event_id))?;

    let leakage = if decision.action == Action::Challenge {
        decision.challenge.leakage
    } else {
        0.0
    };
    if leakage > 0.0 {
        state.epsilon_pending = (state.epsilon_pending - leakage).max(0.0);
        state.epsilon_spent += leakage;
    }

    let record = LossRecord {
        event_id: decision.event_id,
        action: decision.action,
        label: outcome.label,
        realized_loss: loss,
        leakage_spent: leakage,
    };
    state.log.push(record);

    let buf = &mut state.buffers[decision.action.index()];
    buf.push_back(loss);
    while buf.len() > config.window {
        buf.pop_front();
    }

    state.labeled_window.push_back((decision.raw_score, outcome.label));
    while state.labeled_window.len() > config.window {
        state.labeled_window.pop_front();
    }
    state.prob_history.push_back(decision.p);
    while state.prob_history.len() > 2 * config.window {
        state.prob_history.pop_front();
    }

    state.step += 1;
    Ok(record)
}

// ---------------------------------------------------------------------------
// Reoptimization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReoptimizeReport {
    pub step: u64,
    pub refit: bool,
    pub skipped_reason: Option<String>,
    pub drift_index: Option<f64>,
}

/// Refits calibration on the labeled window (when enabled and both classes
/// are present) and records the drift index between the two most recent
/// disjoint windows of decision-time probabilities.
pub fn reoptimize(
    state: &mut PolicyState,
    config: &PolicyConfig,
) -> Result<ReoptimizeReport, PolicyError> {
    let mut report = ReoptimizeReport {
        step: state.step,
        refit: false,
        skipped_reason: None,
        drift_index: None,
    };

    if config.refit_calibration && !state.labeled_window.is_empty() {
        let impostors = state
            .labeled_window
            .iter()
            .filter(|(_, l)| l.is_impostor())
            .count();
        if impostors == 0 || impostors == state.labeled_window.len() {
            state.skipped_refits += 1;
            let reason = "window holds a single class".to_string();
            tracing::debug!(step = state.step, "calibration refit skipped: {reason}");
            report.skipped_reason = Some(reason);
        } else {
            let (scores, labels): (Vec<f64>, Vec<Label>) =
                state.labeled_window.iter().copied().unzip();
            state.map = calibration::fit(config.calibration_kind, &scores, &labels)?;
            state.refits += 1;
            report.refit = true;
        }
    }

    let w = config.window;
    if state.prob_history.len() >= 2 * w {
        let n = state.prob_history.len();
        let edges = Histogram::unit(config.drift_bins)?.edges().to_vec();
        let previous =
            Histogram::from_values(edges.clone(), state.prob_history.range(n - 2 * w..n - w).copied())?;
        let current = Histogram::from_values(edges, state.prob_history.range(n - w..).copied())?;
        let index = calibration::drift_index(&previous, &current)?;
        state.drift.push(DriftRecord {
            step: state.step,
            index,
        });
        report.drift_index = Some(index);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Policy handle
// ---------------------------------------------------------------------------

/// Config, challenge model and state bundled for callers that drive the
/// full decide/feedback/reoptimize loop.
#[derive(Debug, Clone)]
pub struct AdaptivePolicy {
    pub config: PolicyConfig,
    pub model: ChallengeModel,
    pub state: PolicyState,
    pub reports: Vec<ReoptimizeReport>,
}

impl AdaptivePolicy {
    pub fn new(
        config: PolicyConfig,
        model: ChallengeModel,
        map: CalibrationMap,
        seed: u64,
    ) -> Result<Self, PolicyError> {
        config.validate()?;
        model
            .validate()
            .map_err(|e| invalid(&e.field, e.message))?;
        Ok(Self {
            config,
            model,
            state: PolicyState::new(map, seed),
            reports: Vec::new(),
        })
    }

    pub fn decide(&mut self, event: &AuthEvent) -> Result<StepDecision, PolicyError> {
        policy_step(&mut self.state, &self.config, &self.model, event)
    }

    /// Applies feedback and reoptimizes when the update count reaches a
    /// multiple of `reoptimize_every`.
    pub fn feedback(
        &mut self,
        decision: &StepDecision,
        outcome: &Outcome,
    ) -> Result<LossRecord, PolicyError> {
        let record = policy_update(&mut self.state, &self.config, decision, outcome)?;
        if self.state.step.is_multiple_of(self.config.reoptimize_every as u64) {
            let report = reoptimize(&mut self.state, &self.config)?;
            self.reports.push(report);
        }
        Ok(record)
    }
}

// ---------------------------------------------------------------------------
// Multi-replication objective
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSummary {
    pub expected: f64,
    pub cvar: f64,
    pub leakage: f64,
    pub total: f64,
    pub replications: usize,
}

/// `E[Σ L_t] + β·CVaR_α(Σ L_t) + λ·E[Σ Δε_t]` across replications, with the
/// CVaR taken over the per-replication loss sums.
pub fn cumulative_objective<L>(logs: &[L], config: &PolicyConfig) -> Result<ObjectiveSummary, PolicyError>
where
    L: AsRef<[LossRecord]>,
{
    if logs.is_empty() {
        return Err(PolicyError::NoReplications);
    }
    let sums: Vec<f64> = logs
        .iter()
        .map(|l| l.as_ref().iter().map(|r| r.realized_loss).sum())
        .collect();
    let leak: Vec<f64> = logs
        .iter()
        .map(|l| l.as_ref().iter().map(|r| r.leakage_spent).sum())
        .collect();
    let n = sums.len() as f64;
    let expected = sums.iter().sum::<f64>() / n;
    let sample = LossSample::uniform(sums)?;
    let cvar = riskmetrics::cvar_sorted(&sample, config.alpha)?;
    let leakage = leak.iter().sum::<f64>() / n;
    Ok(ObjectiveSummary {
        expected,
        cvar,
        leakage,
        total: expected + config.beta * cvar + config.lambda() * leakage,
        replications: logs.len(),
    })
}
