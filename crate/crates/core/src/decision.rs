//! One-step Bayes action selection.
//!
//! Given a calibrated impostor probability `p`, the expected loss of each
//! action is
//!
//! ```text
//! accept    = p * c_fa
//! reject    = (1 - p) * c_fr
//! challenge = c_ch + p (1 - rho) c_fa + (1 - p)(1 - rho_legit) c_fr
//! ```
//!
//! Without a challenge the rule reduces to accepting iff `p < c_fr / (c_fa + c_fr)`.
//! The value-of-information gate prices a step-up as a finite signal `Z`
//! observed before a final ACCEPT/REJECT.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Action, ChallengeParams, CostParameters, DomainError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecisionError {
    #[error("probability {0} outside (0,1)")]
    ProbabilityOutOfRange(f64),
    #[error("invalid signal model: {0}")]
    InvalidSignal(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Expected loss of each action for one event. `challenge` is `None` when a
/// step-up is not available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRisks {
    pub accept: f64,
    pub reject: f64,
    pub challenge: Option<f64>,
}

impl ActionRisks {
    pub fn get(&self, action: Action) -> Option<f64> {
        match action {
            Action::Accept => Some(self.accept),
            Action::Reject => Some(self.reject),
            Action::Challenge => self.challenge,
        }
    }

    pub fn without_challenge(mut self) -> Self {
        self.challenge = None;
        self
    }

    /// Smallest risk among the available actions.
    pub fn min_risk(&self) -> f64 {
        let base = self.accept.min(self.reject);
        self.challenge.map_or(base, |c| base.min(c))
    }
}

fn check_probability(p: f64) -> Result<(), DecisionError> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(DecisionError::ProbabilityOutOfRange(p))
    }
}

pub fn action_risks(
    p: f64,
    challenge: &ChallengeParams,
    costs: &CostParameters,
) -> Result<ActionRisks, DecisionError> {
    check_probability(p)?;
    challenge.validate("challenge")?;
    let miss_impostor = 1.0 - challenge.rho;
    let miss_legit = 1.0 - challenge.rho_for_legit();
    Ok(ActionRisks {
        accept: p * costs.c_fa(),
        reject: (1.0 - p) * costs.c_fr(),
        challenge: Some(
            challenge.c_ch
                + p * miss_impostor * costs.c_fa()
                + (1.0 - p) * miss_legit * costs.c_fr(),
        ),
    })
}

/// Argmin over available actions of `risk (+ penalty for CHALLENGE)`. Ties go
/// to the earlier action in ACCEPT < CHALLENGE < REJECT.
pub fn bayes_action(risks: &ActionRisks, leakage_penalty_per_challenge: f64) -> Action {
    let mut best = (Action::Accept, risks.accept);
    if let Some(c) = risks.challenge {
        let score = c + leakage_penalty_per_challenge;
        if score < best.1 {
            best = (Action::Challenge, score);
        }
    }
    if risks.reject < best.1 {
        best = (Action::Reject, risks.reject);
    }
    best.0
}

/// Probability cut-off `c_fr / (c_fa + c_fr)` below which ACCEPT beats REJECT.
pub fn accept_threshold(costs: &CostParameters) -> f64 {
    costs.c_fr() / (costs.c_fa() + costs.c_fr())
}

// ---------------------------------------------------------------------------
// Value of information
// ---------------------------------------------------------------------------

/// Likelihoods of each step-up observation under the two classes, stored as
/// `(P(z | legitimate), P(z | impostor))` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    outcomes: Vec<(f64, f64)>,
}

impl SignalModel {
    pub fn new(outcomes: Vec<(f64, f64)>) -> Result<Self, DecisionError> {
        if outcomes.is_empty() {
            return Err(DecisionError::InvalidSignal("empty alphabet".into()));
        }
        if outcomes
            .iter()
            .any(|&(l, i)| !(l.is_finite() && i.is_finite() && l >= 0.0 && i >= 0.0))
        {
            return Err(DecisionError::InvalidSignal(
                "likelihoods must be finite and >= 0".into(),
            ));
        }
        let (sl, si) = outcomes
            .iter()
            .fold((0.0, 0.0), |(a, b), &(l, i)| (a + l, b + i));
        if (sl - 1.0).abs() > 1e-9 || (si - 1.0).abs() > 1e-9 {
            return Err(DecisionError::InvalidSignal(format!(
                "columns must sum to 1 (got {sl}, {si})"
            )));
        }
        Ok(Self { outcomes })
    }

    /// Pass/fail signal implied by a challenge: a legitimate user passes with
    /// probability `rho_legit`, an impostor with probability `1 - rho`.
    pub fn from_challenge(challenge: &ChallengeParams) -> Self {
        let pass_legit = challenge.rho_for_legit();
        let pass_impostor = 1.0 - challenge.rho;
        Self {
            outcomes: vec![
                (pass_legit, pass_impostor),
                (1.0 - pass_legit, 1.0 - pass_impostor),
            ],
        }
    }

    pub fn outcomes(&self) -> &[(f64, f64)] {
        &self.outcomes
    }
}

fn two_action_risk(p: f64, costs: &CostParameters) -> f64 {
    (p * costs.c_fa()).min((1.0 - p) * costs.c_fr())
}

/// Expected reduction in two-action Bayes risk from observing the signal,
/// net of challenge friction and priced leakage. Outcomes with zero marginal
/// probability contribute nothing.
pub fn value_of_information(
    p: f64,
    signal: &SignalModel,
    challenge: &ChallengeParams,
    costs: &CostParameters,
    lambda: f64,
    delta_leakage: f64,
) -> Result<f64, DecisionError> {
    check_probability(p)?;
    let prior = two_action_risk(p, costs);
    let mut posterior_expected = 0.0;
    for &(given_legit, given_impostor) in &signal.outcomes {
        let joint_imp = p * given_impostor;
        let marginal = joint_imp + (1.0 - p) * given_legit;
        if marginal <= 0.0 {
            continue;
        }
        let post = joint_imp / marginal;
        posterior_expected += marginal * two_action_risk(post, costs);
    }
    Ok(prior - posterior_expected - (challenge.c_ch + lambda * delta_leakage))
}

/// A step-up is issued only on strictly positive net value.
pub fn step_up_gate(voi: f64) -> bool {
    voi > 0.0
}
