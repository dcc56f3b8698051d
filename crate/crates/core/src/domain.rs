//! Shared vocabulary for the engine: actions, labels, cost constants,
//! authentication events and the step-up challenge model.
//!
//! Everything here is immutable after construction. Constructors are the
//! only way in, so a `CostParameters` or `ChallengeModel` that exists is
//! known to satisfy its invariants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Validation failure on a domain value. `field` names the offending input.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct DomainError {
    pub field: String,
    pub message: String,
}

impl DomainError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Action / Label
// ---------------------------------------------------------------------------

/// Authentication action. The derived order (ACCEPT < CHALLENGE < REJECT) is
/// used only to break ties deterministically toward lower friction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Accept,
    Challenge,
    Reject,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Accept, Action::Challenge, Action::Reject];

    pub fn index(self) -> usize {
        match self {
            Action::Accept => 0,
            Action::Challenge => 1,
            Action::Reject => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Accept => "ACCEPT",
            Action::Challenge => "CHALLENGE",
            Action::Reject => "REJECT",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ground truth of an attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[serde(alias = "legit", alias = "LEGITIMATE")]
    Legitimate,
    #[serde(alias = "IMPOSTOR")]
    Impostor,
}

impl Label {
    pub fn is_impostor(self) -> bool {
        matches!(self, Label::Impostor)
    }

    /// 1.0 for impostor, 0.0 for legitimate.
    pub fn indicator(self) -> f64 {
        if self.is_impostor() {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Legitimate => "legit",
            Label::Impostor => "impostor",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "legit" | "legitimate" | "l" | "0" => Ok(Label::Legitimate),
            "impostor" | "i" | "1" => Ok(Label::Impostor),
            other => Err(DomainError::new("label", format!("unknown label {other:?}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// CostParameters
// ---------------------------------------------------------------------------

/// Economic constants: loss per false accept, loss per false reject, base
/// challenge friction and the price of one unit of leakage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCosts", deny_unknown_fields)]
pub struct CostParameters {
    c_fa: f64,
    c_fr: f64,
    c_ch_base: f64,
    lambda: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCosts {
    c_fa: f64,
    c_fr: f64,
    #[serde(default)]
    c_ch_base: f64,
    #[serde(default)]
    lambda: f64,
}

impl TryFrom<RawCosts> for CostParameters {
    type Error = DomainError;

    fn try_from(raw: RawCosts) -> Result<Self, Self::Error> {
        CostParameters::new(raw.c_fa, raw.c_fr, raw.c_ch_base, raw.lambda)
    }
}

impl CostParameters {
    pub fn new(c_fa: f64, c_fr: f64, c_ch_base: f64, lambda: f64) -> Result<Self, DomainError> {
        validate_costs(CostParameters {
            c_fa,
            c_fr,
            c_ch_base,
            lambda,
        })
    }

    pub fn c_fa(&self) -> f64 {
        self.c_fa
    }

    pub fn c_fr(&self) -> f64 {
        self.c_fr
    }

    pub fn c_ch_base(&self) -> f64 {
        self.c_ch_base
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Same constants with a different leakage price.
    pub fn with_lambda(self, lambda: f64) -> Result<Self, DomainError> {
        Self::new(self.c_fa, self.c_fr, self.c_ch_base, lambda)
    }
}

/// Checks every cost invariant and hands the value back unchanged.
pub fn validate_costs(params: CostParameters) -> Result<CostParameters, DomainError> {
    let fields = [
        ("c_fa", params.c_fa),
        ("c_fr", params.c_fr),
        ("c_ch_base", params.c_ch_base),
        ("lambda", params.lambda),
    ];
    for (name, value) in fields {
        if !value.is_finite() {
            return Err(DomainError::new(name, format!("{name} not finite")));
        }
        if value < 0.0 {
            return Err(DomainError::new(name, format!("{name} negative")));
        }
    }
    if params.c_fa + params.c_fr <= 0.0 {
        return Err(DomainError::new(
            "c_fa+c_fr",
            "degenerate costs: c_fa + c_fr must be positive",
        ));
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// AuthEvent
// ---------------------------------------------------------------------------

/// One authentication attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthEvent {
    pub event_id: u64,
    pub timestamp_step: u64,
    pub raw_score: f64,
    #[serde(default)]
    pub features: Vec<f64>,
    /// Feature bucket that selects the challenge parameters.
    #[serde(default)]
    pub bucket: Option<String>,
    /// Ground truth; only simulator-generated events carry it.
    #[serde(default)]
    pub truth: Option<Label>,
}

impl AuthEvent {
    pub fn new(event_id: u64, timestamp_step: u64, raw_score: f64) -> Result<Self, DomainError> {
        if !raw_score.is_finite() {
            return Err(DomainError::new("raw_score", "raw_score not finite"));
        }
        Ok(Self {
            event_id,
            timestamp_step,
            raw_score,
            features: Vec::new(),
            bucket: None,
            truth: None,
        })
    }

    pub fn with_bucket(mut self, bucket: impl Into<String>) -> Self {
        self.bucket = Some(bucket.into());
        self
    }

    pub fn with_truth(mut self, truth: Label) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = features;
        self
    }
}

// ---------------------------------------------------------------------------
// Challenge model
// ---------------------------------------------------------------------------

/// Challenge parameters in force for one event.
///
/// `rho` is the probability that the step-up resolves an impostor correctly
/// (blocks it). `rho_legit`, when set, is the separate probability that a
/// legitimate user passes; otherwise `rho` is used for both classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeParams {
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_legit: Option<f64>,
    pub c_ch: f64,
    #[serde(default)]
    pub leakage: f64,
}

impl ChallengeParams {
    pub fn new(rho: f64, c_ch: f64, leakage: f64) -> Result<Self, DomainError> {
        let params = Self {
            rho,
            rho_legit: None,
            c_ch,
            leakage,
        };
        params.validate("challenge")?;
        Ok(params)
    }

    pub fn with_rho_legit(mut self, rho_legit: f64) -> Result<Self, DomainError> {
        self.rho_legit = Some(rho_legit);
        self.validate("challenge")?;
        Ok(self)
    }

    /// Probability a legitimate user completes the step-up.
    pub fn rho_for_legit(&self) -> f64 {
        self.rho_legit.unwrap_or(self.rho)
    }

    pub fn validate(&self, context: &str) -> Result<(), DomainError> {
        let unit = |name: &str, v: f64| -> Result<(), DomainError> {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(DomainError::new(
                    format!("{context}.{name}"),
                    format!("{name} must lie in [0,1], got {v}"),
                ));
            }
            Ok(())
        };
        unit("rho", self.rho)?;
        if let Some(r) = self.rho_legit {
            unit("rho_legit", r)?;
        }
        for (name, v) in [("c_ch", self.c_ch), ("leakage", self.leakage)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DomainError::new(
                    format!("{context}.{name}"),
                    format!("{name} must be finite and >= 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant challenge model keyed by feature bucket. Events whose
/// bucket is missing or unknown use `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeModel {
    pub default: ChallengeParams,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buckets: Vec<ChallengeBucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeBucket {
    pub name: String,
    /// Relative frequency of the bucket in generated traffic.
    #[serde(default = "one")]
    pub weight: f64,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_legit: Option<f64>,
    pub c_ch: f64,
    #[serde(default)]
    pub leakage: f64,
}

impl ChallengeBucket {
    pub fn new(name: impl Into<String>, weight: f64, params: ChallengeParams) -> Self {
        Self {
            name: name.into(),
            weight,
            rho: params.rho,
            rho_legit: params.rho_legit,
            c_ch: params.c_ch,
            leakage: params.leakage,
        }
    }

    pub fn params(&self) -> ChallengeParams {
        ChallengeParams {
            rho: self.rho,
            rho_legit: self.rho_legit,
            c_ch: self.c_ch,
            leakage: self.leakage,
        }
    }
}

fn one() -> f64 {
    1.0
}

impl ChallengeModel {
    pub fn uniform(params: ChallengeParams) -> Self {
        Self {
            default: params,
            buckets: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        self.default.validate("challenge.default")?;
        for (i, b) in self.buckets.iter().enumerate() {
            b.params().validate(&format!("challenge.buckets[{i}]"))?;
            if !(b.weight.is_finite() && b.weight >= 0.0) {
                return Err(DomainError::new(
                    format!("challenge.buckets[{i}].weight"),
                    "weight must be finite and >= 0",
                ));
            }
            if self.buckets[..i].iter().any(|o| o.name == b.name) {
                return Err(DomainError::new(
                    format!("challenge.buckets[{i}].name"),
                    format!("duplicate bucket {:?}", b.name),
                ));
            }
        }
        Ok(())
    }

    pub fn params_for_bucket(&self, bucket: Option<&str>) -> ChallengeParams {
        bucket
            .and_then(|name| self.buckets.iter().find(|b| b.name == name))
            .map(ChallengeBucket::params)
            .unwrap_or(self.default)
    }

    pub fn at(&self, event: &AuthEvent) -> ChallengeParams {
        self.params_for_bucket(event.bucket.as_deref())
    }
}

// ---------------------------------------------------------------------------
// LossRecord
// ---------------------------------------------------------------------------

/// Realized outcome of one decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub event_id: u64,
    pub action: Action,
    pub label: Label,
    pub realized_loss: f64,
    pub leakage_spent: f64,
}
