//! Risk-cost decision engine for adaptive authentication.
//!
//! Attempts are scored, calibrated to impostor probabilities and routed to
//! ACCEPT, CHALLENGE or REJECT by minimizing expected monetary loss, with
//! optional tail-risk (CVaR), distributional-robustness and privacy-budget
//! terms. A seeded simulator exercises policies under drift and an adaptive
//! probing adversary.

pub mod calibration;
pub mod decision;
pub mod domain;
pub mod policy;
pub mod riskmetrics;
pub mod robust;
pub mod simulator;

pub use calibration::{CalibrationKind, CalibrationMap, IsotonicMap, PlattParams};
pub use decision::{ActionRisks, SignalModel};
pub use domain::{Action, AuthEvent, ChallengeModel, ChallengeParams, CostParameters, Label, LossRecord};
pub use policy::{AdaptivePolicy, Outcome, PolicyConfig, PolicyState, StepDecision};
pub use riskmetrics::{LossSample, Rates};
pub use robust::{AmbiguityKind, AmbiguitySpec};
pub use simulator::{Scenario, Trace};

