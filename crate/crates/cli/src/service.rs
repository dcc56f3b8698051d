//! HTTP scoring service around a single policy state.
//!
//! `POST /decide`, `POST /feedback` and `GET /metrics` all go through one
//! mutex. A due reoptimization runs on a clone of the state outside the
//! lock; until the refitted state is swapped back in, requests that would
//! touch the state get 503.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use riskcost_core::policy::{self, cumulative_objective, ObjectiveSummary, PolicyError};
use riskcost_core::riskmetrics;
use riskcost_core::{
    Action, ActionRisks, AdaptivePolicy, AuthEvent, CalibrationMap, ChallengeModel, Label, Outcome,
    PolicyConfig, PolicyState, Rates, StepDecision,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecideRequest {
    pub raw_score: f64,
    #[serde(default)]
    pub feature_bucket: Option<String>,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecideResponse {
    pub event_id: u64,
    pub action: Action,
    pub p: f64,
    pub risks: ActionRisks,
    pub voi: Option<f64>,
    pub epsilon_spent: f64,
    pub policy_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRequest {
    pub event_id: u64,
    pub label: Label,
    #[serde(default)]
    pub challenge_passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub event_id: u64,
    pub realized_loss: f64,
    pub epsilon_spent: f64,
    pub reoptimized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsResponse {
    pub decisions: u64,
    pub feedback: u64,
    pub pending: usize,
    pub rates: Rates,
    pub epsilon_spent: f64,
    pub epsilon_committed: f64,
    pub drift_index: Option<f64>,
    pub objective: Option<ObjectiveSummary>,
    pub refits: u64,
    pub policy_version: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

struct Inner {
    config: PolicyConfig,
    model: ChallengeModel,
    state: PolicyState,
    pending: HashMap<u64, StepDecision>,
    next_event_id: u64,
    decisions: u64,
    version: String,
    swapping: bool,
}

/// Shared handle to the service state.
#[derive(Clone)]
pub struct ServiceState {
    inner: Arc<Mutex<Inner>>,
}

/// Content hash of the configuration and the calibration map in force.
pub fn policy_version(config: &PolicyConfig, map: &CalibrationMap) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(serde_json::to_vec(map).expect("map serializes"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl ServiceState {
    pub fn new(policy: AdaptivePolicy) -> Self {
        let version = policy_version(&policy.config, policy.state.calibration());
        Self {
            inner: Arc::new(Mutex::new(Inner {
                config: policy.config,
                model: policy.model,
                state: policy.state,
                pending: HashMap::new(),
                next_event_id: 0,
                decisions: 0,
                version,
                swapping: false,
            })),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panic inside a handler cannot leave the state half-updated in a
        // way later requests care about more than a dead service would.
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Copy of the current policy, for parity checks against the library.
    pub fn snapshot(&self) -> AdaptivePolicy {
        let g = self.lock();
        AdaptivePolicy {
            config: g.config.clone(),
            model: g.model.clone(),
            state: g.state.clone(),
            reports: Vec::new(),
        }
    }

    /// Marks a reoptimization swap as in progress (requests get 503).
    pub fn set_swapping(&self, swapping: bool) {
        self.lock().swapping = swapping;
    }
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/decide", post(decide))
        .route("/feedback", post(feedback))
        .route("/metrics", get(metrics))
        .with_state(state)
}

#[allow(clippy::result_large_err)]
fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

fn busy() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "policy reoptimization in progress")
}

async fn decide(State(service): State<ServiceState>, body: Bytes) -> Response {
    let req: DecideRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let mut g = service.lock();
    if g.swapping {
        return busy();
    }
    let id = g.next_event_id;
    let event = match AuthEvent::new(id, g.state.step(), req.raw_score) {
        Ok(e) => e,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let event = match req.feature_bucket {
        Some(b) => event.with_bucket(b),
        None => event,
    };
    let inner = &mut *g;
    let decision = match policy::policy_step(&mut inner.state, &inner.config, &inner.model, &event) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    g.next_event_id += 1;
    g.decisions += 1;
    let resp = DecideResponse {
        event_id: id,
        action: decision.action,
        p: decision.p,
        risks: decision.risks,
        voi: decision.voi,
        epsilon_spent: g.state.epsilon_spent(),
        policy_version: g.version.clone(),
    };
    tracing::debug!(event_id = id, action = decision.action.as_str(), p = decision.p, "decide");
    g.pending.insert(id, decision);
    Json(resp).into_response()
}

async fn feedback(State(service): State<ServiceState>, body: Bytes) -> Response {
    let req: FeedbackRequest = match parse(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let outcome = Outcome {
        event_id: req.event_id,
        label: req.label,
        challenge_passed: req.challenge_passed,
    };

    let (record, due, clone) = {
        let mut g = service.lock();
        if g.swapping {
            return busy();
        }
        let Some(decision) = g.pending.get(&req.event_id).cloned() else {
            return error(StatusCode::CONFLICT, format!("unknown or already resolved event_id {}", req.event_id));
        };
        let inner = &mut *g;
        let record = match policy::policy_update(&mut inner.state, &inner.config, &decision, &outcome) {
            Ok(r) => r,
            Err(e @ PolicyError::MissingChallengeOutcome(_)) => {
                return error(StatusCode::BAD_REQUEST, e.to_string())
            }
            Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        };
        g.pending.remove(&req.event_id);
        let due = g.state.step().is_multiple_of(g.config.reoptimize_every as u64);
        let clone = due.then(|| {
            g.swapping = true;
            (g.state.clone(), g.config.clone())
        });
        (record, due, clone)
    };

    if let Some((mut state, config)) = clone {
        let result = policy::reoptimize(&mut state, &config);
        let mut g = service.lock();
        match result {
            Ok(report) => {
                g.version = policy_version(&g.config, state.calibration());
                g.state = state;
                tracing::info!(step = report.step, refit = report.refit, "reoptimized");
            }
            Err(e) => tracing::warn!(error = %e, "reoptimization failed; keeping previous state"),
        }
        g.swapping = false;
    }

    let g = service.lock();
    Json(FeedbackResponse {
        event_id: req.event_id,
        realized_loss: record.realized_loss,
        epsilon_spent: g.state.epsilon_spent(),
        reoptimized: due,
    })
    .into_response()
}

async fn metrics(State(service): State<ServiceState>) -> Response {
    let g = service.lock();
    if g.swapping {
        return busy();
    }
    let log = g.state.log();
    let rates = riskmetrics::empirical_rates(log.iter().map(|r| (r.action, r.label)));
    let objective = if log.is_empty() {
        None
    } else {
        cumulative_objective(&[log], &g.config).ok()
    };
    Json(MetricsResponse {
        decisions: g.decisions,
        feedback: log.len() as u64,
        pending: g.pending.len(),
        rates,
        epsilon_spent: g.state.epsilon_spent(),
        epsilon_committed: g.state.epsilon_committed(),
        drift_index: g.state.last_drift(),
        objective,
        refits: g.state.refits(),
        policy_version: g.version.clone(),
    })
    .into_response()
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: ServiceState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
