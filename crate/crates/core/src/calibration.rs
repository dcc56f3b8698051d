//! Score calibration: Platt scaling, isotonic regression (PAVA), reliability
//! diagrams and a population-stability drift index.
//!
//! Calibrated probabilities are always the probability that the attempt is an
//! impostor. They are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` so posterior
//! odds stay finite downstream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Label;

/// Lower clamp for calibrated probabilities; the upper clamp is `1 - PROB_FLOOR`.
pub const PROB_FLOOR: f64 = 1e-9;

/// Default ridge strength for Platt fitting.
pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Mass assigned to empty histogram bins when computing the drift index.
pub const DRIFT_MASS_FLOOR: f64 = 1e-6;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("only one class present; both legitimate and impostor labels are required")]
    SingleClass,
    #[error("non-finite input at index {0}")]
    NonFinite(usize),
    #[error("probability out of [0,1] at index {0}")]
    ProbabilityOutOfRange(usize),
    #[error("ridge must be finite and >= 0")]
    InvalidRidge,
    #[error("n_bins must be at least 1")]
    ZeroBins,
    #[error("histograms have different bin edges")]
    MismatchedEdges,
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("invalid bin edges: {0}")]
    InvalidEdges(String),
}

// ---------------------------------------------------------------------------
// Maps
// ---------------------------------------------------------------------------

/// Sigmoid calibration `p = 1 / (1 + exp(-(a * score + b)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn raw_probability(&self, score: f64) -> f64 {
        sigmoid(self.a * score + self.b)
    }
}

/// Monotone step function over ascending score breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    breakpoints: Vec<(f64, f64)>,
}

impl IsotonicMap {
    /// Builds a map from `(score, probability)` pairs, checking that scores
    /// strictly increase and probabilities are non-decreasing within `[0,1]`.
    pub fn from_breakpoints(breakpoints: Vec<(f64, f64)>) -> Result<Self, CalibrationError> {
        if breakpoints.is_empty() {
            return Err(CalibrationError::TooFewSamples { needed: 1, got: 0 });
        }
        for (i, &(s, p)) in breakpoints.iter().enumerate() {
            if !s.is_finite() || !p.is_finite() {
                return Err(CalibrationError::NonFinite(i));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(CalibrationError::ProbabilityOutOfRange(i));
            }
            if i > 0 {
                let (ps, pp) = breakpoints[i - 1];
                if s <= ps || p < pp {
                    return Err(CalibrationError::InvalidEdges(format!(
                        "breakpoint {i} breaks monotonicity"
                    )));
                }
            }
        }
        Ok(Self { breakpoints })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Unclamped step lookup: the value of the last breakpoint at or below
    /// `score`, flat beyond both ends.
    pub fn value_at(&self, score: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&(s, _)| s <= score);
        if idx == 0 {
            self.breakpoints[0].1
        } else {
            self.breakpoints[idx - 1].1
        }
    }
}

/// A fitted calibration map of either kind. Serialized with a `kind` tag so
/// the JSON document is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CalibrationMap {
    Platt(PlattParams),
    Isotonic(IsotonicMap),
}

impl CalibrationMap {
    pub fn apply(&self, score: f64) -> f64 {
        apply_calibration(self, score)
    }

    pub fn kind(&self) -> CalibrationKind {
        match self {
            CalibrationMap::Platt(_) => CalibrationKind::Platt,
            CalibrationMap::Isotonic(_) => CalibrationKind::Isotonic,
        }
    }
}

impl From<PlattParams> for CalibrationMap {
    fn from(p: PlattParams) -> Self {
        CalibrationMap::Platt(p)
    }
}

impl From<IsotonicMap> for CalibrationMap {
    fn from(m: IsotonicMap) -> Self {
        CalibrationMap::Isotonic(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationKind {
    #[default]
    Platt,
    Isotonic,
}

/// Fits a map of the requested kind.
pub fn fit(
    kind: CalibrationKind,
    scores: &[f64],
    labels: &[Label],
) -> Result<CalibrationMap, CalibrationError> {
    match kind {
        CalibrationKind::Platt => fit_platt(scores, labels, DEFAULT_RIDGE).map(Into::into),
        CalibrationKind::Isotonic => fit_isotonic(scores, labels).map(Into::into),
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_pairs(scores: &[f64], labels: &[Label], needed: usize) -> Result<(), CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.len() < needed {
        return Err(CalibrationError::TooFewSamples {
            needed,
            got: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(CalibrationError::NonFinite(i));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Platt scaling
// ---------------------------------------------------------------------------

/// Ridge-penalized mean logistic loss minimized by `fit_platt`:
/// `(1/n) Σ [softplus(z) - y z] + (ridge/2)(a² + b²)` with `z = a s + b`.
pub fn platt_objective(scores: &[f64], targets: &[f64], ridge: f64, a: f64, b: f64) -> f64 {
    let n = scores.len() as f64;
    let nll: f64 = scores
        .iter()
        .zip(targets)
        .map(|(&s, &y)| {
            let z = a * s + b;
            softplus(z) - y * z
        })
        .sum();
    nll / n + 0.5 * ridge * (a * a + b * b)
}

/// Fits Platt parameters by damped Newton iterations on the ridge-penalized
/// mean logistic loss. Stops when the gradient norm reaches 1e-8 or after
/// 100 iterations.
pub fn fit_platt(
    scores: &[f64],
    labels: &[Label],
    ridge: f64,
) -> Result<PlattParams, CalibrationError> {
    check_pairs(scores, labels, 2)?;
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(CalibrationError::InvalidRidge);
    }
    let n_imp = labels.iter().filter(|l| l.is_impostor()).count();
    if n_imp == 0 || n_imp == labels.len() {
        return Err(CalibrationError::SingleClass);
    }

    let targets: Vec<f64> = labels.iter().map(|l| l.indicator()).collect();
    let n = scores.len() as f64;
    let (mut a, mut b) = (0.0_f64, 0.0_f64);
    let mut obj = platt_objective(scores, &targets, ridge, a, b);

    for _ in 0..NEWTON_MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &y) in scores.iter().zip(&targets) {
            let p = sigmoid(a * s + b);
            let r = p - y;
            let w = p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        ga = ga / n + ridge * a;
        gb = gb / n + ridge * b;
        haa = haa / n + ridge;
        hab /= n;
        hbb = hbb / n + ridge;

        if ga.hypot(gb) <= NEWTON_GRAD_TOL {
            break;
        }

        // Newton direction, falling back to the gradient when the Hessian is
        // numerically singular (ridge = 0 on separable data).
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 1e-300 && det.is_finite() {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga, -gb)
        };

        let slope = ga * da + gb * db;
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-12 {
            let (na, nb) = (a + step * da, b + step * db);
            let nobj = platt_objective(scores, &targets, ridge, na, nb);
            if nobj <= obj + 1e-4 * step * slope {
                a = na;
                b = nb;
                obj = nobj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if !a.is_finite() || !b.is_finite() {
        return Err(CalibrationError::NonFinite(0));
    }
    Ok(PlattParams { a, b })
}

// ---------------------------------------------------------------------------
// Isotonic regression
// ---------------------------------------------------------------------------

/// Monotone least-squares fit of the impostor indicator against score, via
/// pool-adjacent-violators on tie-averaged blocks. The returned map has one
/// breakpoint per distinct score.
pub fn fit_isotonic(scores: &[f64], labels: &[Label]) -> Result<IsotonicMap, CalibrationError> {
    check_pairs(scores, labels, 1)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));

    // Collapse ties into (score, mean, weight).
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for &i in &order {
        let y = labels[i].indicator();
        match points.last_mut() {
            Some((s, sum, w)) if *s == scores[i] => {
                *sum += y;
                *w += 1.0;
            }
            _ => points.push((scores[i], y, 1.0)),
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1 / p.2).collect();
    let ws: Vec<f64> = points.iter().map(|p| p.2).collect();

    let fitted = pava(&ys, &ws);
    let breakpoints = xs
        .into_iter()
        .zip(fitted)
        .map(|(s, v)| (s, v.clamp(0.0, 1.0)))
        .collect();
    Ok(IsotonicMap { breakpoints })
}

/// Weighted pool-adjacent-violators. Returns one fitted value per input.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // Stack of blocks: (weighted mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (v, w, 1usize);
        while let Some(&(m, bw, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = bw + cur.1;
            cur = ((m * bw + cur.0 * cur.1) / tw, tw, len + cur.2);
        }
        blocks.push(cur);
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, len)| std::iter::repeat_n(m, len))
        .collect()
}

/// Maps a raw score to a clamped impostor probability.
pub fn apply_calibration(map: &CalibrationMap, score: f64) -> f64 {
    let p = match map {
        CalibrationMap::Platt(params) => params.raw_probability(score),
        CalibrationMap::Isotonic(iso) => iso.value_at(score),
    };
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

// ---------------------------------------------------------------------------
// Reliability diagram
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_predicted: f64,
    pub empirical_rate: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
}

fn bin_index(p: f64, n_bins: usize) -> usize {
    ((p * n_bins as f64).floor() as usize).min(n_bins - 1)
}

/// Equal-width reliability bins on `[0,1]` with empty bins omitted, plus the
/// expected calibration error.
pub fn reliability_bins(
    probs: &[f64],
    labels: &[Label],
    n_bins: usize,
) -> Result<ReliabilityDiagram, CalibrationError> {
    if n_bins == 0 {
        return Err(CalibrationError::ZeroBins);
    }
    check_pairs(probs, labels, 1)?;
    if let Some(i) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(CalibrationError::ProbabilityOutOfRange(i));
    }

    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&p, l) in probs.iter().zip(labels) {
        let k = bin_index(p, n_bins);
        sum_p[k] += p;
        sum_y[k] += l.indicator();
        counts[k] += 1;
    }

    let n = probs.len() as f64;
    let width = 1.0 / n_bins as f64;
    let mut bins = Vec::new();
    let mut ece = 0.0;
    for k in 0..n_bins {
        if counts[k] == 0 {
            continue;
        }
        let c = counts[k] as f64;
        let mean_predicted = sum_p[k] / c;
        let empirical_rate = sum_y[k] / c;
        ece += (c / n) * (mean_predicted - empirical_rate).abs();
        bins.push(ReliabilityBin {
            lower: k as f64 * width,
            upper: (k + 1) as f64 * width,
            mean_predicted,
            empirical_rate,
            count: counts[k],
        });
    }
    Ok(ReliabilityDiagram { bins, ece })
}

// ---------------------------------------------------------------------------
// Drift index
// ---------------------------------------------------------------------------

/// Counts over fixed bin edges. Values below the first edge go to the first
/// bin, values at or above the last edge to the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<f64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>) -> Result<Self, CalibrationError> {
        if edges.len() < 2 {
            return Err(CalibrationError::InvalidEdges("need at least two edges".into()));
        }
        if edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(CalibrationError::InvalidEdges("edges must increase".into()));
        }
        let n = edges.len() - 1;
        Ok(Self {
            edges,
            counts: vec![0.0; n],
        })
    }

    /// `n_bins` equal-width bins on `[0,1]`.
    pub fn unit(n_bins: usize) -> Result<Self, CalibrationError> {
        if n_bins == 0 {
            return Err(CalibrationError::ZeroBins);
        }
        Self::new((0..=n_bins).map(|k| k as f64 / n_bins as f64).collect())
    }

    /// Builds a histogram directly from bin masses or counts.
    pub fn from_counts(edges: Vec<f64>, counts: Vec<f64>) -> Result<Self, CalibrationError> {
        let mut h = Self::new(edges)?;
        if counts.len() != h.counts.len() {
            return Err(CalibrationError::InvalidEdges(format!(
                "{} counts for {} bins",
                counts.len(),
                h.counts.len()
            )));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(CalibrationError::InvalidEdges("counts must be finite and >= 0".into()));
        }
        h.counts = counts;
        Ok(h)
    }

    pub fn from_values(
        edges: Vec<f64>,
        values: impl IntoIterator<Item = f64>,
    ) -> Result<Self, CalibrationError> {
        let mut h = Self::new(edges)?;
        for v in values {
            h.add(v);
        }
        Ok(h)
    }

    pub fn add(&mut self, value: f64) {
        let k = self.edges.partition_point(|&e| e <= value);
        let bin = k.saturating_sub(1).min(self.counts.len() - 1);
        self.counts[bin] += 1.0;
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Population stability index `Σ (p_a - p_b) ln(p_a / p_b)` between two
/// histograms on the same edges. Bin masses are floored at 1e-6 so disjoint
/// supports give a large finite value.
pub fn drift_index(window_a: &Histogram, window_b: &Histogram) -> Result<f64, CalibrationError> {
    if window_a.edges != window_b.edges {
        return Err(CalibrationError::MismatchedEdges);
    }
    let (ta, tb) = (window_a.total(), window_b.total());
    if ta <= 0.0 || tb <= 0.0 {
        return Err(CalibrationError::EmptyHistogram);
    }
    let psi = window_a
        .counts
        .iter()
        .zip(&window_b.counts)
        .map(|(&ca, &cb)| {
            let pa = (ca / ta).max(DRIFT_MASS_FLOOR);
            let pb = (cb / tb).max(DRIFT_MASS_FLOOR);
            (pa - pb) * (pa / pb).ln()
        })
        .sum::<f64>();
    Ok(psi.max(0.0))
}
