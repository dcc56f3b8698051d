//! Policy-level risk accounting: empirical error rates, the linear risk
//! functional, CVaR (tail average and Rockafellar–Uryasev dual) and
//! threshold cost curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Action, CostParameters, Label};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("loss sample is empty")]
    EmptySample,
    #[error("values and weights differ in length ({values} vs {weights})")]
    LengthMismatch { values: usize, weights: usize },
    #[error("non-finite loss value at index {0}")]
    NonFiniteValue(usize),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("alpha must lie in [0,1), got {0}")]
    InvalidAlpha(f64),
    #[error("thresholds must be strictly increasing within [0,1]")]
    UnsortedThresholds,
}

// ---------------------------------------------------------------------------
// Rates
// ---------------------------------------------------------------------------

/// Empirical false-accept, false-reject and challenge rates with their
/// denominators.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rates {
    pub far: f64,
    pub frr: f64,
    pub chr: f64,
    pub impostor_count: usize,
    pub legit_count: usize,
    pub total_count: usize,
    pub false_accepts: usize,
    pub false_rejects: usize,
    pub challenges: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn empirical_rates<I>(records: I) -> Rates
where
    I: IntoIterator<Item = (Action, Label)>,
{
    let mut r = Rates::default();
    for (action, label) in records {
        r.total_count += 1;
        match label {
            Label::Impostor => r.impostor_count += 1,
            Label::Legitimate => r.legit_count += 1,
        }
        match (action, label) {
            (Action::Accept, Label::Impostor) => r.false_accepts += 1,
            (Action::Reject, Label::Legitimate) => r.false_rejects += 1,
            (Action::Challenge, _) => r.challenges += 1,
            _ => {}
        }
    }
    r.far = ratio(r.false_accepts, r.impostor_count);
    r.frr = ratio(r.false_rejects, r.legit_count);
    r.chr = ratio(r.challenges, r.total_count);
    r
}

/// `c_fa·FAR + c_fr·FRR + c_ch·CHR + λ·leakage`.
pub fn risk_functional(rates: &Rates, costs: &CostParameters, leakage: f64) -> f64 {
    costs.c_fa() * rates.far
        + costs.c_fr() * rates.frr
        + costs.c_ch_base() * rates.chr
        + costs.lambda() * leakage
}

// ---------------------------------------------------------------------------
// Loss samples and CVaR
// ---------------------------------------------------------------------------

/// A discrete loss distribution: values with probability weights summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl LossSample {
    pub fn uniform(values: Vec<f64>) -> Result<Self, RiskError> {
        let n = values.len();
        if n == 0 {
            return Err(RiskError::EmptySample);
        }
        let w = 1.0 / n as f64;
        Self::checked(values, vec![w; n])
    }

    /// Weighted sample; weights are non-negative with positive sum and are
    /// normalized to 1.
    pub fn weighted(values: Vec<f64>, weights: Vec<f64>) -> Result<Self, RiskError> {
        if values.len() != weights.len() {
            return Err(RiskError::LengthMismatch {
                values: values.len(),
                weights: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(RiskError::InvalidWeights("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(RiskError::InvalidWeights("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::checked(values, weights)
    }

    fn checked(values: Vec<f64>, weights: Vec<f64>) -> Result<Self, RiskError> {
        if values.is_empty() {
            return Err(RiskError::EmptySample);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RiskError::NonFiniteValue(i));
        }
        Ok(Self { values, weights })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Same weights, values transformed.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self, RiskError> {
        Self::checked(self.values.iter().map(|&v| f(v)).collect(), self.weights.clone())
    }
}

fn check_alpha(alpha: f64) -> Result<(), RiskError> {
    if alpha.is_finite() && (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(RiskError::InvalidAlpha(alpha))
    }
}

/// Mass-weighted mean of the worst `1 - alpha` of the distribution. The atom
/// straddling the tail boundary contributes only its share of the tail mass.
pub fn cvar_sorted(sample: &LossSample, alpha: f64) -> Result<f64, RiskError> {
    check_alpha(alpha)?;
    if sample.is_empty() {
        return Err(RiskError::EmptySample);
    }
    let tail = 1.0 - alpha;
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.sort_by(|&i, &j| sample.values[j].total_cmp(&sample.values[i]));

    let mut remaining = tail;
    let mut acc = 0.0;
    let mut last = sample.values[order[0]];
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let take = sample.weights[i].min(remaining);
        acc += take * sample.values[i];
        remaining -= take;
        last = sample.values[i];
    }
    // Rounding in the weights can leave a sliver of tail mass unassigned; it
    // belongs to the last atom reached.
    if remaining > 0.0 {
        acc += remaining * last;
    }
    Ok(acc / tail)
}

/// `cvar_sorted` for equally weighted values in linear time (selection
/// instead of a full sort). Used on the policy's rolling loss buffers.
pub fn cvar_uniform<I>(values: I, alpha: f64) -> Result<f64, RiskError>
where
    I: IntoIterator<Item = f64>,
{
    check_alpha(alpha)?;
    let mut v: Vec<f64> = values.into_iter().collect();
    let n = v.len();
    if n == 0 {
        return Err(RiskError::EmptySample);
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(RiskError::NonFiniteValue(i));
    }
    let tail_atoms = (1.0 - alpha) * n as f64;
    let full = tail_atoms.floor() as usize;
    if full >= n {
        return Ok(v.iter().sum::<f64>() / n as f64);
    }
    let frac = tail_atoms - full as f64;
    v.select_nth_unstable_by(full, |a, b| b.total_cmp(a));
    let top: f64 = v[..full].iter().sum();
    Ok((top + frac * v[full]) / tail_atoms)
}

/// Result of minimizing the Rockafellar–Uryasev objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvarDual {
    pub t_star: f64,
    pub value: f64,
}

/// `t + E[(L - t)+] / (1 - alpha)`.
pub fn ru_objective(sample: &LossSample, alpha: f64, t: f64) -> f64 {
    let excess: f64 = sample
        .values
        .iter()
        .zip(&sample.weights)
        .map(|(&v, &w)| w * (v - t).max(0.0))
        .sum();
    t + excess / (1.0 - alpha)
}

/// Minimizes the Rockafellar–Uryasev objective exactly. The objective is
/// convex and piecewise linear with kinks at sample values, so the minimum
/// is attained at one of them; the lowest such `t` is returned on ties.
///
/// Runs in `O(n log n)`: after sorting, the objective at each distinct value
/// is updated incrementally from the previous one.
pub fn cvar_dual(sample: &LossSample, alpha: f64) -> Result<CvarDual, RiskError> {
    check_alpha(alpha)?;
    if sample.is_empty() {
        return Err(RiskError::EmptySample);
    }
    let mut pairs: Vec<(f64, f64)> = sample
        .values
        .iter()
        .copied()
        .zip(sample.weights.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Group equal values.
    let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for (v, w) in pairs {
        match atoms.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => atoms.push((v, w)),
        }
    }

    let scale = 1.0 / (1.0 - alpha);
    // Suffix sums of weight and weight*value above each atom.
    let n = atoms.len();
    let mut mass_above = vec![0.0; n];
    let mut first_moment_above = vec![0.0; n];
    for k in (0..n.saturating_sub(1)).rev() {
        mass_above[k] = mass_above[k + 1] + atoms[k + 1].1;
        first_moment_above[k] = first_moment_above[k + 1] + atoms[k + 1].1 * atoms[k + 1].0;
    }

    let mut best = CvarDual {
        t_star: atoms[0].0,
        value: f64::INFINITY,
    };
    for k in 0..n {
        let t = atoms[k].0;
        let excess = first_moment_above[k] - t * mass_above[k];
        let value = t + scale * excess.max(0.0);
        if value < best.value {
            best = CvarDual { t_star: t, value };
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Cost curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurvePoint {
    pub threshold: f64,
    /// Mean realized loss per attempt when accepting iff `p < threshold`.
    pub expected_loss: f64,
    /// Rate-form risk functional at this threshold (leakage 0).
    pub risk_functional: f64,
    pub rates: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub points: Vec<CostCurvePoint>,
    /// Index of the threshold with the lowest expected loss (first on ties).
    pub argmin: usize,
}

impl CostCurve {
    pub fn best(&self) -> &CostCurvePoint {
        &self.points[self.argmin]
    }
}

/// `n + 1` evenly spaced thresholds on `[0,1]`.
pub fn uniform_thresholds(n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

fn check_thresholds(thresholds: &[f64]) -> Result<(), RiskError> {
    let in_range = thresholds.iter().all(|t| (0.0..=1.0).contains(t));
    let increasing = thresholds.windows(2).all(|w| w[0] < w[1]);
    if thresholds.is_empty() || !in_range || !increasing {
        return Err(RiskError::UnsortedThresholds);
    }
    Ok(())
}

/// Two-action cost curve: for each threshold, accept iff `p < threshold`
/// else reject. Thresholds are evaluated in parallel and assembled in order.
pub fn cost_curve(
    scored: &[(f64, Label)],
    costs: &CostParameters,
    thresholds: &[f64],
) -> Result<CostCurve, RiskError> {
    check_thresholds(thresholds)?;
    let n = scored.len().max(1) as f64;
    let points: Vec<CostCurvePoint> = thresholds
        .par_iter()
        .map(|&tau| {
            let rates = empirical_rates(scored.iter().map(|&(p, label)| {
                let action = if p < tau { Action::Accept } else { Action::Reject };
                (action, label)
            }));
            let expected_loss = (costs.c_fa() * rates.false_accepts as f64
                + costs.c_fr() * rates.false_rejects as f64)
                / n;
            CostCurvePoint {
                threshold: tau,
                expected_loss,
                risk_functional: risk_functional(&rates, costs, 0.0),
                rates,
            }
        })
        .collect();
    let argmin = points
        .iter()
        .enumerate()
        .fold(0, |best, (i, pt)| {
            if pt.expected_loss < points[best].expected_loss {
                i
            } else {
                best
            }
        });
    Ok(CostCurve { points, argmin })
}

/// One point of the three-action sweep over challenge friction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeSweepPoint {
    pub c_ch: f64,
    pub expected_loss: f64,
    pub rates: Rates,
}

/// Three-action sweep: for each friction value, every scored attempt takes
/// its Bayes action and is charged the expected loss of that action given
/// its true label (challenge outcomes priced through `rho`).
pub fn challenge_cost_sweep(
    scored: &[(f64, Label)],
    costs: &CostParameters,
    rho: f64,
    c_ch_values: &[f64],
) -> Vec<ChallengeSweepPoint> {
    use crate::decision::{action_risks, bayes_action};
    use crate::domain::ChallengeParams;

    let n = scored.len().max(1) as f64;
    c_ch_values
        .par_iter()
        .filter_map(|&c_ch| {
            let ch = ChallengeParams::new(rho, c_ch, 0.0).ok()?;
            let mut total = 0.0;
            let mut decided = Vec::with_capacity(scored.len());
            for &(p, label) in scored {
                let p = p.clamp(crate::calibration::PROB_FLOOR, 1.0 - crate::calibration::PROB_FLOOR);
                let risks = action_risks(p, &ch, costs).ok()?;
                let action = bayes_action(&risks, 0.0);
                total += match (action, label) {
                    (Action::Accept, Label::Impostor) => costs.c_fa(),
                    (Action::Reject, Label::Legitimate) => costs.c_fr(),
                    (Action::Challenge, Label::Impostor) => c_ch + (1.0 - rho) * costs.c_fa(),
                    (Action::Challenge, Label::Legitimate) => c_ch + (1.0 - rho) * costs.c_fr(),
                    _ => 0.0,
                };
                decided.push((action, label));
            }
            Some(ChallengeSweepPoint {
                c_ch,
                expected_loss: total / n,
                rates: empirical_rates(decided),
            })
        })
        .collect()
}
