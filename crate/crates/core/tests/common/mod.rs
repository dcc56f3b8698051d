//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;

/// Random finite-support distribution. Roughly half the samples are equally
/// weighted; the rest get random weights, some of them zero, and repeated
/// values are common.
pub fn random_sample<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<f64>) {
    let coarse = rng.random_bool(0.3);
    let values: Vec<f64> = (0..n)
        .map(|_| {
            if coarse {
                rng.random_range(0..6) as f64
            } else {
                rng.random_range(-50.0..150.0)
            }
        })
        .collect();
    let weights = if rng.random_bool(0.5) {
        vec![1.0; n]
    } else {
        let mut w: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.01..5.0) })
            .collect();
        if w.iter().all(|&x| x == 0.0) {
            w[0] = 1.0;
        }
        w
    };
    (values, weights)
}

pub fn normalize(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Rockafellar–Uryasev objective evaluated naively.
pub fn ru_naive(values: &[f64], probs: &[f64], alpha: f64, t: f64) -> f64 {
    let excess: f64 = values
        .iter()
        .zip(probs)
        .map(|(v, p)| p * (v - t).max(0.0))
        .sum();
    t + excess / (1.0 - alpha)
}

/// CVaR as the minimum of the RU objective over every atom plus a dense
/// grid between the extremes.
pub fn cvar_grid(values: &[f64], probs: &[f64], alpha: f64, grid: usize) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = f64::INFINITY;
    for &t in values {
        best = best.min(ru_naive(values, probs, alpha, t));
    }
    for k in 0..=grid {
        let t = lo + (hi - lo) * k as f64 / grid as f64;
        best = best.min(ru_naive(values, probs, alpha, t));
    }
    best
}

/// Worst-case mean over the TV ball `½‖q - p‖₁ <= delta` as a linear program.
pub fn tv_lp(values: &[f64], probs: &[f64], delta: f64) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let q: Vec<_> = values.iter().map(|&v| lp.add_var(v, (0.0, 1.0))).collect();
    let u: Vec<_> = values.iter().map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    lp.add_constraint(
        q.iter().map(|&x| (x, 1.0)).collect::<Vec<_>>().as_slice(),
        ComparisonOp::Eq,
        1.0,
    );
    for i in 0..values.len() {
        lp.add_constraint([(u[i], 1.0), (q[i], -1.0)], ComparisonOp::Ge, -probs[i]);
        lp.add_constraint([(u[i], 1.0), (q[i], 1.0)], ComparisonOp::Ge, probs[i]);
    }
    lp.add_constraint(
        u.iter().map(|&x| (x, 1.0)).collect::<Vec<_>>().as_slice(),
        ComparisonOp::Le,
        2.0 * delta,
    );
    lp.solve().expect("TV program is feasible").objective()
}

fn chi2(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(a, b)| (a - b).powi(2) / b).sum()
}

/// Worst-case mean over `χ²(q‖p) <= delta` on 2 or 3 atoms by simplex grid
/// search with successive zooming around the incumbent.
pub fn chi2_grid(values: &[f64], probs: &[f64], delta: f64) -> f64 {
    assert!(values.len() == 2 || values.len() == 3);
    let obj = |q: &[f64]| -> f64 { q.iter().zip(values).map(|(a, b)| a * b).sum() };
    let feasible = |q: &[f64]| q.iter().all(|&x| x >= 0.0) && chi2(q, probs) <= delta;

    let mut best_q: Vec<f64> = probs.to_vec();
    let mut best = obj(&best_q);
    let mut center = (probs[0], *probs.get(1).unwrap_or(&0.0));
    let mut half = 1.0;
    let steps = if values.len() == 2 { 2000 } else { 300 };
    for _ in 0..14 {
        let h = 2.0 * half / steps as f64;
        for i in 0..=steps {
            let x = center.0 - half + i as f64 * h;
            if values.len() == 2 {
                let q = [x, 1.0 - x];
                if feasible(&q) && obj(&q) > best {
                    best = obj(&q);
                    best_q = q.to_vec();
                }
                continue;
            }
            for j in 0..=steps {
                let y = center.1 - half + j as f64 * h;
                let q = [x, y, 1.0 - x - y];
                if feasible(&q) && obj(&q) > best {
                    best = obj(&q);
                    best_q = q.to_vec();
                }
            }
        }
        center = (best_q[0], best_q[1]);
        half *= if values.len() == 2 { 0.05 } else { 0.25 };
    }
    best
}

/// Weighted monotone least squares by enumerating every split of the index
/// range into contiguous blocks. Exponential; only for tiny inputs.
pub fn isotonic_brute(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut fit = vec![0.0; n];
        let mut start = 0;
        let mut prev_mean = f64::NEG_INFINITY;
        let mut ok = true;
        for end in 1..=n {
            let cut = end == n || mask & (1 << (end - 1)) != 0;
            if !cut {
                continue;
            }
            let w: f64 = weights[start..end].iter().sum();
            let m: f64 = values[start..end]
                .iter()
                .zip(&weights[start..end])
                .map(|(v, w)| v * w)
                .sum::<f64>()
                / w;
            if m < prev_mean - 1e-12 {
                ok = false;
                break;
            }
            fit[start..end].iter_mut().for_each(|f| *f = m);
            prev_mean = m;
            start = end;
        }
        if !ok {
            continue;
        }
        let sse: f64 = fit
            .iter()
            .zip(values)
            .zip(weights)
            .map(|((f, v), w)| w * (f - v).powi(2))
            .sum();
        if best.as_ref().is_none_or(|b| sse < b.0) {
            best = Some((sse, fit));
        }
    }
    best.expect("the single-block split is always monotone").1
}

/// Mean logistic loss with ridge, written out independently of the library.
pub fn platt_loss(scores: &[f64], y: &[f64], ridge: f64, a: f64, b: f64) -> f64 {
    let n = scores.len() as f64;
    let nll: f64 = scores
        .iter()
        .zip(y)
        .map(|(s, t)| {
            let z = a * s + b;
            // log(1 + e^z) - t z, stable for large |z|
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - t * z
        })
        .sum();
    nll / n + 0.5 * ridge * (a * a + b * b)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
