//! Forecast combination: the DMA weight recursion (with Bayesian model
//! averaging as the `α = 1, c = 0` special case) and the ConfHedge
//! aggregating algorithm with Fixed Share mixing.

use serde::{Deserialize, Serialize};

use crate::dlm::ModelSpec;
use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidWeights(format!(
            "weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

/// `log Σ exp(v)`; `-∞` when every entry is `-∞`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Convex combination `Σ w_k ŷ_k`.
pub fn combine_forecast(weights: &[f64], forecasts: &[f64]) -> Result<f64> {
    check_len(weights.len(), forecasts.len())?;
    check_simplex(weights)?;
    Ok(weights.iter().zip(forecasts).map(|(w, f)| w * f).sum())
}

/// Weights of the DMA recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaCombinerState {
    pub weights: Vec<f64>,
    /// Model forgetting factor `α`.
    pub alpha: f64,
    /// Underflow constant `c`.
    pub c: f64,
}

impl DmaCombinerState {
    /// Uniform prior over `k` models.
    pub fn uniform(k: usize, alpha: f64, c: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Empty("model set"));
        }
        Self::with_weights(vec![1.0 / k as f64; k], alpha, c)
    }

    pub fn with_weights(weights: Vec<f64>, alpha: f64, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Config(format!("c must be finite and >= 0, got {c}")));
        }
        check_simplex(&weights)?;
        Ok(Self { weights, alpha, c })
    }
}

/// `p(M_k|F_t) ∝ p(y_t|M_k, F_{t-1}) · [p(M_k|F_{t-1})^α + c]`, in log space.
///
/// Weights are stored on the linear scale, so a weight that underflows to
/// zero stays at zero afterwards unless `c > 0`.
pub fn dma_update_weights(
    st: &DmaCombinerState,
    log_likelihoods: &[f64],
) -> Result<DmaCombinerState> {
    check_len(st.weights.len(), log_likelihoods.len())?;
    if let Some(bad) = log_likelihoods
        .iter()
        .find(|l| l.is_nan() || **l == f64::INFINITY)
    {
        return Err(Error::NonFinite(format!("log predictive likelihood {bad}")));
    }
    let log_c = st.c.ln();
    let log_post: Vec<f64> = st
        .weights
        .iter()
        .zip(log_likelihoods)
        .map(|(&w, &ll)| {
            // 0^0 = 1 so that α = 0 discards the prior entirely.
            let log_prior = if st.alpha == 0.0 {
                0.0
            } else {
                st.alpha * w.ln()
            };
            ll + log_add_exp(log_prior, log_c)
        })
        .collect();
    let norm = log_sum_exp(&log_post);
    if !norm.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut weights: Vec<f64> = log_post.iter().map(|lp| (lp - norm).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(DmaCombinerState {
        weights,
        alpha: st.alpha,
        c: st.c,
    })
}

/// Bayesian model averaging: the DMA recursion with `α = 1` and `c = 0`.
pub fn bma_update_weights(
    st: &DmaCombinerState,
    log_likelihoods: &[f64],
) -> Result<DmaCombinerState> {
    let bma = DmaCombinerState {
        weights: st.weights.clone(),
        alpha: 1.0,
        c: 0.0,
    };
    dma_update_weights(&bma, log_likelihoods)
}

/// Squared-error loss `½(y - ŷ)²`.
pub fn squared_error_loss(y: f64, yhat: f64) -> f64 {
    0.5 * (y - yhat) * (y - yhat)
}

/// ConfHedge state: weights for the next prediction plus the step-size bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfHedgeState {
    pub weights: Vec<f64>,
    /// Cumulative mixability gap `Δ`.
    pub delta: f64,
    /// Learning rate for the next update; `+∞` until `Δ` becomes positive.
    pub eta: f64,
    /// Number of completed updates.
    pub t: u64,
}

impl ConfHedgeState {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Empty("expert set"));
        }
        Ok(Self {
            weights: vec![1.0 / k as f64; k],
            delta: 0.0,
            eta: f64::INFINITY,
            t: 0,
        })
    }

    /// Weight floor guaranteed by the mixing term after the latest update.
    pub fn weight_floor(&self) -> f64 {
        if self.t == 0 {
            return 1.0 / self.weights.len() as f64;
        }
        1.0 / ((self.t + 1) as f64 * self.weights.len() as f64)
    }
}

/// `Σ_k (w_k / Σ_m w_m) ŷ_k`.
pub fn confhedge_predict(st: &ConfHedgeState, forecasts: &[f64]) -> Result<f64> {
    check_len(st.weights.len(), forecasts.len())?;
    let total: f64 = st.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(st
        .weights
        .iter()
        .zip(forecasts)
        .map(|(w, f)| w / total * f)
        .sum())
}

/// Per-update diagnostics of ConfHedge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfHedgeTrace {
    /// Weighted loss `h = wᵀl`.
    pub h: f64,
    /// Mix loss `m`.
    pub mix: f64,
    /// Learning rate that was used.
    pub eta: f64,
}

/// ConfHedge weight and step-size update after observing the expert losses.
pub fn confhedge_update(st: &ConfHedgeState, losses: &[f64]) -> Result<ConfHedgeState> {
    confhedge_update_traced(st, losses).map(|(s, _)| s)
}

pub fn confhedge_update_traced(
    st: &ConfHedgeState,
    losses: &[f64],
) -> Result<(ConfHedgeState, ConfHedgeTrace)> {
    let k = st.weights.len();
    check_len(k, losses.len())?;
    if let Some(&bad) = losses.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidLoss(bad));
    }
    let h: f64 = st.weights.iter().zip(losses).map(|(w, l)| w * l).sum();

    let (updated, mix) = if st.eta.is_infinite() {
        // η = ∞: all mass on the minimisers of the loss among supported experts.
        let min = st
            .weights
            .iter()
            .zip(losses)
            .filter(|(w, _)| **w > 0.0)
            .map(|(_, l)| *l)
            .fold(f64::INFINITY, f64::min);
        let winners: Vec<bool> = st
            .weights
            .iter()
            .zip(losses)
            .map(|(w, l)| *w > 0.0 && *l == min)
            .collect();
        let count = winners.iter().filter(|w| **w).count() as f64;
        let updated = winners
            .iter()
            .map(|&w| if w { 1.0 / count } else { 0.0 })
            .collect::<Vec<_>>();
        (updated, min)
    } else {
        let logs: Vec<f64> = st
            .weights
            .iter()
            .zip(losses)
            .map(|(w, l)| w.ln() - st.eta * l)
            .collect();
        let norm = log_sum_exp(&logs);
        if !norm.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        let updated = logs.iter().map(|v| (v - norm).exp()).collect::<Vec<_>>();
        (updated, -norm / st.eta)
    };

    let t = st.t as f64;
    let floor = 1.0 / ((t + 2.0) * k as f64);
    let keep = (t + 1.0) / (t + 2.0);
    let weights = updated.iter().map(|wu| floor + keep * wu).collect();

    // h ≥ m holds exactly; clamp rounding noise so Δ never decreases.
    let delta = st.delta + (h - mix).max(0.0);
    let eta = if delta > 0.0 {
        (k as f64).ln().max(1.0) / delta
    } else {
        f64::INFINITY
    };
    Ok((
        ConfHedgeState {
            weights,
            delta,
            eta,
            t: st.t + 1,
        },
        ConfHedgeTrace {
            h,
            mix,
            eta: st.eta,
        },
    ))
}

/// Posterior inclusion probability of each of `d` predictors.
pub fn inclusion_probabilities(weights: &[f64], specs: &[ModelSpec], d: usize) -> Result<Vec<f64>> {
    check_len(specs.len(), weights.len())?;
    let mut out = vec![0.0; d];
    for (w, spec) in weights.iter().zip(specs) {
        for &j in spec.predictors() {
            if j >= d {
                return Err(Error::Dimension {
                    expected: d,
                    got: j + 1,
                });
            }
            out[j] += w;
        }
    }
    for p in &mut out {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(out)
}
