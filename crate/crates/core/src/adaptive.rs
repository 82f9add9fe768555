//! Adaptive forgetting: the forgetting factor of a DLM tuned online by ADAM.
//!
//! Every step propagates the derivatives of `θ̂`, `C` and `S` with respect to
//! `λ` alongside the filter. The gradient of the one-step squared forecast
//! error `J = ½ε̂²` is then `-ε̂ xᵀ ∂θ̂/∂λ`, which drives an ADAM update of `λ`
//! clamped to `[λ⁻, λ⁺]`. The order of operations inside [`af_step`] is the
//! order in which the recursions must be evaluated: every derivative is
//! advanced from the previous step's quantities before the filter itself moves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dlm::{self, DlmState, PredictiveDensity, UpdateTerms};
use crate::error::{Error, Result};

/// ADAM hyperparameters and forgetting-factor bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    /// Maximum step size.
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Forgetting factor used for the first prediction.
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            gamma: 5e-3,
            beta1: 0.8,
            beta2: 0.8,
            epsilon: 1e-8,
            lambda_init: 0.99,
            lambda_min: 0.9,
            lambda_max: 0.999,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!(
                "ADAM gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(
                "ADAM beta1 and beta2 must lie in [0, 1)".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("ADAM epsilon must be positive".into()));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max && self.lambda_max <= 1.0)
        {
            return Err(Error::Config(format!(
                "forgetting bounds must satisfy 0 < min <= max <= 1, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.lambda_min..=self.lambda_max).contains(&self.lambda_init) {
            return Err(Error::Config(format!(
                "initial forgetting factor {} outside [{}, {}]",
                self.lambda_init, self.lambda_min, self.lambda_max
            )));
        }
        Ok(())
    }
}

/// ADAM moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: f64,
    pub v: f64,
    /// Exponent used for bias correction; incremented before each update.
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            m: 0.0,
            v: 0.0,
            step: 0,
            config,
        }
    }
}

/// Derivative state of an adaptive-forgetting DLM.
#[derive(Debug, Clone, PartialEq)]
pub struct AfState {
    /// `∂θ̂/∂λ`
    pub dtheta: DVector<f64>,
    /// `∂C/∂λ`
    pub dcov: DMatrix<f64>,
    /// `∂S/∂λ`
    pub ds: f64,
    /// Forgetting factor for the next prediction.
    pub lambda: f64,
    pub adam: AdamState,
}

impl AfState {
    /// Zeroed derivative state for a filter that has absorbed its first observation.
    ///
    /// The ADAM counter starts at the time index of that observation, so the
    /// update made while processing observation `t` is bias-corrected with `t`.
    pub fn new(dim: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let mut adam = AdamState::new(config);
        adam.step = 1;
        Ok(Self {
            dtheta: DVector::zeros(dim),
            dcov: DMatrix::zeros(dim, dim),
            ds: 0.0,
            lambda: config.lambda_init,
            adam,
        })
    }
}

/// `∂J/∂λ = -ε̂ xᵀ ∂θ̂/∂λ` for the squared error of the forecast made with `af`.
pub fn grad_forecast_error(af: &AfState, x_next: &DVector<f64>, eps_hat: f64) -> f64 {
    -eps_hat * x_next.dot(&af.dtheta)
}

/// Advances `∂θ̂/∂λ`, `∂C/∂λ` and `∂S/∂λ` by one observation.
///
/// `state` is the filter before absorbing `x`, and `terms` the `Q`, gain and
/// forecast error of that same update at `af.lambda`.
pub fn update_derivatives(
    af: &AfState,
    state: &DlmState,
    x: &DVector<f64>,
    terms: &UpdateTerms,
) -> Result<AfState> {
    let d = state.dim();
    if x.len() != d || af.dtheta.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: x.len(),
        });
    }
    if !terms.q.is_finite() || terms.q < dlm::VARIANCE_FLOOR {
        return Err(Error::Numerical(format!(
            "predictive variance Q = {} below floor",
            terms.q
        )));
    }
    let lambda = af.lambda;
    let inv = 1.0 / lambda;
    let inv2 = inv * inv;
    let q = terms.q;
    let err = terms.error;
    let gain = &terms.gain;
    let n = (state.n + 1) as f64;

    let xt_c = x.transpose() * &state.cov;
    let xt_dc = x.transpose() * &af.dcov;
    let xcx = (&xt_c * x)[0];
    let dc_x = &af.dcov * x;
    let xdcx = x.dot(&dc_x);

    let dq = inv * xdcx - inv2 * xcx + af.ds;
    let dgain = &dc_x * (inv / q) - gain * (inv + dq / q);
    let x_dtheta = x.dot(&af.dtheta);

    let ds = af.ds
        + (af.ds * (err * err - q) - state.s * (2.0 * err * x_dtheta + err * err / q * dq))
            / (n * q);
    let dtheta = &af.dtheta + &dgain * err - gain * x_dtheta;

    // (I - A xᵀ) λ⁻¹ ∂C - (I + λ ∂A xᵀ - A xᵀ) λ⁻² C
    let mut dcov = (&af.dcov - gain * &xt_dc) * inv
        - (&state.cov + &dgain * &xt_c * lambda - gain * &xt_c) * inv2;
    dlm::symmetrize(&mut dcov);

    if !ds.is_finite()
        || dtheta.iter().any(|v| !v.is_finite())
        || dcov.iter().any(|v| !v.is_finite())
    {
        return Err(Error::Numerical(
            "non-finite forgetting-factor derivatives".into(),
        ));
    }
    Ok(AfState {
        dtheta,
        dcov,
        ds,
        lambda,
        adam: af.adam.clone(),
    })
}

/// One ADAM step on `λ`, returning the new moments and the clamped factor.
pub fn adam_step(adam: &AdamState, gradient: f64, lambda: f64) -> (AdamState, f64) {
    let cfg = adam.config;
    let step = adam.step + 1;
    let m = cfg.beta1 * adam.m + (1.0 - cfg.beta1) * gradient;
    let v = cfg.beta2 * adam.v + (1.0 - cfg.beta2) * gradient * gradient;
    let power = step.min(i32::MAX as u64) as i32;
    let bias1 = 1.0 - cfg.beta1.powi(power);
    let bias2 = 1.0 - cfg.beta2.powi(power);
    let proposed = lambda - cfg.gamma * m / (bias1 * ((v / bias2).sqrt() + cfg.epsilon));
    let next = if proposed.is_finite() {
        proposed.clamp(cfg.lambda_min, cfg.lambda_max)
    } else {
        lambda.clamp(cfg.lambda_min, cfg.lambda_max)
    };
    (
        AdamState {
            m,
            v,
            step,
            config: cfg,
        },
        next,
    )
}

/// Output of one adaptive-forgetting step.
#[derive(Debug, Clone)]
pub struct AfStep {
    pub state: DlmState,
    pub af: AfState,
    /// Forecast made before `y` was revealed.
    pub forecast: PredictiveDensity,
    pub error: f64,
    /// `∂J/∂λ` of this step's forecast error.
    pub gradient: f64,
}

/// One full adaptive-forgetting iteration: predict, differentiate, update, tune `λ`.
pub fn af_step(state: &DlmState, af: &AfState, x: &DVector<f64>, y: f64) -> Result<AfStep> {
    let forecast = dlm::predict(state, x, af.lambda)?;
    let (next, terms) = dlm::update_with_terms(state, x, y, af.lambda)?;
    let gradient = grad_forecast_error(af, x, terms.error);
    let mut af_next = update_derivatives(af, state, x, &terms)?;
    let (adam, lambda) = adam_step(&af.adam, gradient, af.lambda);
    af_next.adam = adam;
    af_next.lambda = lambda;
    Ok(AfStep {
        state: next,
        af: af_next,
        forecast,
        error: terms.error,
        gradient,
    })
}

/// Per-step output of [`run_af_filter`]; index `t - 1` refers to time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AfPath {
    /// Forgetting factor after absorbing `y_t` (`λ₁` at time 1).
    pub lambdas: Vec<f64>,
    /// One-step forecasts; `None` at time 1.
    pub forecasts: Vec<Option<f64>>,
    /// `∂J/∂λ` at each step; 0 at time 1.
    pub gradients: Vec<f64>,
    /// Coefficient means after absorbing `y_t`.
    pub thetas: Vec<DVector<f64>>,
}

/// Runs an adaptive-forgetting filter over a whole series, starting from
/// `C₁ = gI`.
pub fn run_af_filter(x: &[DVector<f64>], y: &[f64], g: f64, config: AdamConfig) -> Result<AfPath> {
    if y.is_empty() {
        return Err(Error::Empty("series"));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: x.len(),
        });
    }
    let mut state = dlm::init_dlm(y[0], &x[0], g)?;
    let mut af = AfState::new(state.dim(), config)?;
    let mut path = AfPath {
        lambdas: Vec::with_capacity(y.len()),
        forecasts: Vec::with_capacity(y.len()),
        gradients: Vec::with_capacity(y.len()),
        thetas: Vec::with_capacity(y.len()),
    };
    path.lambdas.push(af.lambda);
    path.forecasts.push(None);
    path.gradients.push(0.0);
    path.thetas.push(state.theta.clone());
    for (xt, &yt) in x.iter().zip(y).skip(1) {
        let step = af_step(&state, &af, xt, yt)?;
        path.lambdas.push(step.af.lambda);
        path.forecasts.push(Some(step.forecast.mean));
        path.gradients.push(step.gradient);
        path.thetas.push(step.state.theta.clone());
        state = step.state;
        af = step.af;
    }
    Ok(path)
}
