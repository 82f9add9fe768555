//! Conjugate dynamic linear model with a forgetting factor.
//!
//! The coefficient vector follows a random walk whose state noise is never
//! estimated explicitly: it is replaced by the discount `W = (1 - λ)/λ · C`,
//! which inflates the prior covariance to `λ⁻¹ C` before every update. The
//! observational variance is integrated out, so the one-step predictive
//! distribution is a location-scale Student-t with `n` degrees of freedom.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Lower bound applied to the variance estimate `S` and the predictive scale `Q`.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Default prior scale `g` for `θ₀ ~ N(0, g I)`.
pub const DEFAULT_PRIOR_SCALE: f64 = 100.0;

/// A model specification: the subset of predictors used by one expert.
///
/// The intercept is always present and always occupies the first coordinate
/// of the projected covariate vector, so the effective dimension is
/// `predictors.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    predictors: Vec<usize>,
}

impl ModelSpec {
    /// Builds a specification from zero-based predictor indices.
    pub fn new(mut predictors: Vec<usize>) -> Result<Self> {
        if predictors.is_empty() {
            return Err(Error::Config(
                "a model must use at least one predictor".into(),
            ));
        }
        predictors.sort_unstable();
        predictors.dedup();
        Ok(Self { predictors })
    }

    /// Zero-based predictor indices, ascending.
    pub fn predictors(&self) -> &[usize] {
        &self.predictors
    }

    pub fn includes_intercept(&self) -> bool {
        true
    }

    pub fn contains(&self, predictor: usize) -> bool {
        self.predictors.binary_search(&predictor).is_ok()
    }

    /// Effective dimension `d` (predictors plus intercept).
    pub fn dim(&self) -> usize {
        self.predictors.len() + 1
    }

    /// Projects a full covariate row onto `(1, x_j for j in spec)`.
    pub fn project(&self, full: &[f64]) -> Result<DVector<f64>> {
        if let Some(&max) = self.predictors.last() {
            if max >= full.len() {
                return Err(Error::Dimension {
                    expected: max + 1,
                    got: full.len(),
                });
            }
        }
        let mut out = DVector::zeros(self.dim());
        out[0] = 1.0;
        for (slot, &j) in self.predictors.iter().enumerate() {
            out[slot + 1] = full[j];
        }
        Ok(out)
    }
}

/// Posterior state of one dynamic linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct DlmState {
    /// Coefficient point estimate `θ̂`.
    pub theta: DVector<f64>,
    /// Coefficient covariance estimate `C`.
    pub cov: DMatrix<f64>,
    /// Point estimate `S` of the observational variance.
    pub s: f64,
    /// Degrees of freedom.
    pub n: u64,
    /// Observations processed.
    pub t: u64,
}

impl DlmState {
    /// A state with an explicit prior, before any observation has been processed.
    pub fn from_prior(theta: DVector<f64>, cov: DMatrix<f64>, s: f64, n: u64) -> Result<Self> {
        if cov.nrows() != theta.len() || cov.ncols() != theta.len() {
            return Err(Error::Dimension {
                expected: theta.len(),
                got: cov.nrows(),
            });
        }
        if !(s > 0.0) {
            return Err(Error::DegenerateInput(format!(
                "variance estimate must be positive, got {s}"
            )));
        }
        Ok(Self {
            theta,
            cov,
            s,
            n,
            t: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// One-step-ahead Student-t predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDensity {
    pub mean: f64,
    /// Squared scale `Q`.
    pub q: f64,
    pub dof: f64,
}

impl PredictiveDensity {
    pub fn new(mean: f64, q: f64, dof: f64) -> Result<Self> {
        if !mean.is_finite() || !(q > 0.0) || !q.is_finite() || !(dof >= 1.0) {
            return Err(Error::DegenerateInput(format!(
                "invalid predictive density (mean {mean}, Q {q}, dof {dof})"
            )));
        }
        Ok(Self { mean, q, dof })
    }

    pub fn log_density(&self, y: f64) -> f64 {
        predictive_log_density(self, y)
    }
}

/// Quantities produced while absorbing one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTerms {
    /// Predictive variance `Q` used in the update.
    pub q: f64,
    /// Kalman gain `A`.
    pub gain: DVector<f64>,
    /// Forecast error `y - xᵀθ̂`.
    pub error: f64,
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::ForgettingFactor(lambda))
    }
}

fn check_dim(state: &DlmState, x: &DVector<f64>) -> Result<()> {
    if x.len() != state.dim() {
        return Err(Error::Dimension {
            expected: state.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Initialises a filter from its first observation.
///
/// Starting from `θ̂₀ = 0` and `C₁ = gI`, the first observation is absorbed
/// without observational noise (`Q₁ = x₁ᵀC₁x₁`) and seeds `S₁`.
pub fn init_dlm(y1: f64, x1: &DVector<f64>, g: f64) -> Result<DlmState> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(Error::Config(format!(
            "prior scale g must be positive, got {g}"
        )));
    }
    if !y1.is_finite() || x1.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("first observation".into()));
    }
    let d = x1.len();
    let cov = DMatrix::identity(d, d) * g;
    let q1 = x1.dot(&(&cov * x1));
    if !(q1 > 0.0) {
        return Err(Error::DegenerateInput(
            "first covariate vector is zero; predictive variance Q1 = 0".into(),
        ));
    }
    let gain = (&cov * x1) / q1;
    let err = y1;
    let theta = gain * err;
    let s = (0.5 * (y1 * y1 + err * err / q1)).max(VARIANCE_FLOOR);
    Ok(DlmState {
        theta,
        cov,
        s,
        n: 2,
        t: 1,
    })
}

/// One-step predictive density of the next response given `x_next`.
pub fn predict(state: &DlmState, x_next: &DVector<f64>, lambda: f64) -> Result<PredictiveDensity> {
    check_lambda(lambda)?;
    check_dim(state, x_next)?;
    let mean = x_next.dot(&state.theta);
    let xcx = x_next.dot(&(&state.cov * x_next));
    let q = (xcx / lambda + state.s).max(VARIANCE_FLOOR);
    if !mean.is_finite() || !q.is_finite() {
        return Err(Error::Numerical("non-finite prediction".into()));
    }
    Ok(PredictiveDensity {
        mean,
        q,
        dof: state.n as f64,
    })
}

/// Log density of the location-scale Student-t predictive distribution at `y`.
pub fn predictive_log_density(pd: &PredictiveDensity, y: f64) -> f64 {
    let nu = pd.dof;
    let z2 = (y - pd.mean) * (y - pd.mean) / pd.q;
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * pd.q.ln()
        - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p()
}

/// Absorbs `(x, y)` with forgetting factor `lambda`.
pub fn update(state: &DlmState, x: &DVector<f64>, y: f64, lambda: f64) -> Result<DlmState> {
    update_with_terms(state, x, y, lambda).map(|(s, _)| s)
}

/// Like [`update`], also returning the intermediate `Q`, gain and error.
pub fn update_with_terms(
    state: &DlmState,
    x: &DVector<f64>,
    y: f64,
    lambda: f64,
) -> Result<(DlmState, UpdateTerms)> {
    check_lambda(lambda)?;
    check_dim(state, x)?;
    correct(state, &state.cov, 1.0 / lambda, x, y)
}

/// Update with an explicit state-noise covariance `W` in place of forgetting.
///
/// With `W = 0` this produces exactly the same arithmetic as `update` at `λ = 1`.
pub fn update_with_state_noise(
    state: &DlmState,
    x: &DVector<f64>,
    y: f64,
    state_noise: &DMatrix<f64>,
) -> Result<DlmState> {
    check_dim(state, x)?;
    if state_noise.shape() != state.cov.shape() {
        return Err(Error::Dimension {
            expected: state.dim(),
            got: state_noise.nrows(),
        });
    }
    let prior = &state.cov + state_noise;
    correct(state, &prior, 1.0, x, y).map(|(s, _)| s)
}

/// Kalman correction against the prior covariance `scale · prior`.
fn correct(
    state: &DlmState,
    prior: &DMatrix<f64>,
    scale: f64,
    x: &DVector<f64>,
    y: f64,
) -> Result<(DlmState, UpdateTerms)> {
    if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observation".into()));
    }
    let px = prior * x;
    let q = scale * x.dot(&px) + state.s;
    if !q.is_finite() || q < VARIANCE_FLOOR {
        return Err(Error::Numerical(format!(
            "predictive variance Q = {q} below floor"
        )));
    }
    let gain = px * (scale / q);
    let error = y - x.dot(&state.theta);
    let n = state.n + 1;
    let s = (state.s + state.s / n as f64 * (error * error / q - 1.0)).max(VARIANCE_FLOOR);
    let theta = &state.theta + &gain * error;
    let mut cov = prior * scale - &gain * gain.transpose() * q;
    symmetrize(&mut cov);
    if !s.is_finite() || theta.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite())
    {
        return Err(Error::Numerical("non-finite posterior".into()));
    }
    Ok((
        DlmState {
            theta,
            cov,
            s,
            n,
            t: state.t + 1,
        },
        UpdateTerms { q, gain, error },
    ))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
