//! The model pool and the forecasting strategies built on it.
//!
//! Each time step runs in two phases. Every expert first forecasts from its
//! current state and the combiner forms the combined forecast; only then is
//! the response revealed, the experts updated and the combiner weights moved.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{self, AdamConfig, AfState};
use crate::combine::{self, ConfHedgeState, DmaCombinerState};
use crate::data::Dataset;
use crate::dlm::{self, DlmState, ModelSpec, DEFAULT_PRIOR_SCALE};
use crate::error::{Error, Result};
use crate::eval;

/// Largest predictor count accepted without an explicit override.
pub const DEFAULT_MAX_PREDICTORS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Adaptive-forgetting experts combined by ConfHedge.
    #[serde(rename = "ADMA")]
    Adma,
    /// Bayesian averaging over (specification, λ) pairs.
    #[serde(rename = "eDMA")]
    Edma,
    /// DMA with a fixed forgetting factor.
    #[serde(rename = "DMA")]
    DmaFixed,
    #[serde(rename = "BMA")]
    Bma,
    /// A single DLM with every predictor.
    #[serde(rename = "DLM")]
    DlmFull,
    #[serde(rename = "AR1")]
    Ar1,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Adma => "ADMA",
            Self::Edma => "eDMA",
            Self::DmaFixed => "DMA",
            Self::Bma => "BMA",
            Self::DlmFull => "DLM",
            Self::Ar1 => "AR1",
        }
    }
}

/// Configuration of one forecasting strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Fixed forgetting factor (DMA, DLM, BMA).
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Model forgetting factor of the DMA recursion.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Underflow constant of the DMA recursion.
    #[serde(default)]
    pub c: Option<f64>,
    /// Forgetting-factor grid for eDMA.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_g")]
    pub g: f64,
    #[serde(default = "default_min_window")]
    pub ar1_min_window: usize,
    #[serde(default = "default_max_predictors")]
    pub max_predictors: usize,
}

fn default_g() -> f64 {
    DEFAULT_PRIOR_SCALE
}

fn default_min_window() -> usize {
    eval::DEFAULT_AR1_MIN_WINDOW
}

fn default_max_predictors() -> usize {
    DEFAULT_MAX_PREDICTORS
}

/// The eDMA forgetting-factor grid `0.90, 0.91, ..., 0.99`.
pub fn default_lambda_grid() -> Vec<f64> {
    (90..=99).map(|v| v as f64 / 100.0).collect()
}

impl StrategyConfig {
    fn base(kind: StrategyKind) -> Self {
        Self {
            kind,
            lambda: None,
            alpha: None,
            c: None,
            lambda_grid: None,
            adam: AdamConfig::default(),
            g: DEFAULT_PRIOR_SCALE,
            ar1_min_window: eval::DEFAULT_AR1_MIN_WINDOW,
            max_predictors: DEFAULT_MAX_PREDICTORS,
        }
    }

    pub fn adma() -> Self {
        Self::base(StrategyKind::Adma)
    }

    pub fn edma() -> Self {
        Self::base(StrategyKind::Edma)
    }

    /// DMA with `λ = α = lambda` and `c = 0.001/K`.
    pub fn dma(lambda: f64) -> Self {
        Self {
            lambda: Some(lambda),
            ..Self::base(StrategyKind::DmaFixed)
        }
    }

    pub fn bma() -> Self {
        Self::base(StrategyKind::Bma)
    }

    pub fn dlm_full(lambda: f64) -> Self {
        Self {
            lambda: Some(lambda),
            ..Self::base(StrategyKind::DlmFull)
        }
    }

    pub fn ar1() -> Self {
        Self::base(StrategyKind::Ar1)
    }

    /// Fixed forgetting factor in effect for this strategy.
    pub fn resolved_lambda(&self) -> f64 {
        self.lambda.unwrap_or(match self.kind {
            StrategyKind::Bma => 1.0,
            _ => 0.99,
        })
    }

    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.kind {
            StrategyKind::DmaFixed => self.resolved_lambda(),
            _ => 1.0,
        })
    }

    /// Underflow constant for a pool of `k` experts.
    pub fn resolved_c(&self, k: usize) -> f64 {
        self.c.unwrap_or(match self.kind {
            StrategyKind::DmaFixed => 0.001 / k as f64,
            _ => 0.0,
        })
    }

    pub fn resolved_grid(&self) -> Vec<f64> {
        self.lambda_grid.clone().unwrap_or_else(default_lambda_grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0) || !self.g.is_finite() {
            return Err(Error::Config(format!(
                "prior scale g must be positive, got {}",
                self.g
            )));
        }
        let needs_lambda = matches!(
            self.kind,
            StrategyKind::DmaFixed | StrategyKind::DlmFull | StrategyKind::Bma
        );
        if self.lambda.is_some() && !needs_lambda {
            return Err(Error::Config(format!(
                "'lambda' does not apply to {}",
                self.kind.label()
            )));
        }
        if needs_lambda {
            dlm::check_lambda(self.resolved_lambda())?;
        }
        match self.kind {
            StrategyKind::Edma => {
                let grid = self.resolved_grid();
                if grid.is_empty() {
                    return Err(Error::Config("eDMA needs a nonempty lambda_grid".into()));
                }
                for l in grid {
                    dlm::check_lambda(l)?;
                }
            }
            _ if self.lambda_grid.is_some() => {
                return Err(Error::Config(format!(
                    "'lambda_grid' does not apply to {}",
                    self.kind.label()
                )));
            }
            _ => {}
        }
        let combines = matches!(
            self.kind,
            StrategyKind::Edma | StrategyKind::DmaFixed | StrategyKind::Bma
        );
        if !combines && (self.alpha.is_some() || self.c.is_some()) {
            return Err(Error::Config(format!(
                "'alpha' and 'c' do not apply to {}",
                self.kind.label()
            )));
        }
        if combines {
            let alpha = self.resolved_alpha();
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(format!(
                    "alpha must lie in [0, 1], got {alpha}"
                )));
            }
            if let Some(c) = self.c {
                if !(c >= 0.0) || !c.is_finite() {
                    return Err(Error::Config(format!("c must be finite and >= 0, got {c}")));
                }
            }
        }
        if self.kind == StrategyKind::Adma {
            self.adam.validate()?;
        }
        if self.kind == StrategyKind::Ar1 && self.ar1_min_window < 3 {
            return Err(Error::Config("ar1_min_window must be >= 3".into()));
        }
        Ok(())
    }

    /// Number of experts for `d` predictors.
    pub fn expert_count(&self, d: usize) -> usize {
        let subsets = (1usize << d.min(usize::BITS as usize - 1)) - 1;
        match self.kind {
            StrategyKind::Adma | StrategyKind::DmaFixed | StrategyKind::Bma => subsets,
            StrategyKind::Edma => subsets * self.resolved_grid().len(),
            StrategyKind::DlmFull | StrategyKind::Ar1 => 1,
        }
    }

    /// Rough heap footprint of the expert pool, in bytes.
    pub fn estimate_memory_bytes(&self, d: usize) -> usize {
        let per_dim = |dim: usize| {
            let matrices = if self.kind == StrategyKind::Adma {
                2
            } else {
                1
            };
            let vectors = if self.kind == StrategyKind::Adma {
                2
            } else {
                1
            };
            8 * (matrices * dim * dim + vectors * dim) + 128
        };
        match self.kind {
            StrategyKind::Ar1 => 0,
            StrategyKind::DlmFull => per_dim(d + 1),
            _ => {
                // Average dimension of a nonempty subset plus intercept.
                let avg_dim = 1 + (d + 1) / 2;
                self.expert_count(d) * (per_dim(avg_dim) + 3 * 8)
            }
        }
    }
}

/// All nonempty predictor subsets, in binary-counting order.
pub fn enumerate_models(d: usize) -> Result<Vec<ModelSpec>> {
    enumerate_models_bounded(d, DEFAULT_MAX_PREDICTORS)
}

pub fn enumerate_models_bounded(d: usize, max_predictors: usize) -> Result<Vec<ModelSpec>> {
    if d == 0 {
        return Err(Error::Config("at least one predictor is required".into()));
    }
    if d > max_predictors {
        return Err(Error::Config(format!(
            "{d} predictors give {} models; the limit is {max_predictors} predictors \
             (raise max_predictors to override)",
            if d < 64 {
                ((1u64 << d) - 1).to_string()
            } else {
                "2^d - 1".into()
            }
        )));
    }
    if d >= usize::BITS as usize {
        return Err(Error::Config(format!(
            "{d} predictors cannot be enumerated"
        )));
    }
    (1usize..(1usize << d))
        .map(|mask| ModelSpec::new((0..d).filter(|j| mask & (1 << j) != 0).collect()))
        .collect()
}

/// What an expert forecasts with.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertModel {
    Fixed {
        state: DlmState,
        lambda: f64,
    },
    Adaptive {
        state: DlmState,
        af: AfState,
    },
    /// A fixed Gaussian predictive density `N(mean, var)`.
    Gaussian {
        mean: f64,
        var: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    /// Predictors used; `None` for experts that ignore covariates.
    pub spec: Option<ModelSpec>,
    pub model: ExpertModel,
    /// Set once an update hit numerical degeneracy; the state is no longer updated.
    pub frozen: bool,
}

impl Expert {
    pub fn gaussian(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() || !(var > 0.0) || !var.is_finite() {
            return Err(Error::Config(format!(
                "invalid Gaussian expert N({mean}, {var})"
            )));
        }
        Ok(Self {
            spec: None,
            model: ExpertModel::Gaussian { mean, var },
            frozen: false,
        })
    }

    /// Forgetting factor used for the next forecast.
    pub fn lambda(&self) -> Option<f64> {
        match &self.model {
            ExpertModel::Fixed { lambda, .. } => Some(*lambda),
            ExpertModel::Adaptive { af, .. } => Some(af.lambda),
            ExpertModel::Gaussian { .. } => None,
        }
    }

    fn covariates(&self, x_full: &[f64]) -> Result<Option<nalgebra::DVector<f64>>> {
        self.spec.as_ref().map(|s| s.project(x_full)).transpose()
    }

    fn forecast(&self, x_full: &[f64]) -> Result<Prediction> {
        match &self.model {
            ExpertModel::Fixed { state, lambda } => {
                let x = self.covariates(x_full)?.expect("DLM experts carry a spec");
                let pd = dlm::predict(state, &x, *lambda)?;
                Ok(Prediction::Student(pd))
            }
            ExpertModel::Adaptive { state, af } => {
                let x = self.covariates(x_full)?.expect("DLM experts carry a spec");
                let pd = dlm::predict(state, &x, af.lambda)?;
                Ok(Prediction::Student(pd))
            }
            ExpertModel::Gaussian { mean, var } => Ok(Prediction::Gaussian {
                mean: *mean,
                var: *var,
            }),
        }
    }

    /// Absorbs the revealed response. Degenerate updates freeze the expert.
    fn absorb(&mut self, x_full: &[f64], y: f64) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        let x = self.covariates(x_full)?;
        let outcome = match &mut self.model {
            ExpertModel::Fixed { state, lambda } => {
                let x = x.expect("DLM experts carry a spec");
                dlm::update(state, &x, y, *lambda).map(|next| *state = next)
            }
            ExpertModel::Adaptive { state, af } => {
                let x = x.expect("DLM experts carry a spec");
                adaptive::af_step(state, af, &x, y).map(|out| {
                    *state = out.state;
                    *af = out.af;
                })
            }
            ExpertModel::Gaussian { .. } => Ok(()),
        };
        match outcome {
            Ok(()) => Ok(()),
            Err(Error::Numerical(_)) => {
                self.frozen = true;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Prediction {
    Student(dlm::PredictiveDensity),
    Gaussian { mean: f64, var: f64 },
}

impl Prediction {
    fn mean(&self) -> f64 {
        match self {
            Self::Student(pd) => pd.mean,
            Self::Gaussian { mean, .. } => *mean,
        }
    }

    fn log_density(&self, y: f64) -> f64 {
        match self {
            Self::Student(pd) => pd.log_density(y),
            Self::Gaussian { mean, var } => {
                -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (y - mean) * (y - mean) / var
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Combiner {
    Dma(DmaCombinerState),
    ConfHedge(ConfHedgeState),
}

impl Combiner {
    pub fn weights(&self) -> &[f64] {
        match self {
            Self::Dma(st) => &st.weights,
            Self::ConfHedge(st) => &st.weights,
        }
    }
}

/// ConfHedge quantities of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeDiagnostics {
    /// `h = Σ_k (w_k/Σw) l_k`
    pub weighted_loss: f64,
    pub mix_loss: f64,
    /// `Δ` after the update.
    pub delta: f64,
}

/// Everything recorded about one forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Row index of the forecast target.
    pub t: usize,
    pub y: f64,
    pub combined_forecast: f64,
    pub per_model_forecast: Vec<f64>,
    /// Weights used to form `combined_forecast`.
    pub per_model_weight: Vec<f64>,
    /// Adaptive forgetting factors after absorbing `y` (ADMA only).
    pub per_model_lambda: Vec<f64>,
    pub inclusion_probs: Vec<f64>,
    pub hedge: Option<HedgeDiagnostics>,
}

impl ForecastRecord {
    pub fn error(&self) -> f64 {
        self.y - self.combined_forecast
    }
}

/// A model pool with its combiner.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub specs: Vec<ModelSpec>,
    pub experts: Vec<Expert>,
    pub combiner: Combiner,
    /// Number of candidate predictors `D`.
    pub n_predictors: usize,
    /// Row index of the last absorbed observation.
    pub t: usize,
    pub parallel: bool,
}

impl EngineState {
    /// Builds the pool for `config` and absorbs the first observation.
    pub fn initialize(config: &StrategyConfig, x1_full: &[f64], y1: f64) -> Result<Self> {
        config.validate()?;
        let d = x1_full.len();
        let specs = match config.kind {
            StrategyKind::Ar1 => {
                return Err(Error::Config(
                    "AR1 is not a model-pool strategy; use run_series".into(),
                ));
            }
            StrategyKind::DlmFull => vec![ModelSpec::new((0..d).collect())?],
            _ => enumerate_models_bounded(d, config.max_predictors)?,
        };
        let lambdas = match config.kind {
            StrategyKind::Edma => config.resolved_grid(),
            _ => vec![config.resolved_lambda()],
        };
        let mut experts = Vec::with_capacity(specs.len() * lambdas.len());
        let mut expert_specs = Vec::with_capacity(experts.capacity());
        for spec in &specs {
            let x1 = spec.project(x1_full)?;
            let state = dlm::init_dlm(y1, &x1, config.g)?;
            for &lambda in &lambdas {
                let model = if config.kind == StrategyKind::Adma {
                    ExpertModel::Adaptive {
                        af: AfState::new(spec.dim(), config.adam)?,
                        state: state.clone(),
                    }
                } else {
                    ExpertModel::Fixed {
                        state: state.clone(),
                        lambda,
                    }
                };
                experts.push(Expert {
                    spec: Some(spec.clone()),
                    model,
                    frozen: false,
                });
                expert_specs.push(spec.clone());
            }
        }
        let k = experts.len();
        let combiner = match config.kind {
            StrategyKind::Adma => Combiner::ConfHedge(ConfHedgeState::new(k)?),
            _ => Combiner::Dma(DmaCombinerState::uniform(
                k,
                config.resolved_alpha(),
                config.resolved_c(k),
            )?),
        };
        Ok(Self {
            specs: expert_specs,
            experts,
            combiner,
            n_predictors: d,
            t: 0,
            parallel: false,
        })
    }

    /// A pool of externally specified experts (for instance fixed Gaussians).
    pub fn from_experts(
        experts: Vec<Expert>,
        combiner: Combiner,
        n_predictors: usize,
    ) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::Empty("expert set"));
        }
        if combiner.weights().len() != experts.len() {
            return Err(Error::Dimension {
                expected: experts.len(),
                got: combiner.weights().len(),
            });
        }
        let specs = experts
            .iter()
            .filter_map(|e| e.spec.clone())
            .collect::<Vec<_>>();
        if !specs.is_empty() && specs.len() != experts.len() {
            return Err(Error::Config(
                "either every expert or none carries a specification".into(),
            ));
        }
        Ok(Self {
            specs,
            experts,
            combiner,
            n_predictors,
            t: 0,
            parallel: false,
        })
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    /// Forecasts `y_next` from `x_next_full`, then absorbs `y_next`.
    pub fn step(&mut self, x_next_full: &[f64], y_next: f64) -> Result<ForecastRecord> {
        if x_next_full.len() != self.n_predictors {
            return Err(Error::Dimension {
                expected: self.n_predictors,
                got: x_next_full.len(),
            });
        }
        if !y_next.is_finite() || x_next_full.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "observation at row {}",
                self.t + 1
            )));
        }

        // Phase 1: forecasts from information up to t plus x_{t+1}.
        let predictions: Vec<Prediction> = if self.parallel {
            self.experts
                .par_iter()
                .map(|e| e.forecast(x_next_full))
                .collect::<Result<_>>()?
        } else {
            self.experts
                .iter()
                .map(|e| e.forecast(x_next_full))
                .collect::<Result<_>>()?
        };
        let means: Vec<f64> = predictions.iter().map(Prediction::mean).collect();
        let weights = self.combiner.weights().to_vec();
        let combined = match &self.combiner {
            Combiner::Dma(_) => combine::combine_forecast(&weights, &means)?,
            Combiner::ConfHedge(st) => combine::confhedge_predict(st, &means)?,
        };
        let inclusion_probs = if self.specs.is_empty() {
            Vec::new()
        } else {
            combine::inclusion_probabilities(&weights, &self.specs, self.n_predictors)?
        };

        // Phase 2: reveal y_{t+1}.
        if self.parallel {
            self.experts
                .par_iter_mut()
                .map(|e| e.absorb(x_next_full, y_next))
                .collect::<Result<Vec<_>>>()?;
        } else {
            for e in &mut self.experts {
                e.absorb(x_next_full, y_next)?;
            }
        }
        let mut hedge = None;
        self.combiner = match &self.combiner {
            Combiner::Dma(st) => {
                let ll: Vec<f64> = predictions.iter().map(|p| p.log_density(y_next)).collect();
                Combiner::Dma(combine::dma_update_weights(st, &ll)?)
            }
            Combiner::ConfHedge(st) => {
                let losses: Vec<f64> = means
                    .iter()
                    .map(|m| combine::squared_error_loss(y_next, *m))
                    .collect();
                let (next, trace) = combine::confhedge_update_traced(st, &losses)?;
                hedge = Some(HedgeDiagnostics {
                    weighted_loss: trace.h,
                    mix_loss: trace.mix,
                    delta: next.delta,
                });
                Combiner::ConfHedge(next)
            }
        };
        let per_model_lambda = self
            .experts
            .iter()
            .filter_map(|e| match &e.model {
                ExpertModel::Adaptive { af, .. } => Some(af.lambda),
                _ => None,
            })
            .collect();
        self.t += 1;
        Ok(ForecastRecord {
            t: self.t,
            y: y_next,
            combined_forecast: combined,
            per_model_forecast: means,
            per_model_weight: weights,
            per_model_lambda,
            inclusion_probs,
            hedge,
        })
    }
}

/// Runs one strategy over a dataset: the first row initialises, every later
/// row is forecast before it is absorbed.
pub fn run_series(config: &StrategyConfig, data: &Dataset) -> Result<Vec<ForecastRecord>> {
    run_series_with(config, data, false)
}

pub fn run_series_with(
    config: &StrategyConfig,
    data: &Dataset,
    parallel: bool,
) -> Result<Vec<ForecastRecord>> {
    data.validate()?;
    config.validate()?;
    if config.kind == StrategyKind::Ar1 {
        return ar1_records(config, data);
    }
    let mut engine =
        EngineState::initialize(config, &data.x[0], data.y[0])?.with_parallel(parallel);
    data.x
        .iter()
        .zip(&data.y)
        .skip(1)
        .map(|(x, &y)| engine.step(x, y))
        .collect()
}

/// AR(1) records for every row after the first; before the estimation window
/// is filled the forecast is the running mean.
fn ar1_records(config: &StrategyConfig, data: &Dataset) -> Result<Vec<ForecastRecord>> {
    let y = &data.y;
    let window = config.ar1_min_window;
    let fitted = if y.len() > window {
        Some(eval::ar1_recursive_forecast(y, window)?)
    } else {
        None
    };
    Ok((1..y.len())
        .map(|t| {
            let f = fitted
                .as_ref()
                .and_then(|fc| fc.get(t))
                .unwrap_or_else(|| eval::mean(&y[..t]));
            ForecastRecord {
                t,
                y: y[t],
                combined_forecast: f,
                per_model_forecast: vec![f],
                per_model_weight: vec![1.0],
                per_model_lambda: Vec::new(),
                inclusion_probs: Vec::new(),
                hedge: None,
            }
        })
        .collect())
}
