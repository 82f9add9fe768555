//! Forecast evaluation: MSFE, the recursive AR(1) benchmark, the Clark–West
//! adjusted-MSPE test and quantile summaries of simulated paths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// One-sided significance level used for Clark–West rejections.
pub const SIGNIFICANCE: f64 = 0.05;

/// Default number of observations before the AR(1) benchmark is estimated.
pub const DEFAULT_AR1_MIN_WINDOW: usize = 20;

/// Mean squared forecast error.
pub fn msfe(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("forecast errors"));
    }
    Ok(errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64)
}

/// Expanding-window AR(1) forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Forecasts {
    /// Index of the response forecast by `values[0]`.
    pub first_target: usize,
    pub values: Vec<f64>,
    /// Targets whose design was singular and fell back to the sample mean.
    pub fallback_targets: Vec<usize>,
}

impl Ar1Forecasts {
    pub fn get(&self, target: usize) -> Option<f64> {
        target
            .checked_sub(self.first_target)
            .and_then(|i| self.values.get(i).copied())
    }
}

/// Forecast of `y[j]` from an OLS fit of `y_s` on `(1, y_{s-1})` over `y[..j]`.
///
/// Returns `None` when the lagged regressor has no variation.
pub(crate) fn ar1_forecast_from(history: &[f64]) -> Option<f64> {
    let n = history.len();
    if n < 3 {
        return None;
    }
    let lagged = &history[..n - 1];
    let current = &history[1..];
    let m = lagged.len() as f64;
    let xm = lagged.iter().sum::<f64>() / m;
    let ym = current.iter().sum::<f64>() / m;
    let (mut sxx, mut sxy, mut scale) = (0.0, 0.0, 0.0);
    for (x, y) in lagged.iter().zip(current) {
        sxx += (x - xm) * (x - xm);
        sxy += (x - xm) * (y - ym);
        scale += x * x;
    }
    if sxx <= 1e-12 * scale.max(1.0) {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    Some(intercept + slope * history[n - 1])
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Recursive AR(1) benchmark: for every `j ≥ min_window`, forecasts `y[j]`
/// from the observations `y[..j]`.
pub fn ar1_recursive_forecast(y: &[f64], min_window: usize) -> Result<Ar1Forecasts> {
    if min_window < 3 {
        return Err(Error::Config(format!(
            "AR(1) minimum window must be >= 3, got {min_window}"
        )));
    }
    if y.len() <= min_window {
        return Err(Error::Config(format!(
            "series of length {} too short for an AR(1) window of {min_window}",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("AR(1) input series".into()));
    }
    let mut values = Vec::with_capacity(y.len() - min_window);
    let mut fallback_targets = Vec::new();
    for j in min_window..y.len() {
        let history = &y[..j];
        match ar1_forecast_from(history) {
            Some(f) => values.push(f),
            None => {
                fallback_targets.push(j);
                values.push(mean(history));
            }
        }
    }
    Ok(Ar1Forecasts {
        first_target: min_window,
        values,
        fallback_targets,
    })
}

/// Variance estimator for the Clark–West statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CwVariance {
    /// Sample variance of the adjusted loss differential.
    #[default]
    Plain,
    /// Newey–West long-run variance with Bartlett weights.
    NeweyWest { lags: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClarkWest {
    pub statistic: f64,
    /// One-sided p-value against the alternative that `alt` is more accurate.
    pub p_value: f64,
}

impl ClarkWest {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Adjusted loss differentials `f_t = e_b² - (e_a² - (ŷ_b - ŷ_a)²)`.
pub fn clark_west_terms(y: &[f64], yhat_bench: &[f64], yhat_alt: &[f64]) -> Result<Vec<f64>> {
    if y.len() != yhat_bench.len() || y.len() != yhat_alt.len() {
        return Err(Error::Dimension {
            expected: y.len(),
            got: yhat_bench.len().min(yhat_alt.len()),
        });
    }
    Ok(y.iter()
        .zip(yhat_bench.iter().zip(yhat_alt))
        .map(|(y, (b, a))| {
            let eb = y - b;
            let ea = y - a;
            eb * eb - (ea * ea - (b - a) * (b - a))
        })
        .collect())
}

/// Clark–West test of equal predictive accuracy for nested models.
pub fn clark_west(
    y: &[f64],
    yhat_bench: &[f64],
    yhat_alt: &[f64],
    variance: CwVariance,
) -> Result<ClarkWest> {
    if y.len() < 10 {
        return Err(Error::Config(format!(
            "Clark-West test needs at least 10 forecasts, got {}",
            y.len()
        )));
    }
    let f = clark_west_terms(y, yhat_bench, yhat_alt)?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Clark-West loss differential".into()));
    }
    if f.iter().all(|v| *v == 0.0) {
        return Err(Error::UndefinedStatistic("no difference between forecasts"));
    }
    let n = f.len() as f64;
    let fbar = mean(&f);
    let long_run = match variance {
        CwVariance::Plain => f.iter().map(|v| (v - fbar) * (v - fbar)).sum::<f64>() / (n - 1.0),
        CwVariance::NeweyWest { lags } => {
            let autocov = |lag: usize| {
                f.iter()
                    .skip(lag)
                    .zip(&f)
                    .map(|(a, b)| (a - fbar) * (b - fbar))
                    .sum::<f64>()
                    / n
            };
            let mut s = autocov(0);
            for lag in 1..=lags.min(f.len() - 1) {
                s += 2.0 * (1.0 - lag as f64 / (lags as f64 + 1.0)) * autocov(lag);
            }
            s
        }
    };
    let statistic = if long_run > 0.0 {
        fbar / (long_run / n).sqrt()
    } else {
        fbar.signum() * f64::INFINITY
    };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = (1.0 - normal.cdf(statistic)).clamp(0.0, 1.0);
    Ok(ClarkWest { statistic, p_value })
}

/// Per-time median and quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathQuantiles {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl PathQuantiles {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and interquartile range across replications at every time step.
pub fn lambda_path_summary(paths: &[Vec<f64>]) -> Result<Vec<PathQuantiles>> {
    let first = paths.first().ok_or(Error::Empty("replication paths"))?;
    let len = first.len();
    if let Some(bad) = paths.iter().find(|p| p.len() != len) {
        return Err(Error::Dimension {
            expected: len,
            got: bad.len(),
        });
    }
    let mut column = Vec::with_capacity(paths.len());
    Ok((0..len)
        .map(|t| {
            column.clear();
            column.extend(paths.iter().map(|p| p[t]));
            column.sort_by(f64::total_cmp);
            PathQuantiles {
                median: quantile_sorted(&column, 0.5),
                q1: quantile_sorted(&column, 0.25),
                q3: quantile_sorted(&column, 0.75),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub strategy: String,
    pub benchmark: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwEntry {
    /// Alternative model.
    pub strategy: String,
    pub benchmark: String,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Rejection of equal accuracy in favour of `strategy` at [`SIGNIFICANCE`].
    pub reject: bool,
    pub note: Option<String>,
}

/// MSFE table, ratios and Clark–West tests over a common evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_forecasts: usize,
    pub msfe_per_strategy: BTreeMap<String, f64>,
    pub msfe_ratios: Vec<RatioEntry>,
    pub cw_stats: Vec<CwEntry>,
    pub significance: f64,
}

/// Evaluates aligned forecasts against `y`.
///
/// Ratios and tests are computed against every name in `benchmarks` that has
/// forecasts; a benchmark's ratio against itself is reported as 1.
pub fn evaluate(
    y: &[f64],
    forecasts: &BTreeMap<String, Vec<f64>>,
    benchmarks: &[String],
    variance: CwVariance,
) -> Result<EvalReport> {
    if y.is_empty() {
        return Err(Error::Empty("evaluation window"));
    }
    let mut msfe_per_strategy = BTreeMap::new();
    for (name, f) in forecasts {
        if f.len() != y.len() {
            return Err(Error::Dimension {
                expected: y.len(),
                got: f.len(),
            });
        }
        let errors: Vec<f64> = y.iter().zip(f).map(|(y, f)| y - f).collect();
        msfe_per_strategy.insert(name.clone(), msfe(&errors)?);
    }
    let mut msfe_ratios = Vec::new();
    let mut cw_stats = Vec::new();
    if forecasts.len() > 1 {
        for bench in benchmarks {
            let Some(bench_f) = forecasts.get(bench) else {
                continue;
            };
            let bench_msfe = msfe_per_strategy[bench];
            for (name, alt_f) in forecasts {
                let ratio = if name == bench {
                    1.0
                } else {
                    msfe_per_strategy[name] / bench_msfe
                };
                msfe_ratios.push(RatioEntry {
                    strategy: name.clone(),
                    benchmark: bench.clone(),
                    ratio,
                });
                if name == bench {
                    continue;
                }
                let entry = match clark_west(y, bench_f, alt_f, variance) {
                    Ok(cw) => CwEntry {
                        strategy: name.clone(),
                        benchmark: bench.clone(),
                        statistic: Some(cw.statistic),
                        p_value: Some(cw.p_value),
                        reject: cw.rejects(SIGNIFICANCE),
                        note: None,
                    },
                    Err(e) => CwEntry {
                        strategy: name.clone(),
                        benchmark: bench.clone(),
                        statistic: None,
                        p_value: None,
                        reject: false,
                        note: Some(e.to_string()),
                    },
                };
                cw_stats.push(entry);
            }
        }
    }
    Ok(EvalReport {
        n_forecasts: y.len(),
        msfe_per_strategy,
        msfe_ratios,
        cw_stats,
        significance: SIGNIFICANCE,
    })
}
