//! The `simulate` command: replicated runs of the simulation designs.
//!
//! For `static`, `abrupt` and `drift` each replication runs one
//! adaptive-forgetting filter (no intercept) and the outputs are
//!
//! - `lambda_paths.csv`: `t,median,q1,q3` of `λ_t` across replications
//! - `coef_paths.csv`: `t,coef,true_median,median,q1,q3` of the estimates
//!
//! For `three-model` the three fixed Gaussian experts are combined by the
//! DMA weight recursion for every `(α, c)` pair, and `weights.csv` holds
//! `rep,alpha,c,t,model,weight` after each observation.
//!
//! `summary.json` closes every run. Time `t` is 1-based here.

use std::path::Path;

use adma_core::adaptive::{run_af_filter, AdamConfig};
use adma_core::combine::DmaCombinerState;
use adma_core::dlm::DEFAULT_PRIOR_SCALE;
use adma_core::engine::{Combiner, EngineState, Expert};
use adma_core::eval::{lambda_path_summary, quantile_sorted, PathQuantiles};
use adma_core::simgen::{self, SimSeries};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::DEFAULT_SEED;
use crate::error::{invalid, io_error, runtime, CliResult};
use crate::io::{fmt_f64, write_json, CsvOut};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SimKind {
    Static,
    Abrupt,
    Drift,
    ThreeModel,
}

/// The `α` grid of the three-model study.
pub const THREE_MODEL_ALPHAS: [f64; 3] = [0.99, 0.95, 0.9];

/// The `c` grid of the three-model study.
pub fn three_model_cs() -> Vec<f64> {
    vec![0.0, 1e-20, 1e-3 / 3.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub kind: SimKind,
    pub replications: usize,
    pub seed: u64,
    pub length: usize,
    /// True forgetting factor of the drift design.
    pub lambda: Option<f64>,
    pub alphas: Vec<f64>,
    pub cs: Vec<f64>,
    pub adam: AdamConfig,
    pub g: f64,
    pub dim: usize,
    /// Steps excluded from the drift deviation summary.
    pub burn_in: usize,
    /// Worker threads; not embedded in outputs.
    #[serde(default = "crate::config::default_parallelism", skip_serializing)]
    pub parallelism: usize,
}

impl SimulateConfig {
    pub fn new(kind: SimKind) -> Self {
        Self {
            kind,
            replications: if kind == SimKind::ThreeModel { 1 } else { 100 },
            seed: DEFAULT_SEED,
            length: if kind == SimKind::ThreeModel {
                300
            } else {
                1000
            },
            lambda: None,
            alphas: THREE_MODEL_ALPHAS.to_vec(),
            cs: three_model_cs(),
            adam: AdamConfig::default(),
            g: DEFAULT_PRIOR_SCALE,
            dim: simgen::DEFAULT_DIM,
            burn_in: 300,
            parallelism: 1,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.replications == 0 {
            return Err(invalid("replications must be >= 1"));
        }
        if self.length < 2 {
            return Err(invalid("series length must be >= 2"));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism must be >= 1"));
        }
        self.adam.validate().map_err(invalid)?;
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(invalid("g must be positive"));
        }
        match self.kind {
            SimKind::Drift => match self.lambda {
                Some(l) if l > 0.0 && l < 1.0 => {}
                Some(l) => {
                    return Err(invalid(format!("drift lambda must lie in (0, 1), got {l}")))
                }
                None => return Err(invalid("the drift design needs --lambda")),
            },
            SimKind::Static | SimKind::Abrupt if self.dim != simgen::DEFAULT_DIM => {
                return Err(invalid(
                    "the static and abrupt designs have five covariates",
                ));
            }
            SimKind::ThreeModel => {
                if self.alphas.is_empty() || self.cs.is_empty() {
                    return Err(invalid("three-model needs at least one alpha and one c"));
                }
                if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    return Err(invalid("alpha must lie in [0, 1]"));
                }
                if self.cs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                    return Err(invalid("c must be finite and >= 0"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn provenance(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    fn generate(&self, rep: u64) -> CliResult<SimSeries> {
        let seed = simgen::replication_seed(self.seed, rep);
        match self.kind {
            SimKind::Static => simgen::gen_static(&simgen::STATIC_THETA, self.length, seed),
            SimKind::Abrupt => {
                let breaks: Vec<(usize, f64)> = simgen::ABRUPT_BREAKS
                    .iter()
                    .copied()
                    .filter(|(t, _)| *t < self.length)
                    .collect();
                simgen::gen_abrupt(&simgen::ABRUPT_THETA, &breaks, self.length, seed)
            }
            SimKind::Drift => simgen::gen_drift(
                self.lambda.unwrap_or(0.99),
                self.length,
                seed,
                self.g,
                self.dim,
            ),
            SimKind::ThreeModel => {
                simgen::gen_three_model(self.length, seed, &simgen::three_model_regimes())
                    .map(|(s, _)| s)
            }
        }
        .map_err(invalid)
    }
}

/// Replicated adaptive-forgetting runs.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaStudy {
    /// `λ_t` per replication.
    pub lambda_paths: Vec<Vec<f64>>,
    pub lambda_summary: Vec<PathQuantiles>,
    /// Per coefficient, per time: quantiles of the estimates.
    pub coef_summary: Vec<Vec<PathQuantiles>>,
    /// Per coefficient, per time: median of the true values.
    pub coef_true: Vec<Vec<f64>>,
}

/// Weight trajectories of one `(α, c)` pair in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRun {
    pub rep: usize,
    pub alpha: f64,
    pub c: f64,
    /// Weights after absorbing `y_t`, `t = 1..=T`.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimulationOutput {
    Lambda(LambdaStudy),
    Weights(Vec<WeightRun>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub min_lambda: f64,
    pub max_lambda: f64,
    pub final_median: f64,
    /// `max_t |median λ_t - λ*|` over `t > burn_in` (drift only).
    pub max_median_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub rep: usize,
    pub alpha: f64,
    pub c: f64,
    pub min_weight: Vec<f64>,
    pub final_weight: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub config: SimulateConfig,
    pub lambda: Option<LambdaSummary>,
    pub weights: Vec<WeightSummary>,
}

pub fn run_simulation(cfg: &SimulateConfig) -> CliResult<SimulationOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(runtime)?;
    pool.install(|| match cfg.kind {
        SimKind::ThreeModel => three_model_study(cfg).map(SimulationOutput::Weights),
        _ => lambda_study(cfg).map(SimulationOutput::Lambda),
    })
}

fn lambda_study(cfg: &SimulateConfig) -> CliResult<LambdaStudy> {
    let runs: Vec<(SimSeries, Vec<f64>, Vec<DVector<f64>>)> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|rep| {
            let series = cfg.generate(rep)?;
            let x: Vec<DVector<f64>> = series
                .x
                .iter()
                .map(|r| DVector::from_vec(r.clone()))
                .collect();
            let path = run_af_filter(&x, &series.y, cfg.g, cfg.adam)
                .map_err(|e| runtime(format!("replication {rep}: {e}")))?;
            Ok((series, path.lambdas, path.thetas))
        })
        .collect::<CliResult<_>>()?;
    let lambda_paths: Vec<Vec<f64>> = runs.iter().map(|r| r.1.clone()).collect();
    let lambda_summary = lambda_path_summary(&lambda_paths).map_err(runtime)?;
    let dim = runs[0].0.dim();
    let mut coef_summary = Vec::with_capacity(dim);
    let mut coef_true = Vec::with_capacity(dim);
    for j in 0..dim {
        let est: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| r.2.iter().map(|th| th[j]).collect())
            .collect();
        coef_summary.push(lambda_path_summary(&est).map_err(runtime)?);
        let truth: Vec<f64> = (0..cfg.length)
            .map(|t| {
                let mut col: Vec<f64> = runs.iter().map(|r| r.0.theta_path[t][j]).collect();
                col.sort_by(f64::total_cmp);
                quantile_sorted(&col, 0.5)
            })
            .collect();
        coef_true.push(truth);
    }
    Ok(LambdaStudy {
        lambda_paths,
        lambda_summary,
        coef_summary,
        coef_true,
    })
}

fn three_model_study(cfg: &SimulateConfig) -> CliResult<Vec<WeightRun>> {
    let regimes = simgen::three_model_regimes();
    let mut jobs = Vec::new();
    for rep in 0..cfg.replications {
        for &alpha in &cfg.alphas {
            for &c in &cfg.cs {
                jobs.push((rep, alpha, c));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(rep, alpha, c)| {
            let series = cfg.generate(rep as u64)?;
            let experts = regimes
                .iter()
                .map(|r| Expert::gaussian(r.mean, r.var))
                .collect::<adma_core::Result<Vec<_>>>()
                .map_err(runtime)?;
            let combiner =
                Combiner::Dma(DmaCombinerState::uniform(experts.len(), alpha, c).map_err(invalid)?);
            let mut engine = EngineState::from_experts(experts, combiner, 0).map_err(runtime)?;
            let mut weights = Vec::with_capacity(series.len());
            for &y in &series.y {
                engine.step(&[], y).map_err(runtime)?;
                weights.push(engine.combiner.weights().to_vec());
            }
            Ok(WeightRun {
                rep,
                alpha,
                c,
                weights,
            })
        })
        .collect()
}

pub fn summarize(cfg: &SimulateConfig, out: &SimulationOutput) -> SimulationSummary {
    match out {
        SimulationOutput::Lambda(study) => {
            let all = study.lambda_paths.iter().flatten().copied();
            let (min_lambda, max_lambda) = all
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            let max_median_deviation = match (cfg.kind, cfg.lambda) {
                (SimKind::Drift, Some(target)) => Some(
                    study
                        .lambda_summary
                        .iter()
                        .skip(cfg.burn_in)
                        .map(|q| (q.median - target).abs())
                        .fold(0.0, f64::max),
                ),
                _ => None,
            };
            SimulationSummary {
                config: cfg.clone(),
                lambda: Some(LambdaSummary {
                    min_lambda,
                    max_lambda,
                    final_median: study.lambda_summary.last().map_or(f64::NAN, |q| q.median),
                    max_median_deviation,
                }),
                weights: Vec::new(),
            }
        }
        SimulationOutput::Weights(runs) => SimulationSummary {
            config: cfg.clone(),
            lambda: None,
            weights: runs
                .iter()
                .map(|r| {
                    let k = r.weights.first().map_or(0, Vec::len);
                    WeightSummary {
                        rep: r.rep,
                        alpha: r.alpha,
                        c: r.c,
                        min_weight: (0..k)
                            .map(|m| r.weights.iter().map(|w| w[m]).fold(f64::INFINITY, f64::min))
                            .collect(),
                        final_weight: r.weights.last().cloned().unwrap_or_default(),
                    }
                })
                .collect(),
        },
    }
}

pub fn write_simulation(cfg: &SimulateConfig, out: &SimulationOutput, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let prov = cfg.provenance();
    match out {
        SimulationOutput::Lambda(study) => {
            let mut lp = CsvOut::create(
                &dir.join("lambda_paths.csv"),
                &prov,
                &["t", "median", "q1", "q3"],
            )?;
            for (t, q) in study.lambda_summary.iter().enumerate() {
                lp.row([
                    (t + 1).to_string(),
                    fmt_f64(q.median),
                    fmt_f64(q.q1),
                    fmt_f64(q.q3),
                ])?;
            }
            lp.finish()?;
            let mut cp = CsvOut::create(
                &dir.join("coef_paths.csv"),
                &prov,
                &["t", "coef", "true_median", "median", "q1", "q3"],
            )?;
            for t in 0..cfg.length {
                for (j, summary) in study.coef_summary.iter().enumerate() {
                    let q = &summary[t];
                    cp.row([
                        (t + 1).to_string(),
                        format!("theta{}", j + 1),
                        fmt_f64(study.coef_true[j][t]),
                        fmt_f64(q.median),
                        fmt_f64(q.q1),
                        fmt_f64(q.q3),
                    ])?;
                }
            }
            cp.finish()?;
        }
        SimulationOutput::Weights(runs) => {
            let mut w = CsvOut::create(
                &dir.join("weights.csv"),
                &prov,
                &["rep", "alpha", "c", "t", "model", "weight"],
            )?;
            for run in runs {
                let (rep, alpha, c) = (run.rep.to_string(), fmt_f64(run.alpha), fmt_f64(run.c));
                for (t, ws) in run.weights.iter().enumerate() {
                    let t = (t + 1).to_string();
                    for (m, v) in ws.iter().enumerate() {
                        w.row([
                            rep.as_str(),
                            &alpha,
                            &c,
                            &t,
                            &format!("M{}", m + 1),
                            &fmt_f64(*v),
                        ])?;
                    }
                }
            }
            w.finish()?;
        }
    }
    write_json(&dir.join("summary.json"), &summarize(cfg, out))
}
