//! The `backtest` command: every configured strategy over one dataset.
//!
//! Outputs (long format, one row per strategy and forecast):
//!
//! - `records.csv`: `strategy,t,time,y,forecast,error`
//! - `weights.csv`: `strategy,t,time,model,weight` (weights used for the forecast)
//! - `lambda_paths.csv`: `strategy,t,time,model,lambda` (adaptive strategies only)
//! - `inclusion.csv`: `strategy,t,time,predictor,probability`
//! - `report_table.csv`: `strategy,msfe,ratio,cw_statistic,cw_p_value,dagger`
//! - `report.json`: configuration, benchmark, MSFE table, ratios, Clark–West
//!   tests and per-strategy failures
//!
//! `t` is the zero-based row of the forecast target; forecasts start at row 1.

use std::collections::BTreeMap;
use std::path::Path;

use adma_core::data::Dataset;
use adma_core::engine::{
    self, enumerate_models_bounded, ForecastRecord, StrategyConfig, StrategyKind,
};
use adma_core::eval::{self, EvalReport};
use adma_core::simgen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{strategy_label, BacktestConfig, DataSource, GeneratorKind};
use crate::error::{invalid, io_error, runtime, CliResult};
use crate::io::{self, fmt_f64, CsvOut, CsvSchema};

/// Expert pools above this many bytes trigger a warning before running.
pub const MEMORY_WARNING_BYTES: usize = 1 << 30;

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub label: String,
    pub config: StrategyConfig,
    /// Expert names in weight order.
    pub models: Vec<String>,
    pub records: Result<Vec<ForecastRecord>, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub strategy: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: BacktestConfig,
    pub benchmark: String,
    pub burn_in: usize,
    /// First and last evaluated time labels.
    pub window: Option<(String, String)>,
    pub report: Option<EvalReport>,
    pub failures: Vec<Failure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct BacktestOutput {
    pub config: BacktestConfig,
    pub dataset: Dataset,
    pub runs: Vec<StrategyRun>,
    pub report: ReportFile,
}

impl BacktestOutput {
    pub fn failures(&self) -> &[Failure] {
        &self.report.failures
    }
}

/// Builds the dataset a config points at.
pub fn load_data(cfg: &BacktestConfig) -> CliResult<Dataset> {
    match &cfg.data {
        DataSource::Csv {
            path,
            response,
            lag_predictors,
        } => io::load_csv(
            path,
            &CsvSchema {
                response: response.clone(),
                lag_predictors: *lag_predictors,
            },
        ),
        DataSource::Generate {
            kind,
            length,
            seed,
            lambda,
        } => generate(
            *kind,
            *length,
            seed.unwrap_or(cfg.seed),
            *lambda,
            simgen::DEFAULT_DIM,
        ),
    }
}

/// A synthetic dataset in the backtest schema.
pub fn generate(
    kind: GeneratorKind,
    length: usize,
    seed: u64,
    lambda: Option<f64>,
    dim: usize,
) -> CliResult<Dataset> {
    let series = match kind {
        GeneratorKind::Static => {
            simgen::gen_static(&simgen::STATIC_THETA[..dim.min(5)], length, seed)
        }
        GeneratorKind::Abrupt => simgen::gen_abrupt(
            &simgen::ABRUPT_THETA[..dim.min(5)],
            &simgen::ABRUPT_BREAKS,
            length,
            seed,
        ),
        GeneratorKind::Drift => {
            let lambda =
                lambda.ok_or_else(|| invalid("the drift generator needs a forgetting factor"))?;
            simgen::gen_drift(
                lambda,
                length,
                seed,
                adma_core::dlm::DEFAULT_PRIOR_SCALE,
                dim,
            )
        }
        GeneratorKind::Switching => simgen::gen_switching(length, seed),
    }
    .map_err(invalid)?;
    series.to_dataset().map_err(invalid)
}

/// Names of a strategy's experts, in the order of its weight vector.
pub fn model_names(cfg: &StrategyConfig, predictors: &[String]) -> Vec<String> {
    let d = predictors.len();
    let spec_name = |spec: &adma_core::dlm::ModelSpec| {
        std::iter::once("const")
            .chain(spec.predictors().iter().map(|&j| predictors[j].as_str()))
            .collect::<Vec<_>>()
            .join("+")
    };
    match cfg.kind {
        StrategyKind::Ar1 => vec!["AR1".into()],
        StrategyKind::DlmFull => vec![std::iter::once("const")
            .chain(predictors.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join("+")],
        kind => {
            let specs = enumerate_models_bounded(d, cfg.max_predictors).unwrap_or_default();
            if kind == StrategyKind::Edma {
                let grid = cfg.resolved_grid();
                specs
                    .iter()
                    .flat_map(|s| grid.iter().map(move |l| format!("{}@{l}", spec_name(s))))
                    .collect()
            } else {
                specs.iter().map(spec_name).collect()
            }
        }
    }
}

/// Runs every strategy and evaluates the ones that succeed.
pub fn run_backtest(cfg: &BacktestConfig) -> CliResult<BacktestOutput> {
    cfg.validate()?;
    let dataset = load_data(cfg)?;
    if dataset.len() < 2 {
        return Err(invalid("the dataset needs at least two rows"));
    }
    let d = dataset.n_predictors();
    for s in &cfg.strategies {
        let bytes = s.estimate_memory_bytes(d);
        if bytes > MEMORY_WARNING_BYTES {
            eprintln!(
                "warning: {} with {d} predictors needs about {:.1} GiB for {} experts",
                strategy_label(s),
                bytes as f64 / (1u64 << 30) as f64,
                s.expert_count(d)
            );
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(runtime)?;
    let parallel = cfg.parallelism > 1;
    let runs: Vec<StrategyRun> = pool.install(|| {
        cfg.strategies
            .par_iter()
            .map(|s| StrategyRun {
                label: strategy_label(s),
                config: s.clone(),
                models: model_names(s, &dataset.predictor_names),
                records: engine::run_series_with(s, &dataset, parallel).map_err(|e| e.to_string()),
            })
            .collect()
    });
    let report = build_report(cfg, &dataset, &runs)?;
    Ok(BacktestOutput {
        config: cfg.clone(),
        dataset,
        runs,
        report,
    })
}

fn build_report(
    cfg: &BacktestConfig,
    data: &Dataset,
    runs: &[StrategyRun],
) -> CliResult<ReportFile> {
    let benchmark = cfg.benchmark_label();
    let failures: Vec<Failure> = runs
        .iter()
        .filter_map(|r| {
            r.records.as_ref().err().map(|e| Failure {
                strategy: r.label.clone(),
                error: e.clone(),
            })
        })
        .collect();
    let n_forecasts = data.len() - 1;
    let start = 1 + cfg.burn_in;
    let mut forecasts = BTreeMap::new();
    for run in runs {
        if let Ok(records) = &run.records {
            if records.len() != n_forecasts {
                return Err(runtime(format!(
                    "{} produced {} forecasts for {n_forecasts} targets",
                    run.label,
                    records.len()
                )));
            }
            let f: Vec<f64> = records[cfg.burn_in.min(n_forecasts)..]
                .iter()
                .map(|r| r.combined_forecast)
                .collect();
            forecasts.insert(run.label.clone(), f);
        }
    }
    let (report, window) = if start < data.len() && !forecasts.is_empty() {
        let y = &data.y[start..];
        let report = eval::evaluate(y, &forecasts, &[benchmark.clone()], cfg.cw_variance)
            .map_err(runtime)?;
        let window = (
            data.time_index[start].clone(),
            data.time_index[data.len() - 1].clone(),
        );
        (Some(report), Some(window))
    } else {
        (None, None)
    };
    let generated_at = cfg.timestamps.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    Ok(ReportFile {
        config: cfg.clone(),
        benchmark,
        burn_in: cfg.burn_in,
        window,
        report,
        failures,
        generated_at,
    })
}

/// Writes every backtest artifact into `dir`.
pub fn write_backtest(out: &BacktestOutput, dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let prov = out.config.provenance();
    let data = &out.dataset;

    let mut records = CsvOut::create(
        &dir.join("records.csv"),
        &prov,
        &["strategy", "t", "time", "y", "forecast", "error"],
    )?;
    let mut weights = CsvOut::create(
        &dir.join("weights.csv"),
        &prov,
        &["strategy", "t", "time", "model", "weight"],
    )?;
    let mut lambdas = CsvOut::create(
        &dir.join("lambda_paths.csv"),
        &prov,
        &["strategy", "t", "time", "model", "lambda"],
    )?;
    let mut inclusion = CsvOut::create(
        &dir.join("inclusion.csv"),
        &prov,
        &["strategy", "t", "time", "predictor", "probability"],
    )?;
    for run in &out.runs {
        let Ok(recs) = &run.records else { continue };
        for r in recs {
            let t = r.t.to_string();
            let time = &data.time_index[r.t];
            records.row([
                run.label.as_str(),
                &t,
                time,
                &fmt_f64(r.y),
                &fmt_f64(r.combined_forecast),
                &fmt_f64(r.error()),
            ])?;
            for (model, w) in run.models.iter().zip(&r.per_model_weight) {
                weights.row([run.label.as_str(), &t, time, model, &fmt_f64(*w)])?;
            }
            for (model, l) in run.models.iter().zip(&r.per_model_lambda) {
                lambdas.row([run.label.as_str(), &t, time, model, &fmt_f64(*l)])?;
            }
            for (name, p) in data.predictor_names.iter().zip(&r.inclusion_probs) {
                inclusion.row([run.label.as_str(), &t, time, name, &fmt_f64(*p)])?;
            }
        }
    }
    records.finish()?;
    weights.finish()?;
    lambdas.finish()?;
    inclusion.finish()?;

    write_report_table(&dir.join("report_table.csv"), &out.report)?;
    io::write_json(&dir.join("report.json"), &out.report)
}

/// One row per evaluated strategy; `dagger` marks a Clark–West rejection
/// against the benchmark.
pub fn write_report_table(path: &Path, report: &ReportFile) -> CliResult<()> {
    let prov = report.config.provenance();
    let mut out = CsvOut::create(
        path,
        &prov,
        &[
            "strategy",
            "msfe",
            "ratio",
            "cw_statistic",
            "cw_p_value",
            "dagger",
        ],
    )?;
    for row in table_rows(report) {
        out.row([
            row.strategy,
            fmt_f64(row.msfe),
            row.ratio.map(fmt_f64).unwrap_or_default(),
            row.cw_statistic.map(fmt_f64).unwrap_or_default(),
            row.cw_p_value.map(fmt_f64).unwrap_or_default(),
            if row.dagger {
                "†".into()
            } else {
                String::new()
            },
        ])?;
    }
    out.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub strategy: String,
    pub msfe: f64,
    pub ratio: Option<f64>,
    pub cw_statistic: Option<f64>,
    pub cw_p_value: Option<f64>,
    pub dagger: bool,
}

/// The report as a table in strategy order of the configuration.
pub fn table_rows(report: &ReportFile) -> Vec<TableRow> {
    let Some(ev) = &report.report else {
        return Vec::new();
    };
    report
        .config
        .labels()
        .into_iter()
        .filter_map(|label| {
            let msfe = *ev.msfe_per_strategy.get(&label)?;
            let ratio = ev
                .msfe_ratios
                .iter()
                .find(|r| r.strategy == label && r.benchmark == report.benchmark)
                .map(|r| r.ratio);
            let cw = ev
                .cw_stats
                .iter()
                .find(|c| c.strategy == label && c.benchmark == report.benchmark);
            Some(TableRow {
                strategy: label,
                msfe,
                ratio,
                cw_statistic: cw.and_then(|c| c.statistic),
                cw_p_value: cw.and_then(|c| c.p_value),
                dagger: cw.is_some_and(|c| c.reject),
            })
        })
        .collect()
}
