//! Backtest configuration files (TOML).
//!
//! ```toml
//! seed = 2024
//! burn_in = 20
//! output_dir = "out"
//! parallelism = 4
//! benchmark = "AR1"
//!
//! [data]
//! source = "csv"
//! path = "prices.csv"
//! response = "y"
//! lag_predictors = true
//!
//! [[strategies]]
//! kind = "AR1"
//!
//! [[strategies]]
//! kind = "DMA"
//! lambda = 0.95
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adma_core::engine::{StrategyConfig, StrategyKind};
use adma_core::eval::CwVariance;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_error, CliResult};

pub const DEFAULT_SEED: u64 = 2024;

/// Synthetic series available to `gen-data` and generated backtests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Static,
    Abrupt,
    Drift,
    Switching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        response: String,
        #[serde(default)]
        lag_predictors: bool,
    },
    Generate {
        kind: GeneratorKind,
        #[serde(default = "default_length")]
        length: usize,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
        /// True forgetting factor of the drift design.
        #[serde(default)]
        lambda: Option<f64>,
    },
}

fn default_length() -> usize {
    300
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

pub(crate) fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    pub data: DataSource,
    pub strategies: Vec<StrategyConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Forecasts excluded from evaluation at the start of the sample.
    #[serde(default)]
    pub burn_in: usize,
    /// Where outputs go; not part of the embedded provenance.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    /// Worker threads; results do not depend on it, so it is not embedded
    /// in outputs either.
    #[serde(default = "default_parallelism", skip_serializing)]
    pub parallelism: usize,
    /// Label of the benchmark strategy; defaults to `AR1` when configured,
    /// otherwise the first strategy.
    #[serde(default)]
    pub benchmark: Option<String>,
    #[serde(default)]
    pub cw_variance: CwVariance,
    /// Adds a `generated_at` field to `report.json`.
    #[serde(default)]
    pub timestamps: bool,
}

impl BacktestConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Csv { path, .. } = &mut cfg.data {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.strategies.is_empty() {
            return Err(invalid("config: at least one strategy is required"));
        }
        if self.parallelism == 0 {
            return Err(invalid("config: parallelism must be >= 1"));
        }
        for s in &self.strategies {
            s.validate()
                .map_err(|e| invalid(format!("strategy {}: {e}", strategy_label(s))))?;
        }
        let labels = self.labels();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(invalid(format!("config: duplicate strategy '{l}'")));
            }
        }
        if let Some(b) = &self.benchmark {
            if !labels.contains(b) {
                return Err(invalid(format!(
                    "config: benchmark '{b}' is not among the strategies ({})",
                    labels.join(", ")
                )));
            }
        }
        if let DataSource::Generate {
            length,
            lambda,
            kind,
            ..
        } = &self.data
        {
            if *length < 2 {
                return Err(invalid("config: generated series need length >= 2"));
            }
            if *kind == GeneratorKind::Drift && lambda.is_none() {
                return Err(invalid("config: the drift generator needs `lambda`"));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.strategies.iter().map(strategy_label).collect()
    }

    pub fn benchmark_label(&self) -> String {
        self.benchmark.clone().unwrap_or_else(|| {
            self.strategies
                .iter()
                .find(|s| s.kind == StrategyKind::Ar1)
                .map(strategy_label)
                .unwrap_or_else(|| strategy_label(&self.strategies[0]))
        })
    }

    /// Compact JSON of the resolved configuration, embedded in every output.
    pub fn provenance(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }
}

/// Display name of a strategy: its kind, plus any explicitly set forgetting
/// parameters, e.g. `DMA(0.95)` or `DMA(λ=0.95,α=0.99,c=0.001)`.
pub fn strategy_label(s: &StrategyConfig) -> String {
    let mut label = s.kind.label().to_string();
    let mut params = Vec::new();
    if let Some(l) = s.lambda {
        params.push(("λ", l));
    }
    if let Some(a) = s.alpha {
        params.push(("α", a));
    }
    if let Some(c) = s.c {
        params.push(("c", c));
    }
    match params.as_slice() {
        [] => {}
        [("λ", l)] => {
            let _ = write!(label, "({l})");
        }
        _ => {
            let inner: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = write!(label, "({})", inner.join(","));
        }
    }
    if let Some(grid) = &s.lambda_grid {
        let _ = write!(
            label,
            "[{}]",
            grid.iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(",")
        );
    }
    label
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[data]
source = "generate"
kind = "switching"

[[strategies]]
kind = "AR1"

[[strategies]]
kind = "DMA"
lambda = 0.95
"#;

    #[test]
    fn defaults_are_filled() {
        let cfg = BacktestConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.parallelism, 1);
        assert_eq!(cfg.labels(), vec!["AR1", "DMA(0.95)"]);
        assert_eq!(cfg.benchmark_label(), "AR1");
        assert_eq!(cfg.strategies[1].adam, Default::default());
        let back: BacktestConfig = serde_json::from_str(&cfg.provenance()).unwrap();
        assert_eq!(back, cfg);
        let mut threaded = cfg.clone();
        threaded.parallelism = 8;
        threaded.output_dir = "elsewhere".into();
        assert_eq!(threaded.provenance(), cfg.provenance());
    }

    #[test]
    fn rejects_bad_configs() {
        let dup = format!("{MINIMAL}\n[[strategies]]\nkind = \"AR1\"\n");
        assert!(BacktestConfig::from_toml(&dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let typo = MINIMAL.replace("lambda = 0.95", "lamda = 0.95");
        assert!(BacktestConfig::from_toml(&typo).is_err());
        let bad_lambda = MINIMAL.replace("0.95", "1.5");
        assert!(BacktestConfig::from_toml(&bad_lambda).is_err());
        let bench = format!("benchmark = \"BMA\"\n{MINIMAL}");
        assert!(BacktestConfig::from_toml(&bench)
            .unwrap_err()
            .to_string()
            .contains("benchmark"));
    }

    #[test]
    fn labels_show_explicit_parameters() {
        let mut s = StrategyConfig::dma(0.95);
        s.alpha = Some(0.99);
        assert_eq!(strategy_label(&s), "DMA(λ=0.95,α=0.99)");
        assert_eq!(strategy_label(&StrategyConfig::adma()), "ADMA");
    }
}
