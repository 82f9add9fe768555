use std::path::PathBuf;
use std::process::ExitCode;

use adma_cli::backtest::{self, run_backtest, write_backtest};
use adma_cli::config::{BacktestConfig, GeneratorKind, DEFAULT_SEED};
use adma_cli::error::{invalid, CliResult};
use adma_cli::simulate::{self, SimKind, SimulateConfig};
use adma_cli::{io, report};
use adma_core::adaptive::AdamConfig;
use clap::{Parser, Subcommand};

/// Adaptive dynamic model averaging experiments.
///
/// Exit codes: 0 success, 1 invalid arguments, configuration or data,
/// 2 runtime or numerical failure (including any failed strategy).
#[derive(Debug, Parser)]
#[command(name = "adma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replicated simulation studies.
    Simulate(SimulateArgs),
    /// Run the strategies of a TOML config over a dataset.
    Backtest {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `parallelism` from the config.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write a synthetic dataset in the backtest CSV schema.
    GenData {
        kind: GeneratorKind,
        #[arg(long = "T", default_value_t = 300)]
        length: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// True forgetting factor (drift).
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 5)]
        dim: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the table of a finished backtest.
    Report { dir: PathBuf },
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    kind: SimKind,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long = "T")]
    length: Option<usize>,
    /// True forgetting factor of the drift design.
    #[arg(long)]
    lambda: Option<f64>,
    /// DMA `α` values (three-model); repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    /// DMA `c` values (three-model); repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    c: Vec<f64>,
    /// Lower bound of the adaptive forgetting factor.
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    lambda_init: Option<f64>,
    /// ADAM step size.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    g: f64,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 300)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

impl SimulateArgs {
    fn to_config(&self) -> SimulateConfig {
        let mut cfg = SimulateConfig::new(self.kind);
        if let Some(r) = self.reps {
            cfg.replications = r;
        }
        if let Some(t) = self.length {
            cfg.length = t;
        }
        cfg.seed = self.seed;
        cfg.lambda = self.lambda;
        if !self.alpha.is_empty() {
            cfg.alphas = self.alpha.clone();
        }
        if !self.c.is_empty() {
            cfg.cs = self.c.clone();
        }
        let d = AdamConfig::default();
        cfg.adam = AdamConfig {
            lambda_min: self.lambda_min.unwrap_or(d.lambda_min),
            lambda_max: self.lambda_max.unwrap_or(d.lambda_max),
            lambda_init: self.lambda_init.unwrap_or(d.lambda_init),
            gamma: self.gamma.unwrap_or(d.gamma),
            ..d
        };
        cfg.g = self.g;
        cfg.dim = self.dim;
        cfg.burn_in = self.burn_in;
        cfg.parallelism = self.threads;
        cfg
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::Simulate(args) => {
            let cfg = args.to_config();
            let out = simulate::run_simulation(&cfg)?;
            simulate::write_simulation(&cfg, &out, &args.out)?;
            let summary = simulate::summarize(&cfg, &out);
            if let Some(l) = summary.lambda {
                println!(
                    "lambda: min {:.4}, max {:.4}, final median {:.4}",
                    l.min_lambda, l.max_lambda, l.final_median
                );
                if let Some(dev) = l.max_median_deviation {
                    println!("max |median - lambda*| after t = {}: {dev:.4}", cfg.burn_in);
                }
            }
            println!("wrote {}", args.out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Backtest {
            config,
            out,
            threads,
        } => {
            let mut cfg = BacktestConfig::load(&config)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            if let Some(n) = threads {
                cfg.parallelism = n;
                cfg.validate()?;
            }
            let result = run_backtest(&cfg)?;
            write_backtest(&result, &cfg.output_dir)?;
            print!("{}", report::render(&result.report));
            println!("wrote {}", cfg.output_dir.display());
            Ok(if result.failures().is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::GenData {
            kind,
            length,
            seed,
            lambda,
            dim,
            out,
        } => {
            if kind != GeneratorKind::Drift && dim != 5 {
                return Err(invalid("--dim applies to the drift design only"));
            }
            let data = backtest::generate(kind, length, seed, lambda, dim)?;
            let prov = serde_json::json!({
                "kind": kind, "length": length, "seed": seed, "lambda": lambda, "dim": dim
            });
            io::write_dataset(&out, &data, &prov.to_string())?;
            println!("wrote {} rows to {}", data.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir } => {
            print!("{}", report::render(&report::read_report(&dir)?));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
