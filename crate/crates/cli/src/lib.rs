//! Experiment runner for adaptive dynamic model averaging: CSV ingestion,
//! backtests over configured strategy sets, the simulation studies and
//! plain CSV/JSON outputs.

pub mod backtest;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod simulate;

pub use error::{CliError, CliResult};
