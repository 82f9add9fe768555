//! The `report` command: renders a backtest's `report.json` as a table.

use std::fmt::Write as _;
use std::path::Path;

use crate::backtest::{table_rows, ReportFile};
use crate::error::{invalid, io_error, CliResult};

pub fn read_report(dir: &Path) -> CliResult<ReportFile> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(io_error(&path))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Plain-text table of MSFE, ratio to the benchmark and Clark–West results.
pub fn render(report: &ReportFile) -> String {
    let mut out = String::new();
    let rows = table_rows(report);
    let width = rows
        .iter()
        .map(|r| r.strategy.chars().count())
        .max()
        .unwrap_or(8)
        .max(8);
    if let Some(ev) = &report.report {
        let window = report
            .window
            .as_ref()
            .map(|(a, b)| format!(" ({a} to {b})"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{} forecasts{window}, benchmark {}",
            ev.n_forecasts, report.benchmark
        );
    }
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>8}  {:>8}  {:>8}",
        "strategy", "MSFE", "ratio", "CW", "p"
    );
    for r in &rows {
        let opt = |v: Option<f64>, prec: usize| {
            v.map(|v| format!("{v:.prec$}"))
                .unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>12.6}  {:>8}  {:>8}  {:>8}{}",
            r.strategy,
            r.msfe,
            opt(r.ratio, 4),
            opt(r.cw_statistic, 3),
            opt(r.cw_p_value, 3),
            if r.dagger { " †" } else { "" }
        );
    }
    for f in &report.failures {
        let _ = writeln!(out, "{:<width$}  failed: {}", f.strategy, f.error);
    }
    out
}
