//! CSV ingestion and the plain-text output writers.
//!
//! Every CSV written here starts with a `# config: <json>` comment line that
//! holds the resolved configuration, followed by a header row. Floats use the
//! shortest representation that parses back to the same value.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use adma_core::data::Dataset;
use serde::Serialize;

use crate::error::{invalid, io_error, CliError, CliResult};

/// How to interpret an input CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    /// Name of the response column.
    pub response: String,
    /// Pair `y_t` with the predictors of row `t - 1`, dropping the first row.
    pub lag_predictors: bool,
}

/// Loads a dataset: the first column is the time label, `schema.response`
/// names the response and every other column is a predictor.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> CliResult<Dataset> {
    let file = File::open(path).map_err(io_error(path))?;
    parse_csv(file, schema).map_err(|e| match e {
        CliError::Validation(msg) => invalid(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_csv(reader: impl std::io::Read, schema: &CsvSchema) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| invalid(format!("header: {e}")))?
        .clone();
    if headers.len() < 3 {
        return Err(invalid(
            "expected a time column, the response and at least one predictor",
        ));
    }
    let response_col = headers
        .iter()
        .position(|h| h == schema.response)
        .ok_or_else(|| invalid(format!("response column '{}' not found", schema.response)))?;
    if response_col == 0 {
        return Err(invalid(
            "the first column holds time labels, not the response",
        ));
    }
    let predictor_cols: Vec<usize> = (1..headers.len()).filter(|&c| c != response_col).collect();
    let predictor_names: Vec<String> = predictor_cols
        .iter()
        .map(|&c| headers[c].to_string())
        .collect();

    let mut time = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| invalid(format!("row {row}: {e}")))?;
        let cell = |col: usize| -> CliResult<f64> {
            let raw = record.get(col).unwrap_or("");
            let name = &headers[col];
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                return Err(invalid(format!(
                    "missing value at row {row}, column '{name}'"
                )));
            }
            let v: f64 = raw.parse().map_err(|_| {
                invalid(format!(
                    "non-numeric value '{raw}' at row {row}, column '{name}'"
                ))
            })?;
            if !v.is_finite() {
                return Err(invalid(format!(
                    "non-finite value '{raw}' at row {row}, column '{name}'"
                )));
            }
            Ok(v)
        };
        let label = record.get(0).unwrap_or("").to_string();
        if label.is_empty() {
            return Err(invalid(format!("missing time label at row {row}")));
        }
        y.push(cell(response_col)?);
        x.push(
            predictor_cols
                .iter()
                .map(|&c| cell(c))
                .collect::<CliResult<Vec<f64>>>()?,
        );
        time.push(label);
    }
    check_time_index(&time)?;
    if schema.lag_predictors {
        if y.len() < 2 {
            return Err(invalid("lagging predictors needs at least two rows"));
        }
        time.remove(0);
        y.remove(0);
        x.pop();
    }
    Dataset::new(time, y, x, predictor_names).map_err(invalid)
}

/// Time labels must be unique and strictly increasing, compared numerically
/// when every label is a number and lexicographically otherwise.
fn check_time_index(time: &[String]) -> CliResult<()> {
    let numeric: Option<Vec<f64>> = time.iter().map(|t| t.parse::<f64>().ok()).collect();
    let mut seen = HashSet::with_capacity(time.len());
    seen.insert(time.first().map(String::as_str).unwrap_or(""));
    for i in 1..time.len() {
        if !seen.insert(time[i].as_str()) {
            return Err(invalid(format!(
                "duplicate timestamp '{}' at row {}",
                time[i],
                i + 1
            )));
        }
        let increasing = match &numeric {
            Some(v) => v[i] > v[i - 1],
            None => time[i] > time[i - 1],
        };
        if !increasing {
            return Err(invalid(format!(
                "time index not increasing at row {}: '{}' follows '{}'",
                i + 1,
                time[i],
                time[i - 1]
            )));
        }
    }
    Ok(())
}

/// Shortest round-trip decimal form of `v`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        let mut buf = ryu::Buffer::new();
        let s = buf.format_finite(v);
        s.strip_suffix(".0").unwrap_or(s).to_string()
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A CSV file with a provenance comment line.
pub struct CsvOut {
    path: std::path::PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, provenance: &str, header: &[&str]) -> CliResult<Self> {
        let file = File::create(path).map_err(io_error(path))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "# config: {provenance}").map_err(io_error(path))?;
        let mut writer = csv::Writer::from_writer(buf);
        writer
            .write_record(header)
            .map_err(|e| csv_error(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(|e| csv_error(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.writer.flush().map_err(io_error(&self.path))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => CliError::Runtime(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_error(path))
}

/// Writes a dataset in the schema [`load_csv`] reads, with response `y`.
pub fn write_dataset(path: &Path, data: &Dataset, provenance: &str) -> CliResult<()> {
    let mut header = vec!["time", "y"];
    header.extend(data.predictor_names.iter().map(String::as_str));
    let mut out = CsvOut::create(path, provenance, &header)?;
    for t in 0..data.len() {
        let mut row = vec![data.time_index[t].clone(), fmt_f64(data.y[t])];
        row.extend(data.x[t].iter().map(|v| fmt_f64(*v)));
        out.row(row)?;
    }
    out.finish()
}
