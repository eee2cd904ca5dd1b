use std::path::{Path, PathBuf};

use arbands::TimeSeries;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("the input series is empty")]
    EmptySeries,
    #[error(transparent)]
    Lib(#[from] arbands::Error),
}

impl CliError {
    /// 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "usage",
            3 => "numerical",
            _ => "data",
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Parses a single-column series: one number per line, an optional `value`
/// header on the first line, blank lines ignored.
pub fn parse_series(text: &str) -> Result<TimeSeries, CliError> {
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (idx == 0 && line.eq_ignore_ascii_case("value")) {
            continue;
        }
        let parse_err = |message: String| CliError::Parse {
            line: idx + 1,
            message,
        };
        let v: f64 = line
            .parse()
            .map_err(|_| parse_err(format!("not a number: {line:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(format!("non-finite value {line:?}")));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(CliError::EmptySeries);
    }
    Ok(TimeSeries::new(values)?)
}

pub fn read_series_csv(path: &Path, center: bool) -> Result<TimeSeries, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let s = parse_series(&text)?;
    Ok(if center { s.centered() } else { s })
}

/// The series as written by `simulate`: a `value` header, then one value per
/// line in shortest round-trip notation.
pub fn format_series(series: &TimeSeries) -> String {
    let mut out = String::with_capacity(series.len() * 22 + 6);
    out.push_str("value\n");
    for v in series.values() {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}
