//! CSV readers for the three input files, CSV/JSON rendering for results,
//! and the error type that maps failures onto process exit codes.
//!
//! Input formats:
//!
//! - hierarchy: `child,parent` records, one per node; an empty parent
//!   field marks a root.
//! - actuals: wide panel with a `time` column, then one column per series.
//! - forecasts: long records `origin,horizon,node,value`.

use std::path::{Path, PathBuf};

use hfr_core::evaluate::{ForecastRecord, ReconcileOutput};
use hfr_core::hierarchy::Hierarchy;
use hfr_core::panel::PanelMatrix;
use nalgebra::DMatrix;
use thiserror::Error;

/// A command line failure with a process exit code attached.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hfr_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Exit code: 2 for bad arguments or inconsistent inputs, 3 for
    /// numerical failure inside an otherwise valid computation, 4 for
    /// unreadable or malformed files.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
            CliError::Io { .. } | CliError::Format { .. } => 4,
            CliError::Usage(_) => 2,
        }
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_error(path: &Path, err: csv::Error) -> CliError {
    let message = err.to_string();
    match err.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        _ => format_err(path, message),
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn expect_headers(
    path: &Path,
    reader: &mut csv::Reader<std::fs::File>,
    want: &[&str],
) -> Result<(), CliError> {
    let got: Vec<&str> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .collect();
    if got != want {
        return Err(format_err(
            path,
            format!(
                "expected header `{}`, found `{}`",
                want.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

fn parse_float(path: &Path, raw: &str, record: usize, column: &str) -> Result<f64, CliError> {
    let value: f64 = raw.parse().map_err(|_| {
        format_err(
            path,
            format!("record {record}: {column} {raw:?} is not a number"),
        )
    })?;
    if !value.is_finite() {
        return Err(format_err(
            path,
            format!("record {record}: {column} {raw:?} is not finite"),
        ));
    }
    Ok(value)
}

/// Reads hierarchy edges from a `child,parent` CSV.
pub fn read_hierarchy(path: &Path) -> Result<Hierarchy, CliError> {
    let mut reader = open_reader(path)?;
    expect_headers(path, &mut reader, &["child", "parent"])?;
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let child = record.get(0).unwrap_or("").to_string();
        let parent = match record.get(1) {
            None | Some("") => None,
            Some(name) => Some(name.to_string()),
        };
        edges.push((child, parent));
    }
    Ok(Hierarchy::from_edges(&edges)?)
}

/// Reads a wide panel of actuals, sorting rows by time label (numeric
/// order when every label parses as an integer).
pub fn read_actuals(path: &Path) -> Result<PanelMatrix, CliError> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut names = headers.iter();
    if names.next() != Some("time") {
        return Err(format_err(path, "first column must be `time`"));
    }
    let columns: Vec<String> = names.map(str::to_string).collect();
    if columns.is_empty() {
        return Err(format_err(path, "no series columns after `time`"));
    }

    let mut times = Vec::new();
    let mut data = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != columns.len() + 1 {
            return Err(format_err(
                path,
                format!(
                    "record {}: expected {} fields, found {}",
                    idx + 1,
                    columns.len() + 1,
                    record.len()
                ),
            ));
        }
        times.push(record[0].to_string());
        for (col, name) in columns.iter().enumerate() {
            data.push(parse_float(path, &record[col + 1], idx + 1, name)?);
        }
    }
    if times.is_empty() {
        return Err(format_err(path, "no data rows"));
    }

    let values = DMatrix::from_row_slice(times.len(), columns.len(), &data);
    Ok(PanelMatrix::sorted(values, columns, times)?)
}

/// Reads long-format base forecasts into records for the forecast cube.
pub fn read_forecasts(path: &Path) -> Result<Vec<ForecastRecord>, CliError> {
    let mut reader = open_reader(path)?;
    expect_headers(path, &mut reader, &["origin", "horizon", "node", "value"])?;
    let mut records = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 4 {
            return Err(format_err(
                path,
                format!("record {}: expected 4 fields, found {}", idx + 1, record.len()),
            ));
        }
        let horizon: usize = record[1].parse().map_err(|_| {
            format_err(
                path,
                format!(
                    "record {}: horizon {:?} is not a positive integer",
                    idx + 1,
                    &record[1]
                ),
            )
        })?;
        records.push(ForecastRecord {
            origin: record[0].to_string(),
            horizon,
            node: record[2].to_string(),
            value: parse_float(path, &record[3], idx + 1, "value")?,
        });
    }
    Ok(records)
}

/// Renders reconciled forecasts as `origin,horizon,node,value` CSV in
/// horizon-major order, nodes in the hierarchy's canonical order.
pub fn reconciled_csv(output: &ReconcileOutput) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["origin", "horizon", "node", "value"])
        .expect("in-memory write");
    for (h_idx, horizon) in output.horizons.iter().enumerate() {
        for (n_idx, node) in output.nodes.iter().enumerate() {
            writer
                .write_record([
                    output.origin.as_str(),
                    &horizon.to_string(),
                    node,
                    &output.values[h_idx][n_idx].to_string(),
                ])
                .expect("in-memory write");
        }
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    String::from_utf8(bytes).expect("csv output is utf-8")
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut body = serde_json::to_string_pretty(value).expect("result types serialize");
    body.push('\n');
    body
}

/// Writes `body` to the given file, or to stdout when no path is given.
pub fn emit(out: Option<&Path>, body: &str) -> Result<(), CliError> {
    use std::io::Write;
    match out {
        Some(path) => std::fs::write(path, body).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        }),
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().expect("temp file");
        file.write_all(content.as_bytes()).expect("temp write");
        file
    }

    #[test]
    fn hierarchy_reader_accepts_empty_parent_as_root() {
        let file = write_temp("child,parent\nTotal,\nA,Total\nB,Total\n");
        let h = read_hierarchy(file.path()).unwrap();
        assert_eq!(h.nodes(), &["Total", "A", "B"]);
        assert_eq!(h.n(), 2);
    }

    #[test]
    fn hierarchy_reader_rejects_wrong_header() {
        let file = write_temp("node,up\nTotal,\n");
        let err = read_hierarchy(file.path()).unwrap_err();
        assert!(matches!(err, CliError::Format { .. }));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn actuals_reader_sorts_numeric_time_labels() {
        let file = write_temp(
            "time,Total,A,B\n10,3,1,2\n2,30,10,20\n1,12,4,8\n",
        );
        let panel = read_actuals(file.path()).unwrap();
        assert_eq!(panel.times(), &["1", "2", "10"]);
        assert_eq!(panel.values()[(0, 0)], 12.0);
        assert_eq!(panel.values()[(2, 2)], 2.0);
    }

    #[test]
    fn actuals_reader_names_the_bad_field() {
        let file = write_temp("time,Total\n1,oops\n");
        let err = read_actuals(file.path()).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("record 1"), "{message}");
        assert!(message.contains("Total"), "{message}");
        assert_eq!(err.exit_code(), 4);

        let nan = write_temp("time,Total\n1,NaN\n");
        assert_eq!(read_actuals(nan.path()).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn forecast_reader_round_trips_records() {
        let file = write_temp(
            "origin,horizon,node,value\n5,1,Total,3.25\n5,2,Total,-1.5\n",
        );
        let records = read_forecasts(file.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].origin, "5");
        assert_eq!(records[1].horizon, 2);
        assert_eq!(records[1].value, -1.5);
    }

    #[test]
    fn missing_file_maps_to_io_exit_code() {
        let err = read_forecasts(Path::new("/nonexistent/forecasts.csv")).unwrap_err();
        assert!(matches!(err, CliError::Io { .. }));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn reconciled_csv_is_horizon_major_and_round_trips_floats() {
        let output = ReconcileOutput {
            origin: "12".into(),
            method: "ols".into(),
            horizons: vec![1, 2],
            nodes: vec!["Total".into(), "A".into()],
            values: vec![vec![0.1 + 0.2, 2.0], vec![3.0, 4.0]],
            selected_penalties: None,
            active_groups: None,
        };
        let text = reconciled_csv(&output);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "origin,horizon,node,value");
        assert_eq!(lines[1], "12,1,Total,0.30000000000000004");
        assert_eq!(lines[4], "12,2,A,4");
        let parsed: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(parsed, 0.1 + 0.2);
    }

    #[test]
    fn core_error_exit_codes_split_validation_from_numerics() {
        let validation = CliError::Core(hfr_core::Error::EmptyInput("x".into()));
        assert_eq!(validation.exit_code(), 2);
        let numerical = CliError::Core(hfr_core::Error::SingularSystem("x".into()));
        assert_eq!(numerical.exit_code(), 3);
        assert_eq!(CliError::Usage("bad flag".into()).exit_code(), 2);
    }
}
