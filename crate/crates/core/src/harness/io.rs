//! Trajectory CSV, sweep CSV and JSON report files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::ensemble::{PointRow, SweepRow};
use crate::generator::SmoothFunction;
use crate::sde::Trajectory;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

/// 17 significant digits: enough for an exact `f64` round trip.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_header(n: usize, p: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..p).map(|i| format!("u_{i}")));
    header.push("h".into());
    header.push("J".into());
    header
}

/// One row per recorded state; the control and effort columns hold the
/// control applied from that state on, and are empty on the final row.
pub fn write_trajectory_csv(
    traj: &Trajectory,
    h: &SmoothFunction,
    control_dim: usize,
    path: &Path,
) -> Result<(), IoError> {
    let n = traj.states.first().map_or(0, |s| s.values.len());
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(trajectory_header(n, control_dim)).map_err(csv_err(path))?;
    for (k, state) in traj.states.iter().enumerate() {
        let mut record = Vec::with_capacity(n + control_dim + 3);
        record.push(format_float(state.time));
        record.extend(state.values.iter().map(|v| format_float(*v)));
        match traj.controls.get(k) {
            Some(u) => {
                record.extend(u.iter().map(|v| format_float(*v)));
                record.push(format_float(h.value(&state.values)));
                record.push(format_float(u.norm_squared()));
            }
            None => {
                record.extend(std::iter::repeat_n(String::new(), control_dim));
                record.push(format_float(h.value(&state.values)));
                record.push(String::new());
            }
        }
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Parsed trajectory CSV: header plus rows, `None` for empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

pub fn read_numeric_csv(path: &Path) -> Result<CsvTable, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err(path))?;
        let row = record
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|e| IoError::Parse {
                        path: path.to_path_buf(),
                        reason: format!("'{cell}': {e}"),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(CsvTable { header, rows })
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["sigma", "family", "p", "lo", "hi"]).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            format_float(r.sigma),
            r.family.as_str().to_string(),
            format_float(r.p),
            format_float(r.lo),
            format_float(r.hi),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_point_csv(rows: &[PointRow], path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let dim = rows.first().map_or(0, |r| r.x0.len());
    let mut header = vec!["point".to_string()];
    header.extend((0..dim).map(|i| format!("x0_{i}")));
    header.extend(["family", "p", "lo", "hi"].map(String::from));
    w.write_record(&header).map_err(csv_err(path))?;
    for r in rows {
        let mut record = vec![r.point.to_string()];
        record.extend(r.x0.iter().map(|v| format_float(*v)));
        record.push(r.family.as_str().to_string());
        record.extend([r.p, r.lo, r.hi].map(format_float));
        w.write_record(&record).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Pretty JSON with a trailing newline. Field order follows the struct
/// definition, so identical values give identical bytes.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let bytes = to_json_bytes(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{State, Vector};

    #[test]
    fn trajectory_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let traj = Trajectory {
            states: (0..4)
                .map(|k| State::new(Vector::from_vec(vec![0.1 * k as f64, 1.0 / 3.0]), 0.5 * k as f64))
                .collect(),
            controls: (0..3).map(|k| Vector::from_element(1, -1.0 / (k as f64 + 7.0))).collect(),
            dt: 0.5,
            exit_time: None,
            safe: true,
        };
        let h = SmoothFunction::from_value_fd("h", |x| 1.0 - x[0]);
        write_trajectory_csv(&traj, &h, 1, &path).unwrap();
        let table = read_numeric_csv(&path).unwrap();
        assert_eq!(table.header, vec!["t", "x_0", "x_1", "u_0", "h", "J"]);
        assert_eq!(table.rows.len(), 4);
        for (k, row) in table.rows.iter().enumerate() {
            assert_eq!(row.len(), 2 + 1 + 3);
            assert_eq!(row[1], Some(traj.states[k].values[0]));
            assert_eq!(row[2], Some(1.0 / 3.0));
            if k < 3 {
                let u = traj.controls[k][0];
                assert_eq!(row[3], Some(u));
                assert_eq!(row[5], Some(u * u));
            } else {
                assert_eq!((row[3], row[5]), (None, None));
            }
        }
    }

    #[test]
    fn float_format_is_exact() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 5e-324] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn missing_directory_reports_path() {
        let err = write_sweep_csv(&[], Path::new("/nonexistent/dir/s.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/s.csv"));
    }
}
