//! Trajectory tables and their JSON sidecar reports.
//!
//! A table has one row per stage with 18 comma-separated columns. Numbers
//! carry 9 significant digits; input columns are empty on the final row.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::MetricReport;
use crate::dynamics::{Grid, Input, State, DEFAULT_DT, INPUT_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::planner::Trajectory;
use crate::qp::{KktResiduals, SolveReport, SolveStatus};

pub const COLUMNS: [&str; 18] = [
    "index",
    "t",
    "x",
    "y",
    "z",
    "yaw_q",
    "yaw_g",
    "pitch_g",
    "vx",
    "vy",
    "vz",
    "yaw_rate_q",
    "fx",
    "fy",
    "fz",
    "torque_z",
    "rate_yaw_g",
    "rate_pitch_g",
];

const SIGNIFICANT_DIGITS: usize = 9;

/// Shortest of fixed or scientific notation with 9 significant digits,
/// trailing zeros removed.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn table_rows(traj: &Trajectory) -> Vec<Vec<String>> {
    traj.states
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut row = vec![i.to_string(), format_number(traj.grid.time(i))];
            row.extend(x.iter().map(|&v| format_number(v)));
            match traj.inputs.get(i) {
                Some(u) => row.extend(u.iter().map(|&v| format_number(v))),
                None => row.extend(std::iter::repeat_n(String::new(), INPUT_DIM)),
            }
            row
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parameter(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_trajectory_to<W: Write>(traj: &Trajectory, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for row in table_rows(traj) {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectory_to(traj, file).map_err(|e| csv_error(path, e))
}

fn table_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column: 0,
        message: format!("{}: {}", path.display(), message.into()),
    }
}

/// Reads a table written by [`write_trajectory`]. The step is recovered
/// from the time column; a single-row table gets the default step.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(table_error(path, 1, "unexpected header row"));
    }

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut inputs: Vec<Option<Input>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != COLUMNS.len() {
            return Err(table_error(path, line, format!("expected {} columns, found {}", COLUMNS.len(), record.len())));
        }
        let num = |c: usize| -> Result<f64> {
            record[c]
                .trim()
                .parse::<f64>()
                .map_err(|_| table_error(path, line, format!("column {} is not a number: {:?}", COLUMNS[c], &record[c])))
        };
        times.push(num(1)?);
        let mut x = State::zeros();
        for k in 0..STATE_DIM {
            x[k] = num(2 + k)?;
        }
        states.push(x);
        let base = 2 + STATE_DIM;
        if record.iter().skip(base).all(|c| c.trim().is_empty()) {
            inputs.push(None);
        } else {
            let mut u = Input::zeros();
            for k in 0..INPUT_DIM {
                u[k] = num(base + k)?;
            }
            inputs.push(Some(u));
        }
    }
    if states.is_empty() {
        return Err(table_error(path, 2, "no data rows"));
    }
    let n = states.len() - 1;
    if inputs[n].is_some() {
        return Err(table_error(path, n + 2, "final row must leave inputs empty"));
    }
    let inputs: Vec<Input> = inputs[..n]
        .iter()
        .enumerate()
        .map(|(i, u)| u.ok_or_else(|| table_error(path, i + 2, "missing inputs")))
        .collect::<Result<_>>()?;
    let dt = if n == 0 { DEFAULT_DT } else { (times[n] - times[0]) / n as f64 };
    Ok(Trajectory {
        grid: Grid::new(dt, n)?,
        states,
        inputs,
    })
}

/// Solve summary written next to a trajectory table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt_residuals: KktResiduals,
    pub iterations: u32,
    /// Seconds.
    pub wall_time: f64,
    pub dynamics_residual: f64,
    pub bound_violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
}

impl RunReport {
    pub fn new(solve: &SolveReport, dynamics_residual: f64, bound_violation: f64, metrics: Option<MetricReport>) -> Self {
        Self {
            objective: solve.objective,
            status: solve.status,
            kkt_residuals: solve.kkt_residuals,
            iterations: solve.iterations,
            wall_time: solve.wall_time,
            dynamics_residual,
            bound_violation,
            metrics,
        }
    }
}

/// `plan.csv` -> `plan.report.json`.
pub fn sidecar_path(table: &Path) -> PathBuf {
    let stem = table.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    table.with_file_name(format!("{stem}.report.json"))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_discrete_model, propagate, QuadrotorParams};

    #[test]
    fn number_format() {
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(4.905), "4.905");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333");
        assert_eq!(format_number(-123456.789012), "-123456.789");
        assert_eq!(format_number(9.9999999999), "10");
        assert_eq!(format_number(1.5e-7), "1.5e-7");
        assert_eq!(format_number(-2.0e12), "-2e12");
        assert_eq!(format_number(0.1 + 0.2), "0.3");
    }

    fn hover(n: usize) -> Trajectory {
        let quad = QuadrotorParams::default();
        let model = build_discrete_model(&quad, &Default::default(), 0.1).unwrap();
        let h = quad.hover_input();
        let u = Input::from_column_slice(&[h[0], h[1], h[2], h[3], 0.0, 0.0]);
        let mut x0 = State::zeros();
        x0[2] = 3.0;
        let inputs = vec![u; n];
        Trajectory {
            grid: Grid::new(0.1, n).unwrap(),
            states: propagate(&model, &x0, &inputs),
            inputs,
        }
    }

    #[test]
    fn hover_table_schema() {
        let mut buf = Vec::new();
        write_trajectory_to(&hover(4), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], COLUMNS.join(","));
        assert_eq!(lines.len(), 6);
        for line in &lines[1..] {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 18);
            assert_eq!(&cols[2..5], &["0", "0", "3"]);
        }
        for line in &lines[1..5] {
            assert_eq!(line.split(',').nth(14), Some("4.905"));
        }
        assert!(lines[5].ends_with(",,,,,,"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hover.csv");
        let traj = hover(5);
        write_trajectory(&traj, &path).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.grid.n_stages, 5);
        assert!((back.grid.dt - 0.1).abs() < 1e-12);
        let model = build_discrete_model(&QuadrotorParams::default(), &Default::default(), 0.1).unwrap();
        assert!(back.dynamics_residual(&model) <= 1e-6);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("out/plan.csv")), PathBuf::from("out/plan.report.json"));
    }
}
