//! CSV and JSON artifacts.
//!
//! Floats are written with `{:.16e}`, which round-trips every `f64` exactly,
//! so files produced from identical data are byte-identical.

use std::io::{self, BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::MsdCurve;
use crate::tracer::Trajectory;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn axis_label(i: usize) -> String {
    format!("x{}", i + 1)
}

pub fn trajectory_header(dim: usize) -> String {
    let mut cols = vec!["traj_id".to_string(), "t".to_string()];
    cols.extend((0..dim).map(axis_label));
    cols.join(",")
}

/// Long-format table `traj_id,t,x1,…,xd`.
pub fn write_trajectories<W: Write>(mut out: W, trajs: &[Trajectory]) -> io::Result<()> {
    let dim = trajs.first().map_or(0, Trajectory::dim);
    writeln!(out, "{}", trajectory_header(dim))?;
    for t in trajs {
        for (time, x) in t.times.iter().zip(&t.positions) {
            write!(out, "{},{time:.16e}", t.id)?;
            for v in x {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Reads a table written by [`write_trajectories`]. Rows of one trajectory
/// must be contiguous. The seed, ε and frozen flag are not part of the table
/// and come back as 0, NaN and false.
pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<Trajectory>, FormatError> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Ok(Vec::new()),
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "traj_id" || cols[1] != "t" {
        return Err(FormatError::Malformed {
            line: 1,
            message: format!("expected header traj_id,t,x1,..., found {header:?}"),
        });
    }
    let dim = cols.len() - 2;
    let mut out: Vec<Trajectory> = Vec::new();
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| FormatError::Malformed {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 2 {
            return Err(bad(format!("expected {} fields, found {}", dim + 2, fields.len())));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad trajectory id {:?}", fields[0])))?;
        let mut nums = Vec::with_capacity(dim + 1);
        for f in &fields[1..] {
            nums.push(f.parse::<f64>().map_err(|_| bad(format!("bad number {f:?}")))?);
        }
        match out.last_mut() {
            Some(t) if t.id == id => {
                t.times.push(nums[0]);
                t.positions.push(nums[1..].to_vec());
            }
            _ => {
                if out.iter().any(|t| t.id == id) {
                    return Err(bad(format!("rows of trajectory {id} are not contiguous")));
                }
                out.push(Trajectory {
                    id,
                    times: vec![nums[0]],
                    positions: vec![nums[1..].to_vec()],
                    eps: f64::NAN,
                    seed: 0,
                    frozen: false,
                });
            }
        }
    }
    Ok(out)
}

fn fmt_or_empty(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

/// `lag,msd11,…,msdDD,stderr,log_lag,log_msd`; undefined entries are empty.
pub fn write_msd_csv<W: Write>(mut out: W, curve: &MsdCurve) -> io::Result<()> {
    let d = curve.dim;
    let mut cols = vec!["lag".to_string()];
    for i in 0..d {
        for j in 0..d {
            cols.push(format!("msd{}{}", i + 1, j + 1));
        }
    }
    cols.extend(["stderr", "log_lag", "log_msd"].map(String::from));
    writeln!(out, "{}", cols.join(","))?;
    for i in 0..curve.len() {
        let mut row = vec![format!("{:.16e}", curve.lags[i])];
        row.extend(curve.tensor[i].iter().map(|&v| fmt_or_empty(v)));
        row.push(fmt_or_empty(curve.stderr[i]));
        let logs = curve.lags[i] > 0.0 && curve.msd[i] > 0.0;
        row.push(if logs { fmt_or_empty(curve.lags[i].ln()) } else { String::new() });
        row.push(if logs { fmt_or_empty(curve.msd[i].ln()) } else { String::new() });
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<(), FormatError> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Trajectory> {
        (0..2)
            .map(|id| Trajectory {
                id,
                times: vec![0.0, 0.1, 0.2],
                positions: vec![vec![0.0, 0.0], vec![0.1 * id as f64, -1e-300], vec![1.0 / 3.0, 2.5]],
                eps: f64::NAN,
                seed: 0,
                frozen: false,
            })
            .collect()
    }

    #[test]
    fn trajectories_round_trip_exactly() {
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("traj_id,t,x1,x2\n"));
        let back = read_trajectories(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(sample()) {
            assert_eq!(a.times, b.times);
            assert_eq!(a.positions, b.positions);
        }
    }

    #[test]
    fn malformed_input_reports_line() {
        let text = "traj_id,t,x1,x2\n0,0.0,0.0,0.0\n0,0.1,abc,0.0\n";
        match read_trajectories(text.as_bytes()) {
            Err(FormatError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "traj_id,t,x1,x2\n0,0.0,0.0\n";
        assert!(matches!(
            read_trajectories(text.as_bytes()),
            Err(FormatError::Malformed { line: 2, .. })
        ));
        assert!(read_trajectories("id,time\n".as_bytes()).is_err());
    }

    #[test]
    fn empty_input_has_no_trajectories() {
        assert!(read_trajectories("".as_bytes()).unwrap().is_empty());
        assert!(read_trajectories("traj_id,t,x1,x2\n".as_bytes()).unwrap().is_empty());
    }
}
