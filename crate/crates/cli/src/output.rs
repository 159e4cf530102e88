//! Trace CSV and JSON files. Numbers are written with 17 significant digits
//! so that reading them back reproduces the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use ionhop::experiment::{OccupancyTrace, TraceMetadata};
use ionhop::units::us;
use serde::Serialize;

use crate::failure::Failure;

pub fn number(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_csv(times_us: &[f64], trace: &OccupancyTrace) -> String {
    let mut out = String::from("time_us");
    for j in 0..trace.n_sites() {
        write!(out, ",ion{}_Pe", j + 1).unwrap();
    }
    out.push('\n');
    for (t, row) in times_us.iter().zip(&trace.p_e) {
        out.push_str(&number(*t));
        for p in row {
            out.push(',');
            out.push_str(&number(*p));
        }
        out.push('\n');
    }
    out
}

/// Reads a trace written by [`trace_csv`], checking it has `n_sites` columns
/// of probabilities.
pub fn read_trace_csv(path: &Path, n_sites: usize) -> Result<OccupancyTrace, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let schema = |msg: String| Failure::config(format!("{}: {msg}", path.display()));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| schema("empty file".into()))?.split(',').map(str::trim).collect();
    let expected: Vec<String> =
        std::iter::once("time_us".to_string()).chain((1..=n_sites).map(|j| format!("ion{j}_Pe"))).collect();
    if header != expected {
        return Err(schema(format!(
            "header has {} data columns ({}), expected {n_sites} (time_us,ion1_Pe,...)",
            header.len().saturating_sub(1),
            header.join(",")
        )));
    }
    let mut times = Vec::new();
    let mut p_e = Vec::new();
    for (i, line) in lines.enumerate() {
        let values: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| schema(format!("row {}: {e}", i + 1)))?;
        if values.len() != n_sites + 1 {
            return Err(schema(format!("row {} has {} columns, expected {}", i + 1, values.len(), n_sites + 1)));
        }
        times.push(us(values[0]));
        p_e.push(values[1..].to_vec());
    }
    let trace = OccupancyTrace {
        times,
        p_e,
        metadata: TraceMetadata {
            sequence: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            n_sites,
            n_max: 0,
            max_leakage: 0.0,
            leakage_warning: None,
        },
    };
    trace.validate().map_err(|e| schema(e.to_string()))?;
    Ok(trace)
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::io(path, e))
}
