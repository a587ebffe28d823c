//! Plain-text artifacts: point clouds as CSV and trajectory tapes as NDJSON.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! an exported file gives back the exact bits.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sample::TrajectoryTape;

/// One row per point with header `{prefix}1,…,{prefix}d`.
pub fn cloud_to_csv(points: &[Vec<f64>], prefix: &str) -> String {
    let d = points.first().map_or(0, Vec::len);
    let mut out = (1..=d).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn cloud_from_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty CSV".into()))?;
    let d = header.split(',').filter(|h| !h.is_empty()).count();
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let row = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("CSV row {}: {e}", i + 2)))?;
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            Ok(row)
        })
        .collect()
}

pub fn tapes_to_ndjson(tapes: &[TrajectoryTape]) -> Result<String> {
    let mut out = String::new();
    for t in tapes {
        writeln!(out, "{}", serde_json::to_string(t)?).expect("writing to a String");
    }
    Ok(out)
}

pub fn tapes_from_ndjson(text: &str) -> Result<Vec<TrajectoryTape>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let pts = vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 2.5e17]];
        let text = cloud_to_csv(&pts, "x");
        assert!(text.starts_with("x1,x2\n"));
        let back = cloud_from_csv(&text).unwrap();
        for (a, b) in pts.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(cloud_from_csv("x1,x2\n1,2\n3\n").is_err());
        assert!(cloud_from_csv("x1\nabc\n").is_err());
    }
}
