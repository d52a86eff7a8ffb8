//! Reference outputs dumped by the trainer, one row per validation sample:
//! `sample_id,mag_0..mag_{M-1},beta_0..beta_{M-1}`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectrum::SpectrumEstimate;

#[derive(Debug, Clone, PartialEq)]
pub struct ParityRow {
    pub sample_id: usize,
    pub magnitudes: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn parity_header(m: usize) -> String {
    let mut h = String::from("sample_id");
    for i in 0..m {
        write!(h, ",mag_{i}").unwrap();
    }
    for i in 0..m {
        write!(h, ",beta_{i}").unwrap();
    }
    h
}

pub fn render_parity(rows: &[ParityRow]) -> String {
    let m = rows.first().map_or(0, |r| r.magnitudes.len());
    let mut out = parity_header(m);
    out.push('\n');
    for r in rows {
        write!(out, "{}", r.sample_id).unwrap();
        for v in r.magnitudes.iter().chain(&r.beta) {
            write!(out, ",{v:e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_parity(text: &str) -> Result<Vec<ParityRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty parity dump".into()))?;
    let cols = header.split(',').count();
    if cols < 3 || (cols - 1) % 2 != 0 || !header.starts_with("sample_id") {
        return Err(Error::Parse(format!("bad parity header `{header}`")));
    }
    let m = (cols - 1) / 2;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols {
            return Err(Error::Parse(format!(
                "parity row {}: {} fields, expected {cols}",
                lineno + 1,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("parity row {}: bad number `{s}`", lineno + 1)))
        };
        rows.push(ParityRow {
            sample_id: fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad sample id `{}`", fields[0])))?,
            magnitudes: fields[1..=m].iter().map(|s| num(s)).collect::<Result<_>>()?,
            beta: fields[m + 1..].iter().map(|s| num(s)).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

pub fn read_parity(path: &Path) -> Result<Vec<ParityRow>> {
    parse_parity(&std::fs::read_to_string(path)?)
}

/// Largest absolute elementwise difference between a reference row and an
/// estimate, over magnitudes and gaps.
pub fn max_abs_diff(reference: &ParityRow, est: &SpectrumEstimate) -> Result<f64> {
    if reference.magnitudes.len() != est.magnitudes.len() || reference.beta.len() != est.beta.len() {
        return Err(Error::Dimension(format!(
            "reference has M = {}, estimate has M = {}",
            reference.magnitudes.len(),
            est.magnitudes.len()
        )));
    }
    Ok(reference
        .magnitudes
        .iter()
        .zip(&est.magnitudes)
        .chain(reference.beta.iter().zip(&est.beta))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = vec![
            ParityRow { sample_id: 0, magnitudes: vec![1.0, 0.25], beta: vec![0.0, -0.5] },
            ParityRow { sample_id: 7, magnitudes: vec![0.1, 1.0], beta: vec![0.3, 1e-9] },
        ];
        let text = render_parity(&rows);
        assert!(text.starts_with("sample_id,mag_0,mag_1,beta_0,beta_1\n"));
        assert_eq!(parse_parity(&text).unwrap(), rows);
        assert!(parse_parity("sample_id,mag_0\n").is_err());
        assert!(parse_parity("sample_id,mag_0,beta_0\n1,0.5\n").is_err());
    }

    #[test]
    fn diff() {
        let r = ParityRow { sample_id: 0, magnitudes: vec![1.0, 0.5], beta: vec![0.1, 0.0] };
        let e = SpectrumEstimate { magnitudes: vec![1.0, 0.5], beta: vec![0.1, 0.2], doas: vec![] };
        assert!((max_abs_diff(&r, &e).unwrap() - 0.2).abs() < 1e-15);
    }
}
