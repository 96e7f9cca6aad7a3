use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EvalReport, PickResult};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::survey::Survey;

const PICKS_HEADER: &str = "id,fb_pred,fb_true,residual";

/// One row of a picks CSV. An empty `fb_pred` cell is a trace without a pick.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PickRow {
    pub id: u64,
    pub fb_pred: Option<usize>,
    pub fb_true: Option<usize>,
    pub residual: Option<i64>,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn picks_csv(results: &[PickResult]) -> String {
    let mut out = format!("{PICKS_HEADER}\n");
    for r in results {
        let pred = r.is_picked().then_some(r.fb_pred);
        writeln!(out, "{},{},{},{}", r.trace_id, opt(pred), opt(r.fb_true), opt(r.residual())).unwrap();
    }
    out
}

pub fn write_picks_csv(path: &Path, results: &[PickResult]) -> Result<()> {
    write_atomic(path, picks_csv(results).as_bytes())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {what} {s:?}"),
    })
}

fn parse_opt<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s, what, line).map(Some)
    }
}

pub fn read_picks_csv(path: &Path) -> Result<Vec<PickRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(PICKS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {PICKS_HEADER:?}"),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let line = i + 2;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 4 fields, found {}", f.len()),
                });
            }
            Ok(PickRow {
                id: parse(f[0], "id", line)?,
                fb_pred: parse_opt(f[1], "fb_pred", line)?,
                fb_true: parse_opt(f[2], "fb_true", line)?,
                residual: parse_opt(f[3], "residual", line)?,
            })
        })
        .collect()
}

/// Per-trace probabilities, `id,p0,...,p{L-1}`.
pub fn write_probs_csv(path: &Path, results: &[PickResult]) -> Result<()> {
    let len = results.first().map_or(0, PickResult::window_len);
    let mut out = String::from("id");
    for i in 0..len {
        write!(out, ",p{i}").unwrap();
    }
    out.push('\n');
    for r in results {
        write!(out, "{}", r.trace_id).unwrap();
        for p in &r.probs {
            write!(out, ",{p}").unwrap();
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_probs_csv(path: &Path) -> Result<Vec<(u64, Vec<f32>)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("id") {
        return Err(Error::Parse {
            line: 1,
            message: "probabilities header must start with id".into(),
        });
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(i, l)| {
            let line = i + 2;
            let mut f = l.split(',');
            let id = parse(f.next().unwrap_or_default(), "id", line)?;
            let probs = f.map(|v| parse(v, "probability", line)).collect::<Result<Vec<f32>>>()?;
            if probs.len() + 1 != width {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} probabilities, found {}", width - 1, probs.len()),
                });
            }
            Ok((id, probs))
        })
        .collect()
}

/// Report as a single JSON object.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Eval(e.to_string()))?;
    write_atomic(path, format!("{json}\n").as_bytes())
}

/// Probability sections grouped by shot: one row per trace, sorted by
/// source position then offset, for plotting outside this crate.
pub fn write_plot_csv(path: &Path, survey: &Survey, results: &[PickResult]) -> Result<()> {
    let mut rows: Vec<(&PickResult, (f64, f64), f64)> = results
        .iter()
        .map(|r| {
            let t = survey
                .get(r.trace_id)
                .ok_or_else(|| Error::Data(format!("trace {} is not in the survey", r.trace_id)))?;
            Ok((r, t.src, t.offset()))
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| {
        (a.1 .0.total_cmp(&b.1 .0))
            .then(a.1 .1.total_cmp(&b.1 .1))
            .then(a.2.total_cmp(&b.2))
            .then(a.0.trace_id.cmp(&b.0.trace_id))
    });
    let len = results.first().map_or(0, PickResult::window_len);
    let mut out = String::from("id,src_x,src_y,offset,fb_pred,fb_true");
    for i in 0..len {
        write!(out, ",p{i}").unwrap();
    }
    out.push('\n');
    for (r, (sx, sy), off) in rows {
        let pred = r.is_picked().then_some(r.fb_pred);
        write!(out, "{},{sx},{sy},{off},{},{}", r.trace_id, opt(pred), opt(r.fb_true)).unwrap();
        for p in &r.probs {
            write!(out, ",{p}").unwrap();
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let r = vec![
            PickResult {
                trace_id: 3,
                fb_pred: 5,
                probs: vec![0.0; 8],
                fb_true: Some(4),
            },
            PickResult {
                trace_id: 4,
                fb_pred: 8,
                probs: vec![0.0; 8],
                fb_true: None,
            },
        ];
        write_picks_csv(&path, &r).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "id,fb_pred,fb_true,residual\n3,5,4,1\n4,,,\n");
        let rows = read_picks_csv(&path).unwrap();
        assert_eq!(rows[0].residual, Some(1));
        assert_eq!((rows[1].fb_pred, rows[1].fb_true), (None, None));

        let probs = dir.path().join("q.csv");
        write_probs_csv(&probs, &r).unwrap();
        let back = read_probs_csv(&probs).unwrap();
        assert_eq!(back[1], (4, vec![0.0; 8]));
    }
}
