//! Survey-wide inference, pick metrics and the STA/LTA baseline.
//!
//! The model and the baseline pick inside the preprocessed window. A pick
//! equal to the window length means no first break was found on that trace;
//! it counts as a miss for accuracy and is left out of the RMSE.
//! [`to_record_picks`] moves window picks back onto the raw record, which is
//! what pick files hold.

mod io;
mod stalta;

use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, DatasetMode, SurveyGraph};
use crate::model::Model;
use crate::survey::{fb_to_mask, Preprocessed, Survey};

pub use io::{
    picks_csv, read_picks_csv, read_probs_csv, write_picks_csv, write_plot_csv, write_probs_csv, write_report, PickRow,
};
pub use stalta::{baseline_picks, sta_lta_pick, tune_sta_lta, StaLta, StaLtaGrid};

/// Tolerance used when none is given.
pub const DEFAULT_TOLERANCE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PickResult {
    pub trace_id: u64,
    /// In `[0, L]`; `L` is the no-pick sentinel.
    pub fb_pred: usize,
    pub probs: Vec<f32>,
    pub fb_true: Option<usize>,
}

impl PickResult {
    pub fn window_len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_picked(&self) -> bool {
        self.fb_pred < self.window_len()
    }

    /// `fb_pred - fb_true` for a labeled, picked trace.
    pub fn residual(&self) -> Option<i64> {
        match self.fb_true {
            Some(t) if self.is_picked() => Some(self.fb_pred as i64 - t as i64),
            _ => None,
        }
    }
}

/// Fraction of labeled traces picked within `tol` samples of the label.
pub fn accuracy_at_tolerance(results: &[PickResult], tol: usize) -> Result<f64> {
    let labeled = results.iter().filter(|r| r.fb_true.is_some()).count();
    if labeled == 0 {
        return Err(Error::Eval("no labeled traces to score".into()));
    }
    let hits = results
        .iter()
        .filter_map(PickResult::residual)
        .filter(|r| r.unsigned_abs() <= tol as u64)
        .count();
    Ok(hits as f64 / labeled as f64)
}

/// Root mean square residual in samples over labeled, picked traces.
pub fn rmse(results: &[PickResult]) -> Result<f64> {
    let res: Vec<i64> = results.iter().filter_map(PickResult::residual).collect();
    if res.is_empty() {
        return Err(Error::Eval("no labeled trace has a pick".into()));
    }
    let ss: f64 = res.iter().map(|&r| (r * r) as f64).sum();
    Ok((ss / res.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Traces scored.
    pub n: usize,
    pub n_labeled: usize,
    /// Labeled traces that received a pick; the RMSE averages over these.
    pub n_picked: usize,
    pub tolerance: usize,
    pub accuracy: f64,
    /// Absent when no labeled trace was picked.
    pub rmse: Option<f64>,
    pub unit: String,
    #[serde(skip)]
    pub residuals: Vec<(u64, Option<i64>)>,
}

impl EvalReport {
    pub fn from_results(results: &[PickResult], tol: usize) -> Result<Self> {
        let accuracy = accuracy_at_tolerance(results, tol)?;
        let rmse = rmse(results).ok();
        if rmse.is_none() {
            log::warn!("no labeled trace was picked; RMSE undefined");
        }
        Ok(EvalReport {
            n: results.len(),
            n_labeled: results.iter().filter(|r| r.fb_true.is_some()).count(),
            n_picked: results.iter().filter(|r| r.residual().is_some()).count(),
            tolerance: tol,
            accuracy,
            rmse,
            unit: "samples".into(),
            residuals: results.iter().map(|r| (r.trace_id, r.residual())).collect(),
        })
    }
}

/// One pick per trace of `survey`, ordered by trace id.
pub fn pick_survey(survey: &Survey, graph: &SurveyGraph, model: &Model) -> Result<Vec<PickResult>> {
    let threads = std::thread::available_parallelism().map_or(1, NonZeroUsize::get);
    pick_survey_with(survey, graph, model, threads)
}

/// [`pick_survey`] on an explicit number of worker threads.
pub fn pick_survey_with(survey: &Survey, graph: &SurveyGraph, model: &Model, threads: usize) -> Result<Vec<PickResult>> {
    graph.check_survey(survey)?;
    if graph.k() != model.config.k() {
        return Err(Error::Data(format!(
            "graph has k = {} but the model was built for k = {}",
            graph.k(),
            model.config.k()
        )));
    }
    let ds = Dataset::new(survey, graph, DatasetMode::Infer)?;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| ds.centers()[i]);

    let work = |idx: &[usize]| -> Result<Vec<PickResult>> {
        idx.iter().map(|&i| model.predict_fb(&ds.sample(i)?)).collect()
    };
    let threads = threads.clamp(1, order.len().max(1));
    if threads == 1 {
        return work(&order);
    }
    let chunk = order.len().div_ceil(threads);
    let parts: Vec<Result<Vec<PickResult>>> = std::thread::scope(|s| {
        let handles: Vec<_> = order.chunks(chunk).map(|c| s.spawn(move || work(c))).collect();
        handles.into_iter().map(|h| h.join().expect("picker thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(order.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Re-expresses window picks in raw-record samples. Probabilities are
/// placed at the window start and zero elsewhere, so the pick still equals
/// `mask_to_fb(probs)`. Labels are taken from `raw`.
pub fn to_record_picks(results: &[PickResult], raw: &Survey, pre: &Preprocessed) -> Result<Vec<PickResult>> {
    results
        .iter()
        .map(|r| {
            let (Some(pos), Some(t)) = (pre.survey.position(r.trace_id), raw.get(r.trace_id)) else {
                return Err(Error::Data(format!("trace {} is not in the survey", r.trace_id)));
            };
            let shift = pre.shifts[pos];
            let len = t.len();
            let mut probs = vec![0.0f32; len];
            let end = (shift + r.probs.len()).min(len);
            probs[shift.min(len)..end].copy_from_slice(&r.probs[..end.saturating_sub(shift)]);
            let fb_pred = if r.is_picked() && shift + r.fb_pred < len { shift + r.fb_pred } else { len };
            Ok(PickResult {
                trace_id: r.trace_id,
                fb_pred,
                probs,
                fb_true: t.fb_sample,
            })
        })
        .collect()
}

/// Scores picks read from a file against the labels of `labels`. Every
/// pick must name a trace of the survey.
pub fn results_from_rows(rows: &[PickRow], labels: &Survey) -> Result<Vec<PickResult>> {
    rows.iter()
        .map(|row| {
            let t = labels
                .get(row.id)
                .ok_or_else(|| Error::Data(format!("pick for trace {} has no matching label trace", row.id)))?;
            let len = t.len();
            let fb_pred = match row.fb_pred {
                Some(p) if p >= len => {
                    return Err(Error::Range(format!("pick {p} on trace {} lies past its {len} samples", row.id)))
                }
                Some(p) => p,
                None => len,
            };
            Ok(PickResult {
                trace_id: row.id,
                fb_pred,
                probs: fb_to_mask(fb_pred, len)?.to_float(),
                fb_true: t.fb_sample,
            })
        })
        .collect()
}
