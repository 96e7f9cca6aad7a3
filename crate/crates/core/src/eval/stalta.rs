use serde::{Deserialize, Serialize};

use super::{accuracy_at_tolerance, rmse, PickResult};
use crate::error::{Error, Result};
use crate::survey::{fb_to_mask, Survey};

/// Energy STA/LTA trigger settings, windows in samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaLta {
    pub sta: usize,
    pub lta: usize,
    pub threshold: f64,
}

impl Default for StaLta {
    fn default() -> Self {
        StaLta {
            sta: 3,
            lta: 16,
            threshold: 4.0,
        }
    }
}

impl StaLta {
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.sta == 0 || self.sta >= self.lta || self.lta >= len {
            return Err(Error::Param(format!(
                "STA/LTA needs 1 <= sta < lta < trace length, got sta {} lta {} length {len}",
                self.sta, self.lta
            )));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::Param(format!("STA/LTA threshold {} must be positive", self.threshold)));
        }
        Ok(())
    }
}

/// First index where the energy ratio reaches `threshold`, or the trace
/// length if it never does. The STA window ends at the current sample and
/// the LTA window covers the `lta` samples just before it, both shrinking to
/// the available history near the start. A silent LTA window followed by
/// any energy counts as a trigger.
pub fn sta_lta_pick(samples: &[f32], p: &StaLta) -> Result<usize> {
    p.validate(samples.len())?;
    let mut prefix = Vec::with_capacity(samples.len() + 1);
    prefix.push(0.0f64);
    for &s in samples {
        let e = f64::from(s) * f64::from(s);
        prefix.push(prefix.last().unwrap() + e);
    }
    // mean energy over samples [start, end)
    let mean = |start: usize, end: usize| (prefix[end] - prefix[start]) / (end - start) as f64;
    for i in p.sta..samples.len() {
        let split = i + 1 - p.sta;
        let sta = mean(split, i + 1);
        let lta = mean(split.saturating_sub(p.lta), split);
        let hit = if lta > 0.0 { sta / lta >= p.threshold } else { sta > 0.0 };
        if hit {
            return Ok(i);
        }
    }
    Ok(samples.len())
}

/// Baseline picks over a preprocessed survey, shaped like model picks so
/// both go through the same metrics.
pub fn baseline_picks(survey: &Survey, p: &StaLta) -> Result<Vec<PickResult>> {
    let mut out: Vec<PickResult> = survey
        .traces()
        .iter()
        .map(|t| {
            let pick = sta_lta_pick(&t.samples, p)?;
            Ok(PickResult {
                trace_id: t.id,
                fb_pred: pick,
                probs: fb_to_mask(pick, t.len())?.to_float(),
                fb_true: t.fb_sample,
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by_key(|r| r.trace_id);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct StaLtaGrid {
    pub sta: Vec<usize>,
    pub lta: Vec<usize>,
    pub threshold: Vec<f64>,
}

impl Default for StaLtaGrid {
    fn default() -> Self {
        StaLtaGrid {
            sta: vec![2, 3, 4, 6, 8],
            lta: vec![8, 12, 16, 24, 32, 48],
            threshold: vec![1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0],
        }
    }
}

/// Best grid point on a labeled survey: highest accuracy at `tol`, then
/// lowest RMSE, then first in grid order.
pub fn tune_sta_lta(survey: &Survey, grid: &StaLtaGrid, tol: usize) -> Result<StaLta> {
    let len = survey
        .trace_len()
        .ok_or_else(|| Error::Data("cannot tune STA/LTA on traces of unequal length".into()))?;
    let mut best: Option<(StaLta, f64, f64)> = None;
    for &sta in &grid.sta {
        for &lta in &grid.lta {
            for &threshold in &grid.threshold {
                let p = StaLta { sta, lta, threshold };
                if p.validate(len).is_err() {
                    continue;
                }
                let picks = baseline_picks(survey, &p)?;
                let acc = accuracy_at_tolerance(&picks, tol)?;
                let err = rmse(&picks).unwrap_or(f64::INFINITY);
                let better = match best {
                    None => true,
                    Some((_, a, e)) => acc > a || (acc == a && err < e),
                };
                if better {
                    best = Some((p, acc, err));
                }
            }
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| Error::Param(format!("no STA/LTA grid point fits traces of length {len}")))
}
