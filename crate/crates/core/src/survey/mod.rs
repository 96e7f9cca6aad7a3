//! Survey data model and trace preprocessing.
//!
//! A [`Survey`] is a flat list of [`Trace`]s. Before any graph or model work
//! the traces are linear-moveout corrected into a fixed analysis window
//! ([`lmo_correct`]) and amplitude normalized ([`normalize_trace`]). First
//! break labels travel with the traces and are converted to and from binary
//! segmentation masks with [`fb_to_mask`] / [`mask_to_fb`].

mod io;
mod synth;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use io::{load_survey, save_survey, SurveyFormat};
pub use synth::{generate_synthetic_survey, Layer, SynthGeometry, SynthSpec};

/// One seismic recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub id: u64,
    /// Source position (x, y) in meters.
    pub src: (f64, f64),
    /// Receiver position (x, y) in meters.
    pub rcv: (f64, f64),
    pub samples: Vec<f32>,
    /// Seconds per sample.
    pub dt: f64,
    /// Labeled first-break sample index.
    pub fb_sample: Option<usize>,
}

impl Trace {
    /// Source-receiver distance in meters.
    pub fn offset(&self) -> f64 {
        let dx = self.rcv.0 - self.src.0;
        let dy = self.rcv.1 - self.src.1;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Validation(format!("trace {} has no samples", self.id)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Validation(format!(
                "trace {} has non-positive dt {}",
                self.id, self.dt
            )));
        }
        if let Some(fb) = self.fb_sample {
            if fb >= self.samples.len() {
                return Err(Error::Validation(format!(
                    "trace {} has fb_sample {} but only {} samples",
                    self.id,
                    fb,
                    self.samples.len()
                )));
            }
        }
        Ok(())
    }
}

/// A validated collection of traces with unique ids.
#[derive(Clone, Debug)]
pub struct Survey {
    pub name: String,
    pub dt: f64,
    traces: Vec<Trace>,
    index: HashMap<u64, usize>,
}

impl Survey {
    /// Validates every trace and the id uniqueness invariant.
    pub fn new(name: impl Into<String>, traces: Vec<Trace>) -> Result<Self> {
        let mut index = HashMap::with_capacity(traces.len());
        let dt = traces.first().map(|t| t.dt).unwrap_or(0.0);
        for (i, trace) in traces.iter().enumerate() {
            trace.validate()?;
            if trace.dt != dt {
                return Err(Error::Validation(format!(
                    "trace {} has dt {} but the survey uses {}",
                    trace.id, trace.dt, dt
                )));
            }
            if index.insert(trace.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate trace id {}", trace.id)));
            }
        }
        Ok(Survey {
            name: name.into(),
            dt,
            traces,
            index,
        })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Trace> {
        self.index.get(&id).map(|&i| &self.traces[i])
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// The common trace length, if every trace has the same length.
    pub fn trace_len(&self) -> Option<usize> {
        let first = self.traces.first()?.len();
        self.traces.iter().all(|t| t.len() == first).then_some(first)
    }

    pub fn n_labeled(&self) -> usize {
        self.traces.iter().filter(|t| t.fb_sample.is_some()).count()
    }
}

/// A binary first-break mask: zeros before the first break, ones after.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    values: Vec<u8>,
}

impl Mask {
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn to_float<T: num_traits::Float>(&self) -> Vec<T> {
        self.values
            .iter()
            .map(|&v| if v == 0 { T::zero() } else { T::one() })
            .collect()
    }
}

/// Mask for a first break at `fb_sample` in a window of `len` samples.
/// `fb_sample == len` encodes a break after the window (all zeros).
pub fn fb_to_mask(fb_sample: usize, len: usize) -> Result<Mask> {
    if fb_sample > len {
        return Err(Error::Range(format!(
            "fb_sample {fb_sample} exceeds window length {len}"
        )));
    }
    let values = (0..len).map(|i| u8::from(i >= fb_sample)).collect();
    Ok(Mask { values })
}

/// First index whose probability reaches 0.5, or `probs.len()` when nothing
/// does (the no-pick sentinel).
pub fn mask_to_fb<T: num_traits::Float>(probs: &[T]) -> usize {
    let half = T::from(0.5).unwrap();
    probs.iter().position(|&p| p >= half).unwrap_or(probs.len())
}

/// Divides by the largest absolute amplitude. All-zero input is returned
/// unchanged.
pub fn normalize_trace(samples: &[f32]) -> Vec<f32> {
    let peak = samples.iter().fold(0.0f32, |m, &s| m.max(s.abs()));
    if peak == 0.0 {
        return samples.to_vec();
    }
    samples.iter().map(|&s| s / peak).collect()
}

/// Linear moveout window parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LmoParams {
    /// Moveout velocity in meters per second.
    pub velocity: f64,
    /// Bulk time shift in seconds added to the moveout time.
    pub t0: f64,
    pub window_len: usize,
}

impl LmoParams {
    pub fn new(velocity: f64, t0: f64, window_len: usize) -> Result<Self> {
        let p = LmoParams {
            velocity,
            t0,
            window_len,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.velocity > 0.0) || !self.velocity.is_finite() {
            return Err(Error::Param(format!(
                "LMO velocity must be positive, got {}",
                self.velocity
            )));
        }
        if !self.t0.is_finite() {
            return Err(Error::Param("LMO t0 must be finite".into()));
        }
        if self.window_len < 8 {
            return Err(Error::Param(format!(
                "LMO window_len must be at least 8, got {}",
                self.window_len
            )));
        }
        Ok(())
    }

    /// Window start for `trace` before clamping to the record.
    pub fn raw_shift(&self, trace: &Trace) -> i64 {
        ((self.t0 + trace.offset() / self.velocity) / trace.dt).round() as i64
    }
}

/// Result of windowing a single trace.
#[derive(Clone, Debug, PartialEq)]
pub struct LmoOutcome {
    pub trace: Trace,
    /// Sample index in the raw record of the first window sample.
    pub shift: usize,
    /// Whether samples past the end of the record were zero-filled.
    pub padded: bool,
}

/// Cuts `p.window_len` samples starting at the moveout time of the trace.
///
/// The start is clamped to `[0, len]`; samples past the record end are
/// zero-filled. Labels are shifted into window coordinates and dropped when
/// they fall outside the window.
pub fn lmo_correct(trace: &Trace, p: &LmoParams) -> LmoOutcome {
    let len = trace.samples.len();
    let shift = p.raw_shift(trace).clamp(0, len as i64) as usize;
    let end = shift + p.window_len;
    let mut samples = Vec::with_capacity(p.window_len);
    samples.extend_from_slice(&trace.samples[shift..end.min(len)]);
    let padded = end > len;
    samples.resize(p.window_len, 0.0);
    let fb_sample = trace
        .fb_sample
        .and_then(|fb| fb.checked_sub(shift))
        .filter(|&fb| fb < p.window_len);
    LmoOutcome {
        trace: Trace {
            samples,
            fb_sample,
            ..trace.clone()
        },
        shift,
        padded,
    }
}

/// A survey after moveout windowing and normalization.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub survey: Survey,
    /// Per-trace window start in raw samples, aligned with `survey.traces()`.
    pub shifts: Vec<usize>,
    pub n_padded: usize,
}

/// Applies [`lmo_correct`] then [`normalize_trace`] to every trace.
pub fn preprocess(survey: &Survey, p: &LmoParams) -> Result<Preprocessed> {
    p.validate()?;
    let mut shifts = Vec::with_capacity(survey.len());
    let mut n_padded = 0;
    let traces = survey
        .traces()
        .iter()
        .map(|t| {
            let mut out = lmo_correct(t, p);
            out.trace.samples = normalize_trace(&out.trace.samples);
            shifts.push(out.shift);
            n_padded += usize::from(out.padded);
            out.trace
        })
        .collect();
    if n_padded > 0 {
        log::warn!("{n_padded} traces were zero-padded past the record end");
    }
    Ok(Preprocessed {
        survey: Survey::new(survey.name.clone(), traces)?,
        shifts,
        n_padded,
    })
}
