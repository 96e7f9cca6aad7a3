//! Deterministic synthetic surveys with known first breaks.
//!
//! Receivers sit on a line at `y = 0`, shots on a parallel line at
//! `y = shot_line_y`. Every trace carries a Ricker wavelet cut at its leading
//! side-lobe trough, so energy starts abruptly at the direct-arrival sample.
//! Weaker reflections from the layer interfaces and optional white Gaussian
//! noise are added on top.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Survey, Trace};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Interval velocity in m/s.
    pub velocity: f64,
    /// Thickness in meters; ignored for the last (half-space) layer.
    pub thickness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthGeometry {
    pub n_shots: usize,
    pub n_receivers: usize,
    pub shot_spacing: f64,
    pub receiver_spacing: f64,
    pub shot_x0: f64,
    pub shot_line_y: f64,
    /// Uniform position perturbation in meters applied per shot and per
    /// receiver.
    pub jitter: f64,
    /// Stop after this many traces (shot-major order).
    pub max_traces: Option<usize>,
}

impl Default for SynthGeometry {
    fn default() -> Self {
        SynthGeometry {
            n_shots: 4,
            n_receivers: 16,
            shot_spacing: 100.0,
            receiver_spacing: 25.0,
            shot_x0: 0.0,
            shot_line_y: 50.0,
            jitter: 0.0,
            max_traces: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub layers: Vec<Layer>,
    pub geometry: SynthGeometry,
    pub noise_sigma: f64,
    pub dt: f64,
    pub n_samples: usize,
    /// Time of the direct arrival at zero offset, seconds.
    pub t0: f64,
    /// Ricker peak frequency in Hz.
    pub peak_freq: f64,
    /// Surface-consistent delays: each shot and each receiver draws a delay
    /// uniformly from `[0, statics_max)` seconds, added to the first break.
    pub statics_max: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            layers: vec![
                Layer {
                    velocity: 2000.0,
                    thickness: 60.0,
                },
                Layer {
                    velocity: 3200.0,
                    thickness: 0.0,
                },
            ],
            geometry: SynthGeometry::default(),
            noise_sigma: 0.0,
            dt: 0.002,
            n_samples: 256,
            t0: 0.0,
            peak_freq: 25.0,
            statics_max: 0.0,
        }
    }
}

impl SynthSpec {
    /// A default spec laid out to produce exactly `n_traces` traces.
    pub fn with_traces(n_traces: usize) -> Self {
        let mut spec = SynthSpec::default();
        let per_shot = spec.geometry.n_receivers.max(1);
        spec.geometry.n_shots = n_traces.div_ceil(per_shot).max(1);
        spec.geometry.max_traces = Some(n_traces);
        spec
    }

    /// Samples from the wavelet onset (leading trough) to its peak.
    pub fn wavelet_half_width(&self) -> usize {
        ((1.5f64).sqrt() / (PI * self.peak_freq * self.dt)).round().max(1.0) as usize
    }

    /// Samples the wavelet rings on after its peak.
    fn wavelet_tail(&self) -> usize {
        (1.0 / (self.peak_freq * self.dt)).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Generation("at least one layer is required".into()));
        }
        if let Some(l) = self.layers.iter().find(|l| !(l.velocity > 0.0)) {
            return Err(Error::Generation(format!(
                "layer velocity must be positive, got {}",
                l.velocity
            )));
        }
        if !(self.dt > 0.0) || self.n_samples == 0 || !(self.peak_freq > 0.0) {
            return Err(Error::Generation(
                "dt, n_samples and peak_freq must be positive".into(),
            ));
        }
        if self.noise_sigma < 0.0 || self.statics_max < 0.0 || self.geometry.jitter < 0.0 {
            return Err(Error::Generation(
                "noise_sigma, statics_max and jitter must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Ricker wavelet value at `tau` seconds from its peak.
pub(crate) fn ricker(tau: f64, freq: f64) -> f64 {
    let a = (PI * freq * tau).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

struct Reflector {
    depth: f64,
    v_rms: f64,
    coefficient: f64,
}

fn reflectors(layers: &[Layer]) -> Vec<Reflector> {
    let mut out = Vec::new();
    let mut depth = 0.0;
    let mut t_one_way = 0.0;
    let mut v2_t = 0.0;
    for pair in layers.windows(2) {
        let (upper, lower) = (pair[0], pair[1]);
        depth += upper.thickness;
        let dt = upper.thickness / upper.velocity;
        t_one_way += dt;
        v2_t += upper.velocity * upper.velocity * dt;
        out.push(Reflector {
            depth,
            v_rms: (v2_t / t_one_way).sqrt(),
            coefficient: (lower.velocity - upper.velocity) / (lower.velocity + upper.velocity),
        });
    }
    out
}

fn add_wavelet(samples: &mut [f32], onset: usize, span: (usize, usize), amp: f64, freq: f64, dt: f64) {
    let center = onset + span.0;
    for i in onset..=(center + span.1).min(samples.len().saturating_sub(1)) {
        let tau = (i as f64 - center as f64) * dt;
        samples[i] += (amp * ricker(tau, freq)) as f32;
    }
}

/// Generates a survey whose labels are the direct-arrival samples
/// `round((offset / v1 + t0 + statics) / dt)`.
///
/// Identical `(spec, seed)` pairs produce bit-identical surveys.
pub fn generate_synthetic_survey(spec: &SynthSpec, seed: u64) -> Result<Survey> {
    spec.validate()?;
    let g = &spec.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng| {
        if g.jitter > 0.0 {
            (rng.random_range(-g.jitter..g.jitter), rng.random_range(-g.jitter..g.jitter))
        } else {
            (0.0, 0.0)
        }
    };
    let shots: Vec<(f64, f64)> = (0..g.n_shots)
        .map(|i| {
            let (jx, jy) = jitter(&mut rng);
            (g.shot_x0 + i as f64 * g.shot_spacing + jx, g.shot_line_y + jy)
        })
        .collect();
    let receivers: Vec<(f64, f64)> = (0..g.n_receivers)
        .map(|j| {
            let (jx, jy) = jitter(&mut rng);
            (j as f64 * g.receiver_spacing + jx, jy)
        })
        .collect();
    let statics = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|_| {
                if spec.statics_max > 0.0 {
                    rng.random_range(0.0..spec.statics_max)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let shot_statics = statics(shots.len(), &mut rng);
    let rcv_statics = statics(receivers.len(), &mut rng);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));

    let v1 = spec.layers[0].velocity;
    let span = (spec.wavelet_half_width(), spec.wavelet_tail());
    let refl = reflectors(&spec.layers);
    let limit = g.max_traces.unwrap_or(usize::MAX);

    let mut traces = Vec::new();
    let mut offending = Vec::new();
    'outer: for (si, &src) in shots.iter().enumerate() {
        for (ri, &rcv) in receivers.iter().enumerate() {
            if traces.len() == limit {
                break 'outer;
            }
            let id = traces.len() as u64;
            let offset = ((rcv.0 - src.0).powi(2) + (rcv.1 - src.1).powi(2)).sqrt();
            let delay = shot_statics[si] + rcv_statics[ri];
            let t_fb = offset / v1 + spec.t0 + delay;
            let fb = (t_fb / spec.dt).round();
            if fb < 0.0 || fb >= spec.n_samples as f64 {
                offending.push(offset);
                continue;
            }
            let fb = fb as usize;
            let mut samples = vec![0.0f32; spec.n_samples];
            add_wavelet(&mut samples, fb, span, 1.0, spec.peak_freq, spec.dt);
            for r in &refl {
                let path = (offset * offset + 4.0 * r.depth * r.depth).sqrt();
                let t = path / r.v_rms + spec.t0 + delay;
                let onset = (t / spec.dt).round();
                // reflections never precede the direct wavelet's support
                if onset <= (fb + span.0 + span.1) as f64 || onset >= spec.n_samples as f64 {
                    continue;
                }
                let amp = r.coefficient * offset.max(1.0) / path;
                add_wavelet(&mut samples, onset as usize, span, amp, spec.peak_freq, spec.dt);
            }
            if let Some(dist) = &noise {
                for s in samples.iter_mut() {
                    *s += dist.sample(&mut rng) as f32;
                }
            }
            traces.push(Trace {
                id,
                src,
                rcv,
                samples,
                dt: spec.dt,
                fb_sample: Some(fb),
            });
        }
    }
    if !offending.is_empty() {
        let list: Vec<String> = offending.iter().map(|o| format!("{o:.1}")).collect();
        return Err(Error::Generation(format!(
            "first break falls outside {} samples for offsets [{}]",
            spec.n_samples,
            list.join(", ")
        )));
    }
    Survey::new(format!("synthetic-{seed}"), traces)
}
