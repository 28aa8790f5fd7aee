//! Synthetic traces with known respiration rate.
//!
//! Each frame holds a 3-tap direct-path pulse whose position jitters by an
//! integer number of taps, plus reflections at fixed depths behind it whose
//! magnitude follows the breathing waveform. The whole profile moves with the
//! direct path, so alignment can undo the jitter. Every tap keeps a random
//! complex phase for the whole trace and receives complex Gaussian noise;
//! the result is rounded to integers like accumulator readings.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AccelSample, GroundTruth, RefSample, ReferenceKind, TraceRecord};
use crate::model::{CirFrame, SamplingGeometry};

/// Lowest and highest direct-path accumulator index seen on the device.
pub const OBSERVED_DIRECT_PATH_RANGE: (f64, f64) = (735.0, 746.0);
pub const MEAN_DIRECT_PATH_INDEX: f64 = 741.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BreathingWaveform {
    #[default]
    Sinusoid,
    /// Sinusoid clipped at 70% of its amplitude and rescaled to +-1.
    ClippedSinusoid,
}

impl BreathingWaveform {
    pub fn eval(&self, phase: f64) -> f64 {
        match self {
            BreathingWaveform::Sinusoid => phase.sin(),
            BreathingWaveform::ClippedSinusoid => phase.sin().clamp(-0.7, 0.7) / 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflection {
    /// Window tap index at zero jitter.
    pub tap: usize,
    pub base_magnitude: f64,
    /// Relative respiration modulation, in `(0, 1]`.
    pub depth: f64,
    /// Radians.
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionEvent {
    pub start: f64,
    pub end: f64,
    /// Peak magnitude perturbation, in the same units as tap magnitudes.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub id: String,
    pub activity: String,
    /// Seconds.
    pub duration: f64,
    pub rr_true: f64,
    pub breathing_waveform: BreathingWaveform,
    /// Mean direct-path position inside the extracted window.
    pub direct_path_tap_mean: f64,
    pub direct_path_jitter_std: f64,
    pub direct_path_magnitude: f64,
    pub reflections: Vec<Reflection>,
    /// RMS of the complex noise added to every tap.
    pub noise_std: f64,
    pub motion_events: Vec<MotionEvent>,
    /// bpm per minute.
    pub rate_drift: f64,
    /// Peak chest tilt seen by the accelerometer, degrees.
    pub accel_tilt_deg: f64,
    /// g, per axis.
    pub accel_noise_std: f64,
    pub reference_rate: f64,
}

impl Default for SimScenario {
    fn default() -> Self {
        let direct = 10_000.0;
        Self {
            id: "sim".into(),
            activity: "synthetic".into(),
            duration: 120.0,
            rr_true: 15.0,
            breathing_waveform: BreathingWaveform::Sinusoid,
            direct_path_tap_mean: MEAN_DIRECT_PATH_INDEX - 720.0,
            direct_path_jitter_std: 2.4,
            direct_path_magnitude: direct,
            reflections: vec![Reflection {
                tap: 40,
                base_magnitude: 0.05 * direct,
                depth: 0.3,
                phase: 0.0,
            }],
            noise_std: 105.0,
            motion_events: Vec::new(),
            rate_drift: 0.0,
            accel_tilt_deg: 2.0,
            accel_noise_std: 0.002,
            reference_rate: 50.0,
        }
    }
}

impl SimScenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigSyntax(e.to_string()))
    }

    pub fn nominal_direct_tap(&self) -> i64 {
        self.direct_path_tap_mean.round() as i64
    }

    pub fn validate(&self, g: &SamplingGeometry) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if !(self.duration > 0.0) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        if !(self.rr_true > 0.0) {
            return bad(format!("rr_true {} must be positive", self.rr_true));
        }
        if !(self.direct_path_jitter_std >= 0.0 && self.noise_std >= 0.0) {
            return bad("jitter and noise must be non-negative".into());
        }
        if !(self.reference_rate > 0.0) {
            return bad("reference_rate must be positive".into());
        }
        let center = self.nominal_direct_tap();
        if center < 1 || center + 1 >= g.window_taps as i64 {
            return bad(format!("direct path tap {center} outside window"));
        }
        for r in &self.reflections {
            if r.tap >= g.window_taps {
                return bad(format!("reflection tap {} outside window", r.tap));
            }
            if (r.tap as i64 - center).abs() <= 1 {
                return bad(format!(
                    "reflection tap {} collides with the direct path at {center}",
                    r.tap
                ));
            }
            if !(r.depth >= 0.0 && r.depth <= 1.0) {
                return bad(format!("modulation depth {} outside [0, 1]", r.depth));
            }
        }
        for e in &self.motion_events {
            if !(e.end > e.start) {
                return bad(format!("motion event [{}, {}] is empty", e.start, e.end));
            }
        }
        Ok(())
    }

    /// Breathing phase (radians, without per-reflection offset) at time `t`.
    pub fn breathing_phase(&self, t: f64) -> f64 {
        // integral of the linearly drifting rate
        2.0 * PI * (self.rr_true * t / 60.0 + self.rate_drift * t * t / 7200.0)
    }
}

/// Deterministic given `(scenario, geometry, seed)`.
pub fn simulate(s: &SimScenario, g: &SamplingGeometry, seed: u64) -> Result<TraceRecord> {
    s.validate(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = g.window_taps;
    let frames = (s.duration * g.slow_time_rate).round() as usize;
    let center_nominal = s.nominal_direct_tap();
    let (lo, hi) = (
        OBSERVED_DIRECT_PATH_RANGE.0 - g.extraction_offset as f64,
        OBSERVED_DIRECT_PATH_RANGE.1 - g.extraction_offset as f64,
    );

    let tap_phase: Vec<f64> = (0..taps).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
    let motion_gain: Vec<f64> = (0..taps).map(|_| rng.random::<f64>()).collect();
    let jitter = Normal::new(0.0, s.direct_path_jitter_std.max(f64::MIN_POSITIVE))
        .expect("finite std");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let noise_component = s.noise_std / 2f64.sqrt();
    let pulse = [(-1i64, 0.5), (0, 1.0), (1, 0.5)];

    let mut motion_state = 0.0;
    let mut cir = Vec::with_capacity(frames);
    let mut accel = Vec::with_capacity(frames);
    for n in 0..frames {
        let t = n as f64 / g.slow_time_rate;
        let phase = s.breathing_phase(t);

        let offset = if s.direct_path_jitter_std > 0.0 {
            jitter.sample(&mut rng)
        } else {
            0.0
        };
        let center = (s.direct_path_tap_mean + offset).clamp(lo, hi).round() as i64;
        let shift = center - center_nominal;

        // AR(1) motion process, unit variance
        motion_state = 0.98 * motion_state + (1.0 - 0.98f64 * 0.98).sqrt() * unit.sample(&mut rng);
        let motion: f64 = s
            .motion_events
            .iter()
            .filter(|e| t >= e.start && t < e.end)
            .map(|e| e.amplitude)
            .sum();

        let mut mags = vec![0.0; taps];
        for (dm, w) in pulse {
            let m = center + dm;
            if (0..taps as i64).contains(&m) {
                mags[m as usize] += s.direct_path_magnitude * w;
            }
        }
        for r in &s.reflections {
            let m = r.tap as i64 + shift;
            if (0..taps as i64).contains(&m) {
                let b = s.breathing_waveform.eval(phase + r.phase);
                mags[m as usize] += r.base_magnitude * (1.0 + r.depth * b);
            }
        }
        if motion > 0.0 {
            for (m, v) in mags.iter_mut().enumerate() {
                *v = (*v + motion * motion_state * motion_gain[m]).max(0.0);
            }
        }

        let frame_taps: Vec<Complex64> = mags
            .iter()
            .zip(&tap_phase)
            .map(|(&mag, &psi)| {
                let clean = Complex64::from_polar(mag, psi);
                let noise = Complex64::new(
                    noise_component * unit.sample(&mut rng),
                    noise_component * unit.sample(&mut rng),
                );
                let v = clean + noise;
                Complex64::new(v.re.round(), v.im.round())
            })
            .collect();
        cir.push(CirFrame {
            counter: n as u64,
            timestamp: t,
            taps: frame_taps,
        });

        // chest tilt about the x axis; motion shakes all axes
        let tilt = s.accel_tilt_deg.to_radians() * s.breathing_waveform.eval(phase);
        let shake = if motion > 0.0 { 0.1 * motion_state } else { 0.0 };
        let mut axis = || s.accel_noise_std * unit.sample(&mut rng) + shake;
        let (nx, ny, nz) = (axis(), axis(), axis());
        accel.push(AccelSample {
            t,
            ax: nx,
            ay: tilt.sin() + ny,
            az: tilt.cos() + nz,
        });
    }

    let ref_count = (s.duration * s.reference_rate).round() as usize;
    let reference = (0..ref_count)
        .map(|k| {
            let t = k as f64 / s.reference_rate;
            RefSample {
                t,
                value: s.breathing_waveform.eval(s.breathing_phase(t)),
            }
        })
        .collect();

    Ok(TraceRecord {
        id: s.id.clone(),
        cir,
        accel,
        reference,
        reference_kind: ReferenceKind::Spirometer,
        activity_label: s.activity.clone(),
        duration: s.duration,
        ground_truth: Some(GroundTruth {
            rr_bpm: s.rr_true,
            drift: s.rate_drift,
        }),
        meta: Default::default(),
    })
}
