//! Accelerometer respiration baselines.
//!
//! Both are reconstructions from short method descriptions, not ports of the
//! original code. Unstated details are choices made here:
//!
//! * `rr_rahman`: each axis is mean-removed and band-passed with a 4th-order
//!   Butterworth (2nd-order high-pass at `f_low` cascaded with a 2nd-order
//!   low-pass at `f_high`); the axis with the most filtered energy wins
//!   (lowest axis index on ties) and its periodogram peak gives the rate.
//! * `rr_bates`: the tilt of each sample relative to the window's mean
//!   gravity direction is expressed as a signed angle about the dominant
//!   rotation axis; its time derivative (angular velocity) is the
//!   respiration proxy. Windows whose acceleration-magnitude standard
//!   deviation exceeds `motion_threshold` are suppressed.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AccelSample;
use crate::model::{BandConfig, RrEstimate};
use crate::spectral::{estimate_rr, periodogram};

pub const MIN_WINDOW_S: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// g
    pub motion_threshold: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            motion_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AccelWindow {
    pub samples: Vec<AccelSample>,
    pub rate: f64,
    /// Unit vector along the mean acceleration.
    pub gravity_mean: Vector3<f64>,
}

impl AccelWindow {
    pub fn new(samples: Vec<AccelSample>, rate: f64) -> Result<Self> {
        if samples.len() < 4 {
            return Err(Error::TooFewSamples {
                need: 4,
                got: samples.len(),
            });
        }
        let sum: Vector3<f64> = samples.iter().map(vector).sum();
        let gravity_mean = sum
            .try_normalize(0.0)
            .unwrap_or_else(|| Vector3::new(0.0, 0.0, 1.0));
        Ok(Self {
            samples,
            rate,
            gravity_mean,
        })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    fn check_length(&self) -> Result<()> {
        if self.duration() + 1e-9 < MIN_WINDOW_S {
            return Err(Error::WindowTooShort {
                have: self.duration(),
                need: MIN_WINDOW_S,
            });
        }
        Ok(())
    }

    fn axis(&self, i: usize) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| match i {
                0 => s.ax,
                1 => s.ay,
                _ => s.az,
            })
            .collect()
    }
}

fn vector(s: &AccelSample) -> Vector3<f64> {
    Vector3::new(s.ax, s.ay, s.az)
}

/// Direct-form-I biquad.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth(kind: FilterKind, cutoff: f64, rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / rate;
        let alpha = w0.sin() / 2f64.sqrt(); // Q = 1/sqrt(2)
        let cos = w0.cos();
        let a0 = 1.0 + alpha;
        let b = match kind {
            FilterKind::LowPass => [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
            FilterKind::HighPass => [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
        };
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2
                    - self.a[0] * y1
                    - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum FilterKind {
    LowPass,
    HighPass,
}

/// Mean removal followed by the 4th-order band-pass.
pub fn band_pass(x: &[f64], rate: f64, band: &BandConfig) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let hp = Biquad::butterworth(FilterKind::HighPass, band.f_low, rate);
    let lp = Biquad::butterworth(FilterKind::LowPass, band.f_high, rate);
    lp.run(&hp.run(&centered))
}

pub fn rr_rahman(win: &AccelWindow, band: &BandConfig) -> Result<RrEstimate> {
    win.check_length()?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..3 {
        let filtered = band_pass(&win.axis(i), win.rate, band);
        let energy: f64 = filtered.iter().map(|v| v * v).sum();
        if best.as_ref().is_none_or(|(e, _)| energy > *e) {
            best = Some((energy, filtered));
        }
    }
    let (_, series) = best.expect("three axes");
    estimate_rr(&periodogram(&series, win.rate)?, band)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatesOutcome {
    Estimate(RrEstimate),
    /// Motion detected; `motion_std` is the acceleration-magnitude std (g).
    Suppressed { motion_std: f64 },
}

impl BatesOutcome {
    pub fn estimate(&self) -> Option<&RrEstimate> {
        match self {
            BatesOutcome::Estimate(e) => Some(e),
            BatesOutcome::Suppressed { .. } => None,
        }
    }
}

/// Standard deviation of `|a|` over the window.
pub fn motion_level(win: &AccelWindow) -> f64 {
    let mags: Vec<f64> = win.samples.iter().map(|s| vector(s).norm()).collect();
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / mags.len() as f64).sqrt()
}

/// Signed tilt angle (radians) of each sample away from the mean gravity
/// direction, measured about the dominant rotation axis of the window.
pub fn tilt_angles(win: &AccelWindow) -> Vec<f64> {
    let g = win.gravity_mean;
    let rotations: Vec<Vector3<f64>> = win
        .samples
        .iter()
        .map(|s| {
            let a = vector(s);
            let a = a.try_normalize(0.0).unwrap_or(g);
            let axis = g.cross(&a);
            let sin = axis.norm();
            let angle = sin.atan2(g.dot(&a));
            if sin > 0.0 {
                axis * (angle / sin)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let mut scatter = Matrix3::zeros();
    for r in &rotations {
        scatter += r * r.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let principal = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    rotations.iter().map(|r| r.dot(&principal)).collect()
}

/// Central-difference derivative (one-sided at the ends).
fn derivative(x: &[f64], rate: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (x[b] - x[a]) * rate / (b - a) as f64
        })
        .collect()
}

pub fn rr_bates(win: &AccelWindow, band: &BandConfig, motion_threshold: f64) -> Result<BatesOutcome> {
    win.check_length()?;
    let motion_std = motion_level(win);
    if motion_std > motion_threshold {
        return Ok(BatesOutcome::Suppressed { motion_std });
    }
    let proxy = derivative(&tilt_angles(win), win.rate);
    Ok(BatesOutcome::Estimate(estimate_rr(
        &periodogram(&proxy, win.rate)?,
        band,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const RATE: f64 = 32.0;

    fn window(f: impl Fn(f64) -> (f64, f64, f64), seconds: f64) -> AccelWindow {
        let n = (seconds * RATE) as usize;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / RATE;
                let (ax, ay, az) = f(t);
                AccelSample { t, ax, ay, az }
            })
            .collect();
        AccelWindow::new(samples, RATE).unwrap()
    }

    fn tilt(freq: f64, deg: f64) -> impl Fn(f64) -> (f64, f64, f64) {
        move |t| {
            let a = deg.to_radians() * (2.0 * PI * freq * t).sin();
            (0.0, a.sin(), a.cos())
        }
    }

    #[test]
    fn rahman_finds_tilt_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 0.001).unwrap();
        let n: Vec<(f64, f64)> = (0..3840).map(|_| (noise.sample(&mut rng), noise.sample(&mut rng))).collect();
        let w = window(
            |t| {
                let i = (t * RATE).round() as usize;
                (n[i].0, 0.03 * (2.0 * PI * 0.25 * t).sin(), 1.0 + n[i].1)
            },
            120.0,
        );
        let est = rr_rahman(&w, &BandConfig::default()).unwrap();
        assert_eq!(est.rate_bpm, 15.0);
    }

    #[test]
    fn rahman_zero_input_follows_tie_rule() {
        let w = window(|_| (0.0, 0.0, 0.0), 60.0);
        let band = BandConfig::default();
        let a = rr_rahman(&w, &band).unwrap();
        let b = rr_rahman(&w, &band).unwrap();
        // every bin ties at zero power; the lowest in-band bin wins
        assert_eq!(a.peak_frequency, 0.1);
        assert_eq!(a.rate_bpm, b.rate_bpm);
        assert!(a.snr.is_infinite());
    }

    #[test]
    fn rahman_with_cadence_is_deterministic() {
        let f = |t: f64| {
            let breath = 0.02 * (2.0 * PI * 0.25 * t).sin();
            let step = 0.1 * (2.0 * PI * 1.7 * t).sin();
            (step, breath + step, 1.0 + step)
        };
        let band = BandConfig::default();
        let a = rr_rahman(&window(f, 60.0), &band).unwrap();
        let b = rr_rahman(&window(f, 60.0), &band).unwrap();
        assert_eq!(a.rate_bpm, b.rate_bpm);
        assert!(band.contains(a.peak_frequency));
    }

    #[test]
    fn short_window_rejected() {
        let w = window(tilt(0.25, 2.0), 20.0);
        assert!(matches!(rr_rahman(&w, &BandConfig::default()), Err(Error::WindowTooShort { .. })));
        assert!(rr_bates(&w, &BandConfig::default(), 0.05).is_err());
    }

    #[test]
    fn bates_stationary_tilt() {
        let w = window(tilt(0.2, 2.0), 120.0);
        match rr_bates(&w, &BandConfig::default(), 0.05).unwrap() {
            BatesOutcome::Estimate(e) => assert!((e.rate_bpm - 12.0).abs() < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bates_suppresses_shaking() {
        let shake = |t: f64| {
            let s = 1.0 + 0.3 * (2.0 * PI * 2.5 * t).sin();
            (0.0, 0.0, s)
        };
        let w = window(shake, 60.0);
        assert!(matches!(
            rr_bates(&w, &BandConfig::default(), 0.05).unwrap(),
            BatesOutcome::Suppressed { .. }
        ));
        // raising the threshold lets it through
        assert!(rr_bates(&w, &BandConfig::default(), 1.0).unwrap().estimate().is_some());
    }

    #[test]
    fn bates_is_frame_invariant() {
        let base = window(tilt(0.3, 3.0), 60.0);
        let rot = Rotation3::from_euler_angles(0.4, -1.1, 2.3);
        let rotated: Vec<AccelSample> = base
            .samples
            .iter()
            .map(|s| {
                let v = rot * vector(s);
                AccelSample { t: s.t, ax: v.x, ay: v.y, az: v.z }
            })
            .collect();
        let band = BandConfig::default();
        let a = rr_bates(&base, &band, 0.05).unwrap();
        let b = rr_bates(&AccelWindow::new(rotated, RATE).unwrap(), &band, 0.05).unwrap();
        assert_eq!(a.estimate().unwrap().rate_bpm, b.estimate().unwrap().rate_bpm);
    }

    #[test]
    fn axis_permutation_keeps_rates() {
        let f = tilt(0.25, 2.0);
        let band = BandConfig::default();
        let base = window(&f, 60.0);
        let perm = window(|t| { let (x, y, z) = f(t); (z, x, y) }, 60.0);
        assert_eq!(
            rr_rahman(&base, &band).unwrap().rate_bpm,
            rr_rahman(&perm, &band).unwrap().rate_bpm
        );
        assert_eq!(
            rr_bates(&base, &band, 0.05).unwrap().estimate().unwrap().rate_bpm,
            rr_bates(&perm, &band, 0.05).unwrap().estimate().unwrap().rate_bpm
        );
    }

    #[test]
    fn suppression_is_monotone_in_threshold() {
        let w = window(|t| (0.0, 0.0, 1.0 + 0.04 * (2.0 * PI * 2.0 * t).sin()), 40.0);
        let band = BandConfig::default();
        let mut reported = false;
        for k in 0..50 {
            let th = k as f64 * 0.002;
            let now = rr_bates(&w, &band, th).unwrap().estimate().is_some();
            assert!(!(reported && !now));
            reported |= now;
        }
        assert!(reported);
    }
}
