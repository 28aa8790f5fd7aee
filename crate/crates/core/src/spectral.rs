//! Periodogram, in-band peak picking and Droitcour-style spectral SNR.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BandConfig, RrEstimate};

/// Relative slack on bin-frequency comparisons so that bins lying exactly on
/// a band edge are not lost to rounding.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    #[default]
    None,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub taper: Taper,
    /// FFT length multiplier. Only for display; estimates in the evaluation
    /// harness always use 1.
    pub zero_pad: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            taper: Taper::None,
            zero_pad: 1,
        }
    }
}

/// One-sided power spectrum, bins 0..=N/2.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn bin_spacing(&self) -> f64 {
        if self.frequencies.len() > 1 {
            self.frequencies[1] - self.frequencies[0]
        } else {
            0.0
        }
    }

    /// Indices of bins whose frequency lies in the band (edges inclusive).
    pub fn in_band(&self, band: &BandConfig) -> Vec<usize> {
        let tol = EDGE_EPS * self.bin_spacing().max(f64::MIN_POSITIVE);
        self.frequencies
            .iter()
            .enumerate()
            .filter(|(_, &f)| f >= band.f_low - tol && f <= band.f_high + tol)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Raw periodogram `|DFT(x - mean)|^2` without taper or padding.
pub fn periodogram(signal: &[f64], rate: f64) -> Result<Spectrum> {
    periodogram_with(signal, rate, &SpectralConfig::default())
}

pub fn periodogram_with(signal: &[f64], rate: f64, cfg: &SpectralConfig) -> Result<Spectrum> {
    let n = signal.len();
    if n < 4 {
        return Err(Error::TooFewSamples { need: 4, got: n });
    }
    let mean = signal.iter().sum::<f64>() / n as f64;
    let nfft = n * cfg.zero_pad.max(1);
    let mut buf: Vec<Complex64> = signal
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let w = match cfg.taper {
                Taper::None => 1.0,
                Taper::Hann => 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos(),
            };
            Complex64::new((x - mean) * w, 0.0)
        })
        .collect();
    buf.resize(nfft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);

    let half = nfft / 2;
    let frequencies = (0..=half).map(|j| j as f64 * rate / nfft as f64).collect();
    let power = buf[..=half].iter().map(|c| c.norm_sqr()).collect();
    Ok(Spectrum { frequencies, power })
}

/// Picks the strongest in-band bin (lowest frequency on ties) and attaches
/// the spectral SNR around it.
pub fn estimate_rr(spectrum: &Spectrum, band: &BandConfig) -> Result<RrEstimate> {
    let bins = spectrum.in_band(band);
    let mut best: Option<usize> = None;
    for j in bins {
        match best {
            Some(b) if spectrum.power[j] <= spectrum.power[b] => {}
            _ => best = Some(j),
        }
    }
    let peak_bin = best.ok_or(Error::NoBinsInBand {
        f_low: band.f_low,
        f_high: band.f_high,
    })?;
    let peak_frequency = spectrum.frequencies[peak_bin];
    Ok(RrEstimate {
        rate_bpm: 60.0 * peak_frequency,
        snr: snr(spectrum, peak_frequency, band.snr_band_width),
        peak_frequency,
        spectrum: spectrum.clone(),
    })
}

/// Power within `band_width` bpm (total width) around `peak` over the power
/// in every other non-DC bin. Returns `f64::INFINITY` when the remainder is
/// zero to working precision (at most `f64::EPSILON` of the total), so FFT
/// round-off on an exact-bin tone still reads as noise-free.
pub fn snr(spectrum: &Spectrum, peak: f64, band_width: f64) -> f64 {
    let half_width_hz = band_width / 2.0 / 60.0;
    let tol = EDGE_EPS * half_width_hz.max(spectrum.bin_spacing());
    let (mut signal, mut noise) = (0.0, 0.0);
    for (j, (&f, &p)) in spectrum.frequencies.iter().zip(&spectrum.power).enumerate() {
        if (f - peak).abs() <= half_width_hz + tol {
            signal += p;
        } else if j != 0 {
            noise += p;
        }
    }
    if noise > f64::EPSILON * (signal + noise) {
        signal / noise
    } else {
        f64::INFINITY
    }
}
