//! Core data types shared by every stage: sampling geometry, CIR frames,
//! the slow-time x fast-time magnitude matrix, the respiration band and
//! the per-window rate estimate.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::CalibrationConfig;
use crate::spectral::Spectrum;

/// Number of complex samples in the full DW3000 CIR accumulator at 64 MHz PRF.
pub const FULL_CIR_LENGTH: usize = 1016;

/// Chip rate of the UWB PHY; the CIR is sampled at twice this rate.
pub const CHIP_RATE_HZ: f64 = 499.2e6;

/// Where the CIR window is cut from the accumulator and how fast it is
/// propagated through tissue and air.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingGeometry {
    /// Seconds per fast-time tap.
    pub cir_tap_period: f64,
    pub extraction_offset: usize,
    pub window_taps: usize,
    /// CIR frame rate (Hz).
    pub slow_time_rate: f64,
    pub refractive_index_thorax: f64,
    /// cm/ns
    pub speed_in_thorax: f64,
    /// cm/ns
    pub speed_in_air: f64,
}

impl Default for SamplingGeometry {
    fn default() -> Self {
        Self {
            cir_tap_period: 1.0 / (2.0 * CHIP_RATE_HZ),
            extraction_offset: 720,
            window_taps: 100,
            slow_time_rate: 32.0,
            refractive_index_thorax: 50f64.sqrt(),
            speed_in_thorax: 4.2,
            speed_in_air: 29.9,
        }
    }
}

impl SamplingGeometry {
    pub fn tap_period_ns(&self) -> f64 {
        self.cir_tap_period * 1e9
    }
}

/// Checks every geometry invariant, including the ones that couple it to the
/// calibration window and the respiration band.
pub fn validate_geometry(
    g: &SamplingGeometry,
    band: &BandConfig,
    cal: &CalibrationConfig,
) -> Result<()> {
    if !(g.cir_tap_period > 0.0) {
        return Err(Error::config(
            "cir_tap_period > 0",
            format!("got {}", g.cir_tap_period),
        ));
    }
    let span = 2 * cal.half_window + 1;
    if g.window_taps < span {
        return Err(Error::config(
            "window_taps >= 2*D+1",
            format!("window_taps {} < {}", g.window_taps, span),
        ));
    }
    if g.extraction_offset + g.window_taps > FULL_CIR_LENGTH {
        return Err(Error::config(
            "extraction_offset + window_taps <= 1016",
            format!("{} + {} > {}", g.extraction_offset, g.window_taps, FULL_CIR_LENGTH),
        ));
    }
    if !(g.slow_time_rate > 2.0 * band.f_high) {
        return Err(Error::config(
            "slow_time_rate > 2*f_high",
            format!("{} Hz <= 2 * {} Hz", g.slow_time_rate, band.f_high),
        ));
    }
    Ok(())
}

/// One-way path length in centimetres covered by `tap_index_from_skin` taps,
/// assuming propagation through thorax tissue.
pub fn tap_to_depth(tap_index_from_skin: usize, g: &SamplingGeometry) -> f64 {
    tap_index_from_skin as f64 * g.tap_period_ns() * g.speed_in_thorax
}

/// Band of plausible respiration frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandConfig {
    pub f_low: f64,
    pub f_high: f64,
    /// Total width (bpm) of the signal region around the spectral peak.
    pub snr_band_width: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            f_low: 0.1,
            f_high: 0.7,
            snr_band_width: 6.0,
        }
    }
}

impl BandConfig {
    pub fn validate(&self, slow_time_rate: f64) -> Result<()> {
        if !(self.f_low > 0.0 && self.f_low < self.f_high) {
            return Err(Error::config(
                "0 < f_low < f_high",
                format!("f_low {} f_high {}", self.f_low, self.f_high),
            ));
        }
        if !(self.f_high < slow_time_rate / 2.0) {
            return Err(Error::config(
                "f_high < slow_time_rate/2",
                format!("f_high {} rate {}", self.f_high, slow_time_rate),
            ));
        }
        if !(self.snr_band_width > 0.0) {
            return Err(Error::config(
                "snr_band_width > 0",
                format!("got {}", self.snr_band_width),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.f_low && f <= self.f_high
    }
}

/// One CIR window as delivered by the radar, tagged with the packet counter.
#[derive(Debug, Clone, PartialEq)]
pub struct CirFrame {
    pub counter: u64,
    /// Seconds since trace start.
    pub timestamp: f64,
    pub taps: Vec<Complex64>,
}

/// Real slow-time x fast-time matrix, row-major. Rows are CIR frames, columns
/// are fast-time taps (depth).
#[derive(Debug, Clone, PartialEq)]
pub struct CirMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    row_times: Vec<f64>,
}

impl CirMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, row_times: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix(format!("empty {rows}x{cols} matrix")));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidMatrix(format!(
                "{} values for {rows}x{cols}",
                values.len()
            )));
        }
        if row_times.len() != rows {
            return Err(Error::InvalidMatrix(format!(
                "{} row times for {rows} rows",
                row_times.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidMatrix(format!(
                "magnitudes must be finite and non-negative, found {v}"
            )));
        }
        if row_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMatrix(
                "row times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            values,
            row_times,
        })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>], row_times: Vec<f64>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidMatrix("ragged rows".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, values, row_times)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_times(&self) -> &[f64] {
        &self.row_times
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.cols..(n + 1) * self.cols]
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.values[n * self.cols + m]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        self.iter_rows().map(|r| r[m]).collect()
    }

    /// Replaces the values, keeping shape and row times.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.rows, self.cols, values, self.row_times.clone())
    }
}

/// Respiratory rate estimate for one analysis window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RrEstimate {
    pub rate_bpm: f64,
    /// Droitcour-style spectral SNR; `f64::INFINITY` when no noise power
    /// remains outside the signal region.
    pub snr: f64,
    pub peak_frequency: f64,
    #[serde(skip)]
    pub spectrum: Spectrum,
}

impl RrEstimate {
    pub fn snr_is_infinite(&self) -> bool {
        self.snr.is_infinite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn defaults() -> (SamplingGeometry, BandConfig, CalibrationConfig) {
        (
            SamplingGeometry::default(),
            BandConfig::default(),
            CalibrationConfig::default(),
        )
    }

    #[test]
    fn default_geometry_is_valid() {
        let (g, b, c) = defaults();
        assert_eq!(g.extraction_offset, 720);
        assert_eq!(g.window_taps, 100);
        assert_eq!(g.slow_time_rate, 32.0);
        validate_geometry(&g, &b, &c).unwrap();
        // displayed as "about 1 ns"
        assert_eq!(format!("{:.1}", g.tap_period_ns()), "1.0");
    }

    #[test]
    fn offset_past_accumulator_end_is_rejected() {
        let (mut g, b, c) = defaults();
        g.extraction_offset = 950;
        match validate_geometry(&g, &b, &c) {
            Err(Error::InvalidConfig { invariant, .. }) => {
                assert_eq!(invariant, "extraction_offset + window_taps <= 1016")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slow_rate_below_nyquist_is_rejected() {
        let (mut g, b, c) = defaults();
        g.slow_time_rate = 1.0;
        match validate_geometry(&g, &b, &c) {
            Err(Error::InvalidConfig { invariant, .. }) => {
                assert_eq!(invariant, "slow_time_rate > 2*f_high")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn window_must_hold_calibration_span() {
        let (mut g, b, c) = defaults();
        g.window_taps = 6;
        assert!(validate_geometry(&g, &b, &c).is_err());
        g.window_taps = 7;
        validate_geometry(&g, &b, &c).unwrap();
    }

    #[test]
    fn depth_per_tap() {
        let g = SamplingGeometry::default();
        assert_eq!(tap_to_depth(0, &g), 0.0);
        assert_eq!(format!("{:.1}", tap_to_depth(1, &g)), "4.2");
        // 35 taps one way; the 148.3 cm round-trip figure uses a flat 4.2 cm/tap
        let d = tap_to_depth(35, &g);
        assert_eq!(d.round(), 147.0);
        assert!((d - 148.3).abs() < 4.2, "within one tap of 148.3 cm, got {d}");
    }

    #[test]
    fn band_validation() {
        let b = BandConfig::default();
        b.validate(32.0).unwrap();
        assert!(BandConfig { f_low: 0.8, ..b }.validate(32.0).is_err());
        assert!(BandConfig { f_high: 16.0, ..b }.validate(32.0).is_err());
        assert!(BandConfig { snr_band_width: 0.0, ..b }.validate(32.0).is_err());
    }

    #[test]
    fn matrix_rejects_negative_and_unsorted() {
        assert!(CirMatrix::from_rows(&[vec![1.0, -1.0]], vec![0.0]).is_err());
        assert!(CirMatrix::from_rows(&[vec![1.0], vec![1.0]], vec![1.0, 0.5]).is_err());
        let m = CirMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.0, 1.0]).unwrap();
        assert_eq!(m.column(1), vec![2.0, 4.0]);
        assert_eq!(m.get(1, 0), 3.0);
    }

    proptest! {
        #[test]
        fn depth_is_linear(a in 0usize..2000, b in 0usize..2000) {
            let g = SamplingGeometry::default();
            let lhs = tap_to_depth(a + b, &g);
            let rhs = tap_to_depth(a, &g) + tap_to_depth(b, &g);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
        }
    }
}
