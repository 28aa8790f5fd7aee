//! Raw frames to the calibrated, aligned magnitude matrix.
//!
//! Stages run in order: element-wise magnitude, dominant-path calibration
//! (each row divided by the RMS-like energy of a `2D+1` tap window around its
//! peak), then integer-lag cross-correlation alignment against the first row.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CirFrame, CirMatrix};

/// Whether calibration runs on complex taps (before the magnitude step) or on
/// magnitudes. Both give the same magnitude matrix since the coefficient only
/// depends on `|h|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationDomain {
    #[default]
    Magnitude,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Taps on each side of the peak (D). The window spans `2D+1` taps.
    pub half_window: usize,
    pub domain: CalibrationDomain,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            half_window: 3,
            domain: CalibrationDomain::Magnitude,
        }
    }
}

impl CalibrationConfig {
    pub fn span(&self) -> usize {
        2 * self.half_window + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub enabled: bool,
    pub search_radius: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            search_radius: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AlignmentResult {
    /// Per-row lag `k_n`; row `n` of the output is `h_n[m + k_n]`.
    pub shifts: Vec<i64>,
    pub max_abs_shift: usize,
}

/// Element-wise modulus of each frame, one row per frame in counter order.
pub fn magnitude(frames: &[CirFrame]) -> Result<CirMatrix> {
    let first = frames.first().ok_or(Error::NoFrames)?;
    let cols = first.taps.len();
    let mut order: Vec<&CirFrame> = frames.iter().collect();
    order.sort_by_key(|f| f.counter);
    let mut values = Vec::with_capacity(frames.len() * cols);
    for f in &order {
        if f.taps.len() != cols {
            return Err(Error::InvalidMatrix(format!(
                "frame {} has {} taps, expected {cols}",
                f.counter,
                f.taps.len()
            )));
        }
        values.extend(f.taps.iter().map(|c| c.norm_sqr().sqrt()));
    }
    let times = order.iter().map(|f| f.timestamp).collect();
    CirMatrix::new(frames.len(), cols, values, times)
}

/// Index of the largest magnitude; the first one wins ties.
pub fn direct_path_index(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `(1/(2D+1)) * sqrt(sum |h|^2)` over the window around the peak, clipped at
/// the row edges.
pub fn calibration_coefficient(row: &[f64], cfg: &CalibrationConfig) -> Result<f64> {
    if row.len() < cfg.span() {
        return Err(Error::config(
            "row length >= 2*D+1",
            format!("{} < {}", row.len(), cfg.span()),
        ));
    }
    let peak = direct_path_index(row);
    let lo = peak.saturating_sub(cfg.half_window);
    let hi = (peak + cfg.half_window).min(row.len() - 1);
    let energy: f64 = row[lo..=hi].iter().map(|v| v * v).sum();
    let c = energy.sqrt() / cfg.span() as f64;
    if c > 0.0 && c.is_finite() {
        Ok(c)
    } else {
        Err(Error::DegenerateDirectPath)
    }
}

pub fn calibrate(row: &[f64], cfg: &CalibrationConfig) -> Result<Vec<f64>> {
    let c = calibration_coefficient(row, cfg)?;
    Ok(row.iter().map(|v| v / c).collect())
}

/// Calibration applied to complex taps; the coefficient comes from `|h|`.
pub fn calibrate_complex(taps: &[Complex64], cfg: &CalibrationConfig) -> Result<Vec<Complex64>> {
    let mags: Vec<f64> = taps.iter().map(|c| c.norm()).collect();
    let c = calibration_coefficient(&mags, cfg)?;
    Ok(taps.iter().map(|t| t / c).collect())
}

pub fn calibrate_matrix(h: &CirMatrix, cfg: &CalibrationConfig) -> Result<CirMatrix> {
    let mut values = Vec::with_capacity(h.values().len());
    for row in h.iter_rows() {
        values.extend(calibrate(row, cfg)?);
    }
    h.with_values(values)
}

/// `|sum_m a[m] * b[m + k]|` with out-of-range taps treated as zero.
pub fn lagged_correlation(a: &[f64], b: &[f64], k: i64) -> f64 {
    // m ranges over indices where both a[m] and b[m + k] exist
    let lo = (-k).max(0) as usize;
    let hi = (a.len() as i64).min(b.len() as i64 - k).max(0) as usize;
    if lo >= hi {
        return 0.0;
    }
    let b_lo = (lo as i64 + k) as usize;
    let sum: f64 = a[lo..hi].iter().zip(&b[b_lo..]).map(|(x, y)| x * y).sum();
    sum.abs()
}

/// Lag in `[-radius, radius]` maximizing the correlation with `reference`.
/// Candidates are visited as 0, -1, 1, -2, 2, ... and only a strictly larger
/// score replaces the incumbent, so ties prefer the smaller `|k|` and then the
/// negative lag.
pub fn best_shift(reference: &[f64], row: &[f64], radius: usize) -> i64 {
    let mut best_k = 0i64;
    let mut best = lagged_correlation(reference, row, 0);
    for r in 1..=radius as i64 {
        for k in [-r, r] {
            let score = lagged_correlation(reference, row, k);
            if score > best {
                best = score;
                best_k = k;
            }
        }
    }
    best_k
}

/// `out[m] = row[m + k]`, zero where `m + k` falls outside the row.
pub fn shift_row(row: &[f64], k: i64) -> Vec<f64> {
    let n = row.len() as i64;
    (0..n)
        .map(|m| {
            let j = m + k;
            if (0..n).contains(&j) {
                row[j as usize]
            } else {
                0.0
            }
        })
        .collect()
}

/// Aligns every row to row 0.
pub fn align(h: &CirMatrix, search_radius: usize) -> Result<(CirMatrix, AlignmentResult)> {
    let reference = h.row(0);
    let shifts: Vec<i64> = h
        .iter_rows()
        .enumerate()
        .map(|(n, row)| {
            if n == 0 {
                0
            } else {
                best_shift(reference, row, search_radius)
            }
        })
        .collect();
    let mut values = Vec::with_capacity(h.values().len());
    for (row, &k) in h.iter_rows().zip(&shifts) {
        values.extend(shift_row(row, k));
    }
    let max_abs_shift = shifts.iter().map(|k| k.unsigned_abs() as usize).max().unwrap_or(0);
    Ok((
        h.with_values(values)?,
        AlignmentResult {
            shifts,
            max_abs_shift,
        },
    ))
}

/// Every intermediate matrix of the preprocessing chain.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub magnitude: CirMatrix,
    pub calibrated: CirMatrix,
    pub aligned: CirMatrix,
    /// `None` when alignment is disabled.
    pub alignment: Option<AlignmentResult>,
}

impl Preprocessed {
    /// Matrix handed to fusion.
    pub fn output(&self) -> &CirMatrix {
        &self.aligned
    }

    pub fn stage(&self, name: &str) -> Option<&CirMatrix> {
        match name {
            "magnitude" => Some(&self.magnitude),
            "calibrated" => Some(&self.calibrated),
            "aligned" => Some(&self.aligned),
            _ => None,
        }
    }
}

pub fn preprocess(
    frames: &[CirFrame],
    cal: &CalibrationConfig,
    alignment: &AlignmentConfig,
) -> Result<Preprocessed> {
    let magnitude = magnitude(frames)?;
    let calibrated = match cal.domain {
        CalibrationDomain::Magnitude => calibrate_matrix(&magnitude, cal)?,
        CalibrationDomain::Complex => {
            let calibrated_frames = frames
                .iter()
                .map(|f| {
                    Ok(CirFrame {
                        taps: calibrate_complex(&f.taps, cal)?,
                        ..f.clone()
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            self::magnitude(&calibrated_frames)?
        }
    };
    let (aligned, alignment) = if alignment.enabled {
        let (m, r) = align(&calibrated, alignment.search_radius)?;
        (m, Some(r))
    } else {
        (calibrated.clone(), None)
    };
    Ok(Preprocessed {
        magnitude,
        calibrated,
        aligned,
        alignment,
    })
}
