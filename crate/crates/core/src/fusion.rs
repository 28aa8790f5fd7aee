//! Band-of-interest fusion of fast-time taps.
//!
//! Finds the tap weighting `w` that maximizes slow-time spectral energy in
//! the respiration band while holding total energy fixed:
//!
//! ```text
//! maximize   wᵀ A w          A = Hᵀ Re(F_Iᴴ F_I) H
//! subject to wᵀ B w = const  B = Hᵀ Fᴴ F H = N HᵀH
//! ```
//!
//! `F` is the unnormalized DFT (`F[j,n] = exp(-2πi jn/N)`, so `FᴴF = N·I`)
//! and `F_I` keeps the in-band rows. For real `H` every positive in-band bin
//! has a conjugate mirror at `N - j` carrying the same energy; both count
//! towards `A`, which keeps the band/total ratio in `[0, 1]` and makes a pure
//! in-band tone score 1.
//!
//! The maximizer is the principal generalized eigenvector of `(A, B)`. It is
//! computed through the Cholesky factor `B = LLᵀ` and a symmetric eigensolve
//! of `L⁻¹ A L⁻ᵀ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BandConfig, CirMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Subtract each column's mean before building the energy matrices.
    pub remove_mean: bool,
    /// Ridge added to `B` (relative to `trace(B)/M`) when it is rank deficient.
    pub regularization: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            remove_mean: true,
            regularization: 1e-9,
        }
    }
}

/// Positive DFT bins `j` with `f_low <= j * rate / n <= f_high`.
pub fn in_band_bins(n: usize, rate: f64, band: &BandConfig) -> Vec<usize> {
    let spacing = rate / n as f64;
    let tol = 1e-9 * spacing;
    (0..=n / 2)
        .filter(|&j| {
            let f = j as f64 * spacing;
            f >= band.f_low - tol && f <= band.f_high + tol
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FusionProblem {
    /// N x M, column-centered unless mean removal is switched off.
    pub h: DMatrix<f64>,
    pub sample_rate: f64,
    pub band: BandConfig,
    pub in_band_bins: Vec<usize>,
    /// `false` when N <= M; `B` is then rank deficient and gets regularized.
    pub well_posed: bool,
    band_energy: DMatrix<f64>,
    total_energy: DMatrix<f64>,
}

pub fn build_problem(
    h: &CirMatrix,
    band: &BandConfig,
    sample_rate: f64,
    remove_mean: bool,
) -> Result<FusionProblem> {
    let (n, m) = (h.rows(), h.cols());
    if n < 4 {
        return Err(Error::TooFewSamples { need: 4, got: n });
    }
    let mut mat = DMatrix::from_row_slice(n, m, h.values());
    if remove_mean {
        for mut col in mat.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
    }
    let bins = in_band_bins(n, sample_rate, band);
    if bins.is_empty() {
        return Err(Error::BandUnresolvable {
            samples: n,
            rate: sample_rate,
        });
    }
    let band_energy = band_energy_matrix(&mat, &bins);
    let total_energy = mat.transpose() * &mat * n as f64;
    Ok(FusionProblem {
        h: mat,
        sample_rate,
        band: *band,
        in_band_bins: bins,
        well_posed: n > m,
        band_energy,
        total_energy,
    })
}

/// `A`: in-band slow-time energy as a quadratic form in `w`.
fn band_energy_matrix(h: &DMatrix<f64>, bins: &[usize]) -> DMatrix<f64> {
    let (n, m) = (h.nrows(), h.ncols());
    let fft = FftPlanner::new().plan_fft_forward(n);
    // spectra[c][j]: DFT of column c at bin j
    let spectra: Vec<Vec<Complex64>> = h
        .column_iter()
        .map(|col| {
            let mut buf: Vec<Complex64> = col.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.process(&mut buf);
            buf
        })
        .collect();
    let mut a = DMatrix::zeros(m, m);
    for &j in bins {
        // bins 0 and N/2 have no distinct mirror
        let mult = if j == 0 || 2 * j == n { 1.0 } else { 2.0 };
        for p in 0..m {
            let xp = spectra[p][j];
            for q in p..m {
                let xq = spectra[q][j];
                a[(p, q)] += mult * (xp.re * xq.re + xp.im * xq.im);
            }
        }
    }
    a.fill_lower_triangle_with_upper_triangle();
    a
}

impl FusionProblem {
    pub fn samples(&self) -> usize {
        self.h.nrows()
    }

    pub fn taps(&self) -> usize {
        self.h.ncols()
    }

    /// `A`: in-band slow-time energy as a quadratic form in `w`.
    pub fn band_energy_matrix(&self) -> &DMatrix<f64> {
        &self.band_energy
    }

    /// `B = N HᵀH`, the total slow-time energy by Parseval.
    pub fn total_energy_matrix(&self) -> &DMatrix<f64> {
        &self.total_energy
    }

    /// In-band share of total energy for weights `w`.
    pub fn rayleigh(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        rayleigh_quotient(&self.band_energy, &self.total_energy, &w)
    }
}

fn rayleigh_quotient(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let num = w.dot(&(a * w));
    let den = w.dot(&(b * w));
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FusionSolution {
    /// Unit norm, first non-negligible entry positive.
    pub w_opt: Vec<f64>,
    pub rayleigh: f64,
    /// `H w_opt` on the (centered) problem matrix.
    pub fused: Vec<f64>,
    pub regularized: bool,
}

pub fn solve(problem: &FusionProblem, cfg: &FusionConfig) -> Result<FusionSolution> {
    let m = problem.taps();
    let a = problem.band_energy_matrix();
    let b = problem.total_energy_matrix();

    let scale = b.trace() / m as f64;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateWindow);
    }
    let ridge = cfg.regularization * scale;
    let mut regularized = false;
    let chol = match b.clone().cholesky() {
        Some(c) if min_pivot_sq(c.l_dirty()) > ridge => c,
        _ => {
            regularized = true;
            let mut br = b.clone();
            for i in 0..m {
                br[(i, i)] += ridge;
            }
            br.cholesky().ok_or(Error::DegenerateWindow)?
        }
    };
    let l = chol.l();

    // C = L⁻¹ A L⁻ᵀ
    let x = l
        .solve_lower_triangular(a)
        .ok_or(Error::DegenerateWindow)?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or(Error::DegenerateWindow)?;
    let c = (&c + c.transpose()) * 0.5;

    let eig = SymmetricEigen::new(c);
    let top = eig.eigenvalues.imax();
    let y = eig.eigenvectors.column(top).into_owned();
    let w = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or(Error::DegenerateWindow)?;

    let norm = w.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateWindow);
    }
    let mut w = w / norm;
    let cutoff = 1e-12 * w.amax();
    if let Some(first) = w.iter().find(|v| v.abs() > cutoff) {
        if *first < 0.0 {
            w.neg_mut();
        }
    }

    let rayleigh = rayleigh_quotient(a, b, &w);
    let fused = (&problem.h * &w).iter().copied().collect();
    Ok(FusionSolution {
        w_opt: w.iter().copied().collect(),
        rayleigh,
        fused,
        regularized,
    })
}

fn min_pivot_sq(l: &DMatrix<f64>) -> f64 {
    l.diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min)
}
