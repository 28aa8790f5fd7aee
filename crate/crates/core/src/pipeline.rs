//! Windowed processing of a trace with one of the estimation methods.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{rr_bates, rr_rahman, AccelWindow, BatesOutcome};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::fusion::{build_problem, solve, FusionSolution};
use crate::ingest::{resample_reference, ReferenceKind, TraceRecord};
use crate::model::{CirFrame, RrEstimate};
use crate::preprocess::{preprocess, Preprocessed};
use crate::spectral::{estimate_rr, periodogram, periodogram_with};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Uwb,
    Rahman,
    Bates,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Uwb => "uwb",
            Method::Rahman => "rahman",
            Method::Bates => "bates",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uwb" => Ok(Method::Uwb),
            "rahman" => Ok(Method::Rahman),
            "bates" => Ok(Method::Bates),
            other => Err(format!("unknown method '{other}' (uwb, rahman, bates)")),
        }
    }
}

/// Everything the UWB path computes for one window.
#[derive(Debug, Clone)]
pub struct UwbWindow {
    pub preprocessed: Preprocessed,
    pub well_posed: bool,
    pub fusion: FusionSolution,
    pub estimate: RrEstimate,
}

pub fn process_uwb_window(frames: &[CirFrame], cfg: &PipelineConfig) -> Result<UwbWindow> {
    let rate = cfg.geometry.slow_time_rate;
    let preprocessed = preprocess(frames, &cfg.calibration, &cfg.alignment)?;
    let problem = build_problem(
        preprocessed.output(),
        &cfg.band,
        rate,
        cfg.fusion.remove_mean,
    )?;
    let fusion = solve(&problem, &cfg.fusion)?;
    let spectrum = periodogram_with(&fusion.fused, rate, &cfg.spectral)?;
    let estimate = estimate_rr(&spectrum, &cfg.band)?;
    Ok(UwbWindow {
        preprocessed,
        well_posed: problem.well_posed,
        fusion,
        estimate,
    })
}

#[derive(Debug, Clone)]
pub enum WindowOutcome {
    Estimate(RrEstimate),
    /// Bates motion gate fired.
    Suppressed { motion_std: f64 },
    /// The window could not be processed (too few frames, degenerate data).
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct WindowResult {
    pub start: f64,
    pub end: f64,
    pub method: Method,
    pub outcome: WindowOutcome,
    /// UWB intermediates, kept only when requested.
    pub detail: Option<Box<UwbWindow>>,
}

impl WindowResult {
    pub fn estimate(&self) -> Option<&RrEstimate> {
        match &self.outcome {
            WindowOutcome::Estimate(e) => Some(e),
            _ => None,
        }
    }
}

/// Window bounds `[start, start + window_s)` with hop `hop_fraction *
/// window_s`, all fitting inside `duration`. `None` yields one window over the
/// whole trace.
pub fn analysis_windows(duration: f64, window_s: Option<f64>, hop_fraction: f64) -> Vec<(f64, f64)> {
    let Some(w) = window_s else {
        return vec![(0.0, duration)];
    };
    let hop = w * hop_fraction;
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let start = k as f64 * hop;
        if start + w > duration + 1e-9 {
            break;
        }
        out.push((start, start + w));
        k += 1;
    }
    out
}

pub fn process_window(
    trace: &TraceRecord,
    start: f64,
    end: f64,
    method: Method,
    cfg: &PipelineConfig,
    keep_detail: bool,
) -> WindowResult {
    let mut detail = None;
    let outcome = match method {
        Method::Uwb => match process_uwb_window(trace.frames_in(start, end), cfg) {
            Ok(w) => {
                let est = w.estimate.clone();
                if keep_detail {
                    detail = Some(Box::new(w));
                }
                WindowOutcome::Estimate(est)
            }
            Err(e) => WindowOutcome::Failed(e.to_string()),
        },
        Method::Rahman | Method::Bates => {
            let samples = trace.accel_in(start, end).to_vec();
            let result = AccelWindow::new(samples, cfg.geometry.slow_time_rate).and_then(|win| {
                if method == Method::Rahman {
                    rr_rahman(&win, &cfg.band).map(WindowOutcome::Estimate)
                } else {
                    rr_bates(&win, &cfg.band, cfg.baselines.motion_threshold).map(|o| match o {
                        BatesOutcome::Estimate(e) => WindowOutcome::Estimate(e),
                        BatesOutcome::Suppressed { motion_std } => {
                            WindowOutcome::Suppressed { motion_std }
                        }
                    })
                }
            });
            result.unwrap_or_else(|e| WindowOutcome::Failed(e.to_string()))
        }
    };
    WindowResult {
        start,
        end,
        method,
        outcome,
        detail,
    }
}

/// Runs `method` over every analysis window of the trace.
pub fn process_trace(
    trace: &TraceRecord,
    method: Method,
    cfg: &PipelineConfig,
    keep_detail: bool,
) -> Vec<WindowResult> {
    analysis_windows(trace.duration, cfg.analysis.window_s, cfg.analysis.hop_fraction)
        .into_iter()
        .map(|(s, e)| process_window(trace, s, e, method, cfg, keep_detail))
        .collect()
}

/// Reference rate for a window: the simulator's ground truth when present,
/// otherwise the in-band spectral peak of the reference stream resampled to
/// the slow-time rate.
pub fn reference_rr(trace: &TraceRecord, start: f64, end: f64, cfg: &PipelineConfig) -> Option<f64> {
    if let Some(gt) = trace.ground_truth {
        return Some(gt.mean_rate(start, end));
    }
    if trace.reference_kind == ReferenceKind::None {
        return None;
    }
    let series = resample_reference(trace.reference_in(start, end), cfg.geometry.slow_time_rate).ok()?;
    let spectrum = periodogram(&series.values, series.rate).ok()?;
    estimate_rr(&spectrum, &cfg.band).ok().map(|e| e.rate_bpm)
}
