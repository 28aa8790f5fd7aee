//! CSV and JSON writers for every CLI output.
//!
//! Floats use Rust's shortest round-trip formatting, so identical results
//! give identical bytes. Non-finite values print as `inf` / `NaN` in CSV and
//! as `null` in JSON.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::eval::{Aggregate, EvalRow, SweepRow};
use crate::model::{tap_to_depth, CirMatrix, SamplingGeometry};
use crate::pipeline::{WindowOutcome, WindowResult};
use crate::preprocess::direct_path_index;
use crate::spectral::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_table<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// One line of `process` output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub id: String,
    pub method: String,
    pub window_start: f64,
    pub window_end: f64,
    /// `estimate`, `suppressed` or `failed`.
    pub status: &'static str,
    pub rate_bpm: Option<f64>,
    pub snr: Option<f64>,
    pub peak_frequency_hz: Option<f64>,
    pub note: String,
}

impl EstimateRecord {
    pub fn new(id: &str, w: &WindowResult) -> Self {
        let (status, est, note) = match &w.outcome {
            WindowOutcome::Estimate(e) => ("estimate", Some(e), String::new()),
            WindowOutcome::Suppressed { motion_std } => {
                ("suppressed", None, format!("motion std {motion_std}"))
            }
            WindowOutcome::Failed(msg) => ("failed", None, msg.clone()),
        };
        Self {
            id: id.to_string(),
            method: w.method.to_string(),
            window_start: w.start,
            window_end: w.end,
            status,
            rate_bpm: est.map(|e| e.rate_bpm),
            snr: est.map(|e| e.snr),
            peak_frequency_hz: est.map(|e| e.peak_frequency),
            note,
        }
    }
}

pub fn write_estimates<W: Write>(out: W, rows: &[EstimateRecord], format: Format) -> Result<()> {
    if format == Format::Json {
        return json(out, rows);
    }
    csv_table(
        out,
        &["id", "method", "window_start", "window_end", "status", "rate_bpm", "snr", "peak_frequency_hz", "note"],
        rows.iter().map(|r| {
            vec![
                r.id.clone(),
                r.method.clone(),
                num(r.window_start),
                num(r.window_end),
                r.status.to_string(),
                opt(r.rate_bpm),
                opt(r.snr),
                opt(r.peak_frequency_hz),
                r.note.clone(),
            ]
        }),
    )
}

pub fn write_eval_rows<W: Write>(out: W, rows: &[EvalRow], format: Format) -> Result<()> {
    if format == Format::Json {
        return json(out, rows);
    }
    csv_table(
        out,
        &["id", "activity", "method", "window_start", "window_end", "rr_est", "rr_ref", "abs_err", "snr"],
        rows.iter().map(|r| {
            vec![
                r.id.clone(),
                r.activity.clone(),
                r.method.to_string(),
                num(r.window_start),
                num(r.window_end),
                num(r.rr_est),
                num(r.rr_ref),
                num(r.abs_err),
                num(r.snr),
            ]
        }),
    )
}

pub fn write_aggregates<W: Write>(out: W, rows: &[Aggregate], format: Format) -> Result<()> {
    if format == Format::Json {
        return json(out, rows);
    }
    csv_table(
        out,
        &["activity", "n", "rmse", "mape", "success_rate", "mean_snr"],
        rows.iter().map(|a| {
            vec![
                a.activity.clone(),
                a.n.to_string(),
                num(a.rmse),
                num(a.mape),
                num(a.success_rate),
                num(a.mean_snr),
            ]
        }),
    )
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow], format: Format) -> Result<()> {
    if format == Format::Json {
        return json(out, rows);
    }
    csv_table(
        out,
        &["window_s", "success_rate", "ci_low", "ci_high", "n_windows"],
        rows.iter().map(|r| {
            vec![
                num(r.window_s),
                num(r.success_rate),
                num(r.ci_low),
                num(r.ci_high),
                r.n_windows.to_string(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumPoint {
    pub window: usize,
    pub frequency_hz: f64,
    pub bpm: f64,
    pub power: f64,
}

pub fn spectrum_points(window: usize, spectrum: &Spectrum) -> Vec<SpectrumPoint> {
    spectrum.frequencies
        .iter()
        .zip(&spectrum.power)
        .map(|(&f, &p)| SpectrumPoint {
            window,
            frequency_hz: f,
            bpm: 60.0 * f,
            power: p,
        })
        .collect()
}

pub fn write_spectrum<W: Write>(out: W, points: &[SpectrumPoint], format: Format) -> Result<()> {
    if format == Format::Json {
        return json(out, points);
    }
    csv_table(
        out,
        &["window", "frequency_hz", "bpm", "power"],
        points.iter().map(|p| vec![p.window.to_string(), num(p.frequency_hz), num(p.bpm), num(p.power)]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightPoint {
    pub window: usize,
    pub tap: usize,
    /// One-way depth relative to the direct path; negative in front of it.
    pub depth_cm: f64,
    pub weight: f64,
}

/// Annotates fusion weights with depths measured from the direct-path tap of
/// the first row of `h`.
pub fn weight_points(window: usize, weights: &[f64], h: &CirMatrix, g: &SamplingGeometry) -> Vec<WeightPoint> {
    let skin = if h.rows() > 0 { direct_path_index(h.row(0)) } else { 0 };
    weights
        .iter()
        .enumerate()
        .map(|(tap, &weight)| {
            let depth_cm = if tap >= skin {
                tap_to_depth(tap - skin, g)
            } else {
                -tap_to_depth(skin - tap, g)
            };
            WeightPoint { window, tap, depth_cm, weight }
        })
        .collect()
}

pub fn write_weights<W: Write>(out: W, points: &[WeightPoint], format: Format) -> Result<()> {
    if format == Format::Json {
        return json(out, points);
    }
    csv_table(
        out,
        &["window", "tap", "depth_cm", "weight"],
        points.iter().map(|p| vec![p.window.to_string(), p.tap.to_string(), num(p.depth_cm), num(p.weight)]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRow {
    pub window: usize,
    pub row: usize,
    pub time: f64,
    pub taps: Vec<f64>,
}

pub fn stage_rows(window: usize, h: &CirMatrix) -> Vec<StageRow> {
    h.iter_rows()
        .zip(h.row_times())
        .enumerate()
        .map(|(row, (taps, &time))| StageRow {
            window,
            row,
            time,
            taps: taps.to_vec(),
        })
        .collect()
}

/// Wide layout: `window,row,time,tap0,...,tapM-1`.
pub fn write_stage<W: Write>(out: W, rows: &[StageRow], format: Format) -> Result<()> {
    if format == Format::Json {
        return json(out, rows);
    }
    let m = rows.first().map_or(0, |r| r.taps.len());
    let mut header: Vec<String> = vec!["window".into(), "row".into(), "time".into()];
    header.extend((0..m).map(|k| format!("tap{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_table(
        out,
        &header,
        rows.iter().map(|r| {
            let mut rec = vec![r.window.to_string(), r.row.to_string(), num(r.time)];
            rec.extend(r.taps.iter().map(|&v| num(v)));
            rec
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub n: usize,
    pub pearson: f64,
}

pub fn write_correlation<W: Write>(out: W, c: &Correlation, format: Format) -> Result<()> {
    if format == Format::Json {
        return json(out, c);
    }
    csv_table(out, &["n", "pearson"], [vec![c.n.to_string(), num(c.pearson)]])
}
