//! Evaluation harness: error metrics, window-size sweeps and the SNR/error
//! correlation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ingest::TraceRecord;
use crate::pipeline::{analysis_windows, process_window, reference_rr, Method, WindowOutcome};

/// A window counts as a success when its absolute error is strictly below
/// this many bpm.
pub const SUCCESS_THRESHOLD_BPM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub id: String,
    pub activity: String,
    pub method: Method,
    pub window_start: f64,
    pub window_end: f64,
    pub rr_est: f64,
    pub rr_ref: f64,
    pub abs_err: f64,
    pub snr: f64,
}

impl EvalRow {
    pub fn success(&self) -> bool {
        self.abs_err < SUCCESS_THRESHOLD_BPM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub activity: String,
    pub n: usize,
    pub rmse: f64,
    pub mape: f64,
    pub success_rate: f64,
    /// Mean over rows with a finite SNR.
    pub mean_snr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub id: String,
    pub window_start: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EvalResult {
    pub rows: Vec<EvalRow>,
    pub excluded: Vec<Exclusion>,
    /// Windows withheld by the motion gate.
    pub suppressed: usize,
}

impl EvalResult {
    /// Per-activity aggregates, sorted by activity, followed by an `all` row.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        aggregate(&self.rows)
    }

    /// Row-wise concatenation.
    pub fn merge(mut self, other: EvalResult) -> EvalResult {
        self.rows.extend(other.rows);
        self.excluded.extend(other.excluded);
        self.suppressed += other.suppressed;
        self
    }
}

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Mean absolute percentage error, in percent.
pub fn mape(estimates: &[f64], references: &[f64]) -> f64 {
    if estimates.is_empty() {
        return f64::NAN;
    }
    let total: f64 = estimates
        .iter()
        .zip(references)
        .map(|(e, r)| (e - r).abs() / r)
        .sum();
    100.0 * total / estimates.len() as f64
}

pub fn success_rate(abs_errors: &[f64]) -> f64 {
    if abs_errors.is_empty() {
        return f64::NAN;
    }
    abs_errors.iter().filter(|e| **e < SUCCESS_THRESHOLD_BPM).count() as f64 / abs_errors.len() as f64
}

fn summarize(activity: String, rows: &[&EvalRow]) -> Aggregate {
    let errs: Vec<f64> = rows.iter().map(|r| r.rr_est - r.rr_ref).collect();
    let abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
    let est: Vec<f64> = rows.iter().map(|r| r.rr_est).collect();
    let refs: Vec<f64> = rows.iter().map(|r| r.rr_ref).collect();
    let finite: Vec<f64> = rows.iter().map(|r| r.snr).filter(|s| s.is_finite()).collect();
    let mean_snr = if finite.is_empty() {
        if rows.is_empty() { f64::NAN } else { f64::INFINITY }
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Aggregate {
        activity,
        n: rows.len(),
        rmse: rmse(&errs),
        mape: mape(&est, &refs),
        success_rate: success_rate(&abs),
        mean_snr,
    }
}

pub fn aggregate(rows: &[EvalRow]) -> Vec<Aggregate> {
    let mut by_activity: BTreeMap<&str, Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        by_activity.entry(r.activity.as_str()).or_default().push(r);
    }
    let mut out: Vec<Aggregate> = by_activity
        .into_iter()
        .map(|(a, rs)| summarize(a.to_string(), &rs))
        .collect();
    out.push(summarize("all".into(), &rows.iter().collect::<Vec<_>>()));
    out
}

fn evaluate_trace(trace: &TraceRecord, method: Method, cfg: &PipelineConfig) -> EvalResult {
    let windows = analysis_windows(trace.duration, cfg.analysis.window_s, cfg.analysis.hop_fraction);
    let mut result = EvalResult::default();
    for (start, end) in windows {
        let exclude = |reason: String| Exclusion {
            id: trace.id.clone(),
            window_start: start,
            reason,
        };
        let Some(rr_ref) = reference_rr(trace, start, end, cfg) else {
            result.excluded.push(exclude("no reference".into()));
            continue;
        };
        let w = process_window(trace, start, end, method, cfg, false);
        match w.outcome {
            WindowOutcome::Estimate(e) => result.rows.push(EvalRow {
                id: trace.id.clone(),
                activity: trace.activity_label.clone(),
                method,
                window_start: start,
                window_end: end,
                rr_est: e.rate_bpm,
                rr_ref,
                abs_err: (e.rate_bpm - rr_ref).abs(),
                snr: e.snr,
            }),
            WindowOutcome::Suppressed { .. } => result.suppressed += 1,
            WindowOutcome::Failed(msg) => result.excluded.push(exclude(msg)),
        }
    }
    result
}

/// Evaluates every analysis window of every trace. Traces run in parallel;
/// rows keep input order.
pub fn evaluate(traces: &[TraceRecord], method: Method, cfg: &PipelineConfig) -> EvalResult {
    traces
        .par_iter()
        .map(|t| evaluate_trace(t, method, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(EvalResult::default(), EvalResult::merge)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub window_s: f64,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_windows: usize,
}

/// 2, 5, ..., 119 seconds.
pub fn default_sweep_grid() -> Vec<f64> {
    (2..=119).step_by(3).map(f64::from).collect()
}

/// 95% interval for a proportion: normal approximation, Wilson score below
/// ten trials. Clipped to `[0, 1]` and always containing the estimate.
pub fn proportion_ci(successes: usize, n: usize) -> (f64, f64) {
    const Z: f64 = 1.959_963_984_540_054;
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let (lo, hi) = if n < 10 {
        let z2 = Z * Z;
        let center = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
        let half = Z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / (1.0 + z2 / nf);
        (center - half, center + half)
    } else {
        let half = Z * (p * (1.0 - p) / nf).sqrt();
        (p - half, p + half)
    };
    (lo.clamp(0.0, p), hi.clamp(p, 1.0))
}

/// Success rate per window size, pooling the windows of all traces. Sizes
/// longer than every trace are skipped. Windows without a usable estimate
/// count as failures; windows without a reference are ignored.
pub fn window_sweep_pooled(
    traces: &[TraceRecord],
    sizes: &[f64],
    step_frac: f64,
    method: Method,
    cfg: &PipelineConfig,
) -> Vec<SweepRow> {
    sizes
        .iter()
        .filter_map(|&size| {
            let jobs: Vec<(&TraceRecord, f64, f64)> = traces
                .iter()
                .flat_map(|t| {
                    analysis_windows(t.duration, Some(size), step_frac)
                        .into_iter()
                        .map(move |(s, e)| (t, s, e))
                })
                .collect();
            let outcomes: Vec<Option<bool>> = jobs
                .par_iter()
                .map(|&(t, s, e)| {
                    let rr_ref = reference_rr(t, s, e, cfg)?;
                    let w = process_window(t, s, e, method, cfg, false);
                    Some(w.estimate().is_some_and(|est| {
                        (est.rate_bpm - rr_ref).abs() < SUCCESS_THRESHOLD_BPM
                    }))
                })
                .collect();
            let judged: Vec<bool> = outcomes.into_iter().flatten().collect();
            if judged.is_empty() {
                return None;
            }
            let hits = judged.iter().filter(|&&s| s).count();
            let (ci_low, ci_high) = proportion_ci(hits, judged.len());
            Some(SweepRow {
                window_s: size,
                success_rate: hits as f64 / judged.len() as f64,
                ci_low,
                ci_high,
                n_windows: judged.len(),
            })
        })
        .collect()
}

pub fn window_sweep(
    trace: &TraceRecord,
    sizes: &[f64],
    step_frac: f64,
    method: Method,
    cfg: &PipelineConfig,
) -> Vec<SweepRow> {
    window_sweep_pooled(std::slice::from_ref(trace), sizes, step_frac, method, cfg)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len().min(y.len());
    if n < 3 {
        return Err(Error::TooFewSamples { need: 3, got: n });
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x[..n].iter().zip(&y[..n]) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation of SNR against absolute error over rows with a
/// finite SNR.
pub fn snr_error_correlation(result: &EvalResult) -> Result<f64> {
    let (snr, err): (Vec<f64>, Vec<f64>) = result
        .rows
        .iter()
        .filter(|r| r.snr.is_finite())
        .map(|r| (r.snr, r.abs_err))
        .unzip();
    pearson(&snr, &err).map_err(|e| match e {
        Error::ZeroVariance("x") => Error::ZeroVariance("snr"),
        Error::ZeroVariance(_) => Error::ZeroVariance("abs_err"),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(activity: &str, est: f64, reference: f64, snr: f64) -> EvalRow {
        EvalRow {
            id: format!("{activity}-{est}"),
            activity: activity.into(),
            method: Method::Uwb,
            window_start: 0.0,
            window_end: 120.0,
            rr_est: est,
            rr_ref: reference,
            abs_err: (est - reference).abs(),
            snr,
        }
    }

    #[test]
    fn perfect_estimates() {
        let agg = aggregate(&[row("a", 15.0, 15.0, 2.0), row("a", 15.0, 15.0, 4.0)]);
        let all = agg.last().unwrap();
        assert_eq!((all.rmse, all.mape, all.success_rate), (0.0, 0.0, 1.0));
        assert_eq!(all.mean_snr, 3.0);
    }

    #[test]
    fn one_bpm_is_not_a_success() {
        let r = row("a", 11.0, 10.0, 1.0);
        assert!(!r.success());
        let all = aggregate(&[r]).pop().unwrap();
        assert!((all.mape - 10.0).abs() < 1e-12);
        assert_eq!(all.success_rate, 0.0);
    }

    #[test]
    fn half_and_one_and_a_half() {
        let rows = [row("a", 15.5, 15.0, 1.0), row("a", 16.5, 15.0, 1.0)];
        let all = aggregate(&rows).pop().unwrap();
        assert_eq!(all.success_rate, 0.5);
        assert!((all.rmse - ((0.25f64 + 2.25) / 2.0).sqrt()).abs() < 1e-12);
        assert!((all.rmse - 1.118).abs() < 1e-3);
    }

    #[test]
    fn per_activity_groups() {
        let rows = [row("walk", 15.0, 15.0, 1.0), row("sit", 12.0, 10.0, 1.0), row("walk", 16.0, 15.0, f64::INFINITY)];
        let agg = aggregate(&rows);
        let names: Vec<&str> = agg.iter().map(|a| a.activity.as_str()).collect();
        assert_eq!(names, vec!["sit", "walk", "all"]);
        assert_eq!(agg[1].n, 2);
        assert_eq!(agg[1].mean_snr, 1.0);
    }

    #[test]
    fn correlation_examples() {
        let rows = [row("a", 13.0, 10.0, 1.0), row("a", 12.0, 10.0, 2.0), row("a", 11.0, 10.0, 3.0)];
        let res = EvalResult { rows: rows.to_vec(), ..Default::default() };
        assert!((snr_error_correlation(&res).unwrap() + 1.0).abs() < 1e-12);
        let flat = EvalResult {
            rows: vec![row("a", 11.0, 10.0, 1.0), row("a", 11.0, 10.0, 2.0), row("a", 11.0, 10.0, 3.0)],
            ..Default::default()
        };
        assert!(matches!(snr_error_correlation(&flat), Err(Error::ZeroVariance("abs_err"))));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ci_bounds() {
        assert_eq!(proportion_ci(0, 0), (0.0, 1.0));
        let (lo, hi) = proportion_ci(5, 5);
        assert!(lo < 1.0 && hi == 1.0); // Wilson keeps width at p = 1
        let (lo, hi) = proportion_ci(50, 100);
        assert!((hi - lo - 2.0 * 1.959_963_984_540_054 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn grid_shape() {
        let g = default_sweep_grid();
        assert_eq!(g.first(), Some(&2.0));
        assert_eq!(g.last(), Some(&119.0));
        assert_eq!(g.len(), 40);
    }

    proptest! {
        #[test]
        fn merge_keeps_aggregates(errs in proptest::collection::vec((0.0f64..5.0, 0.1f64..10.0), 2..40), split in 0usize..40) {
            let rows: Vec<EvalRow> = errs
                .iter()
                .enumerate()
                .map(|(i, (e, s))| row(if i % 2 == 0 { "a" } else { "b" }, 15.0 + e, 15.0, *s))
                .collect();
            let k = split.min(rows.len());
            let whole = EvalResult { rows: rows.clone(), ..Default::default() };
            let left = EvalResult { rows: rows[..k].to_vec(), ..Default::default() };
            let right = EvalResult { rows: rows[k..].to_vec(), ..Default::default() };
            prop_assert_eq!(whole.aggregates(), left.merge(right).aggregates());
        }

        #[test]
        fn ci_contains_rate(hits in 0usize..200, extra in 0usize..200) {
            let n = hits + extra;
            let (lo, hi) = proportion_ci(hits, n);
            let p = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
            prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        }
    }
}
