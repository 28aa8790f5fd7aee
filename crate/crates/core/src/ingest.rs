//! Trace files: parsing, writing and reference resampling.
//!
//! Format v1 is line-oriented UTF-8 text:
//!
//! ```text
//! UWBTRACE 1
//! [meta]
//! id=s01-sitting
//! activity=sitting
//! reference_kind=spirometer      # spirometer | belt | none
//! duration=120
//! rr_true=15                     # optional, synthetic traces only
//! rate_drift=0                   # optional, bpm per minute
//! [cir]
//! counter,timestamp,re0,im0,re1,im1,...   # window_taps integer pairs
//! [accel]
//! timestamp,ax,ay,az                      # g
//! [ref]
//! timestamp,value
//! ```
//!
//! Blank lines and everything after `#` are ignored. Unknown meta keys are
//! kept verbatim in `TraceRecord::meta`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CirFrame, SamplingGeometry};

pub const FORMAT_MAGIC: &str = "UWBTRACE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Spirometer,
    Belt,
    #[default]
    None,
}

impl ReferenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceKind::Spirometer => "spirometer",
            ReferenceKind::Belt => "belt",
            ReferenceKind::None => "none",
        }
    }
}

impl std::str::FromStr for ReferenceKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "spirometer" => Ok(ReferenceKind::Spirometer),
            "belt" => Ok(ReferenceKind::Belt),
            "none" => Ok(ReferenceKind::None),
            other => Err(format!("unknown reference kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelSample {
    pub t: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSample {
    pub t: f64,
    pub value: f64,
}

/// Known respiration rate of a synthetic trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rr_bpm: f64,
    /// bpm per minute
    pub drift: f64,
}

impl GroundTruth {
    /// Mean rate over `[start, end)`. The rate is linear in time, so this is
    /// the rate at the midpoint.
    pub fn mean_rate(&self, start: f64, end: f64) -> f64 {
        self.rr_bpm + self.drift * (start + end) / 2.0 / 60.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub id: String,
    pub cir: Vec<CirFrame>,
    pub accel: Vec<AccelSample>,
    pub reference: Vec<RefSample>,
    pub reference_kind: ReferenceKind,
    pub activity_label: String,
    pub duration: f64,
    pub ground_truth: Option<GroundTruth>,
    /// Meta keys this module does not interpret.
    pub meta: BTreeMap<String, String>,
}

impl TraceRecord {
    pub fn frames_in(&self, start: f64, end: f64) -> &[CirFrame] {
        slice_by_time(&self.cir, start, end, |f| f.timestamp)
    }

    pub fn accel_in(&self, start: f64, end: f64) -> &[AccelSample] {
        slice_by_time(&self.accel, start, end, |s| s.t)
    }

    pub fn reference_in(&self, start: f64, end: f64) -> &[RefSample] {
        slice_by_time(&self.reference, start, end, |s| s.t)
    }
}

/// Contiguous run of time-sorted items with `start <= t < end`.
fn slice_by_time<T>(items: &[T], start: f64, end: f64, t: impl Fn(&T) -> f64) -> &[T] {
    let lo = items.partition_point(|x| t(x) < start);
    let hi = items.partition_point(|x| t(x) < end);
    &items[lo..hi.max(lo)]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    /// CIR lines read, duplicates included.
    pub frames_read: usize,
    pub duplicates_dropped: usize,
    /// Intervals (s) with missing frames or frame spacing outside tolerance.
    pub gaps: Vec<(f64, f64)>,
    /// Seconds by which the CIR timestamps outran (+) or lagged (-) the
    /// nominal counter clock over the trace.
    pub clock_skew_estimate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    /// Allowed relative deviation of the frame spacing from `1/rate`.
    pub jitter_tolerance: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            jitter_tolerance: 0.2,
        }
    }
}

pub fn parse_trace(path: impl AsRef<Path>, g: &SamplingGeometry) -> Result<(TraceRecord, IngestReport)> {
    let text = std::fs::read_to_string(path)?;
    parse_trace_str(&text, g, &IngestOptions::default())
}

#[derive(PartialEq, Clone, Copy)]
enum Section {
    Preamble,
    Meta,
    Cir,
    Accel,
    Ref,
}

pub fn parse_trace_str(
    text: &str,
    g: &SamplingGeometry,
    opts: &IngestOptions,
) -> Result<(TraceRecord, IngestReport)> {
    let mut section = Section::Preamble;
    let mut seen_header = false;
    let mut meta = BTreeMap::new();
    let mut raw_frames: Vec<CirFrame> = Vec::new();
    let mut accel = Vec::new();
    let mut reference = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if !seen_header {
            let mut parts = line.split_whitespace();
            let magic = parts.next();
            let version = parts.next().and_then(|v| v.parse::<u32>().ok());
            match (magic, version) {
                (Some(FORMAT_MAGIC), Some(FORMAT_VERSION)) => {}
                (Some(FORMAT_MAGIC), _) => return Err(Error::UnsupportedFormat(line.to_string())),
                _ => {
                    return Err(Error::UnsupportedFormat(format!(
                        "missing '{FORMAT_MAGIC} {FORMAT_VERSION}' header"
                    )))
                }
            }
            seen_header = true;
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[meta]" => Section::Meta,
                "[cir]" => Section::Cir,
                "[accel]" => Section::Accel,
                "[ref]" => Section::Ref,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unknown section {other}"),
                    })
                }
            };
            continue;
        }
        match section {
            Section::Preamble => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "data before any section".into(),
                })
            }
            Section::Meta => {
                let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: "expected key=value".into(),
                })?;
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
            Section::Cir => raw_frames.push(parse_cir_line(line, line_no, g.window_taps)?),
            Section::Accel => {
                let v = parse_floats(line, line_no, 4)?;
                accel.push(AccelSample {
                    t: v[0],
                    ax: v[1],
                    ay: v[2],
                    az: v[3],
                });
            }
            Section::Ref => {
                let v = parse_floats(line, line_no, 2)?;
                reference.push(RefSample { t: v[0], value: v[1] });
            }
        }
    }
    if !seen_header {
        return Err(Error::UnsupportedFormat("empty file".into()));
    }
    if raw_frames.is_empty() {
        return Err(Error::NoFrames);
    }

    let frames_read = raw_frames.len();
    let mut cir: Vec<CirFrame> = Vec::with_capacity(frames_read);
    let mut duplicates_dropped = 0;
    for f in raw_frames {
        match cir.last() {
            // keep the first occurrence of a counter; stale counters are
            // retransmissions of frames already kept
            Some(last) if f.counter <= last.counter => duplicates_dropped += 1,
            _ => cir.push(f),
        }
    }
    accel.sort_by(|a: &AccelSample, b| a.t.total_cmp(&b.t));
    reference.sort_by(|a: &RefSample, b| a.t.total_cmp(&b.t));

    let (gaps, clock_skew_estimate) = timing_report(&cir, g.slow_time_rate, opts.jitter_tolerance);

    let mut take = |k: &str| meta.remove(k);
    let id = take("id").unwrap_or_default();
    let activity_label = take("activity").unwrap_or_default();
    let reference_kind = match take("reference_kind") {
        Some(s) => s.parse().map_err(|msg| Error::Parse { line: 0, msg })?,
        None => ReferenceKind::None,
    };
    let meta_f64 = |v: Option<String>, key: &str| -> Result<Option<f64>> {
        v.map(|s| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("meta {key}: '{s}' is not a number"),
            })
        })
        .transpose()
    };
    let declared = meta_f64(take("duration"), "duration")?;
    let rr_true = meta_f64(take("rr_true"), "rr_true")?;
    let drift = meta_f64(take("rate_drift"), "rate_drift")?;

    let span = [
        cir.last().map(|f| f.timestamp),
        accel.last().map(|s| s.t),
        reference.last().map(|s| s.t),
    ]
    .into_iter()
    .flatten()
    .fold(0.0, f64::max);
    let duration = declared.unwrap_or(0.0).max(span);

    let record = TraceRecord {
        id,
        cir,
        accel,
        reference,
        reference_kind,
        activity_label,
        duration,
        ground_truth: rr_true.map(|rr_bpm| GroundTruth {
            rr_bpm,
            drift: drift.unwrap_or(0.0),
        }),
        meta,
    };
    let report = IngestReport {
        frames_read,
        duplicates_dropped,
        gaps,
        clock_skew_estimate,
    };
    Ok((record, report))
}

fn parse_cir_line(line: &str, line_no: usize, window_taps: usize) -> Result<CirFrame> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let bad = |msg: String| Error::Parse { line: line_no, msg };
    if fields.len() < 2 {
        return Err(bad("expected counter,timestamp,taps...".into()));
    }
    let counter = fields[0]
        .parse::<u64>()
        .map_err(|_| bad(format!("bad counter '{}'", fields[0])))?;
    let timestamp = fields[1]
        .parse::<f64>()
        .map_err(|_| bad(format!("bad timestamp '{}'", fields[1])))?;
    let values = &fields[2..];
    if !values.len().is_multiple_of(2) {
        return Err(bad(format!("odd number of tap values ({})", values.len())));
    }
    if values.len() / 2 != window_taps {
        return Err(Error::TapCount {
            line: line_no,
            expected: window_taps,
            found: values.len() / 2,
        });
    }
    let taps = values
        .chunks_exact(2)
        .map(|pair| {
            let re = pair[0].parse::<i64>();
            let im = pair[1].parse::<i64>();
            match (re, im) {
                (Ok(re), Ok(im)) => Ok(Complex64::new(re as f64, im as f64)),
                _ => Err(bad(format!("bad tap pair '{},{}'", pair[0], pair[1]))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CirFrame {
        counter,
        timestamp,
        taps,
    })
}

fn parse_floats(line: &str, line_no: usize, expected: usize) -> Result<Vec<f64>> {
    let v = line
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
    if v.len() != expected {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected {expected} fields, found {}", v.len()),
        });
    }
    Ok(v)
}

/// Gaps from missing counters and from spacings outside the jitter tolerance,
/// plus the drift of timestamps against the counter clock.
fn timing_report(cir: &[CirFrame], rate: f64, tolerance: f64) -> (Vec<(f64, f64)>, f64) {
    let period = 1.0 / rate;
    let mut gaps = Vec::new();
    for w in cir.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let steps = b.counter - a.counter;
        let dt = b.timestamp - a.timestamp;
        if steps > 1 {
            gaps.push((a.timestamp + period, b.timestamp));
        } else if (dt - period).abs() > tolerance * period {
            gaps.push((a.timestamp, b.timestamp));
        }
    }
    let skew = match (cir.first(), cir.last()) {
        (Some(f), Some(l)) => {
            (l.timestamp - f.timestamp) - (l.counter - f.counter) as f64 * period
        }
        _ => 0.0,
    };
    (gaps, skew)
}

/// Serializes a record in format v1. Tap values are rounded to integers.
pub fn write_trace(record: &TraceRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_MAGIC} {FORMAT_VERSION}");
    out.push_str("[meta]\n");
    let _ = writeln!(out, "id={}", record.id);
    let _ = writeln!(out, "activity={}", record.activity_label);
    let _ = writeln!(out, "reference_kind={}", record.reference_kind.as_str());
    let _ = writeln!(out, "duration={}", record.duration);
    if let Some(gt) = record.ground_truth {
        let _ = writeln!(out, "rr_true={}", gt.rr_bpm);
        let _ = writeln!(out, "rate_drift={}", gt.drift);
    }
    for (k, v) in &record.meta {
        let _ = writeln!(out, "{k}={v}");
    }
    out.push_str("[cir]\n");
    for f in &record.cir {
        let _ = write!(out, "{},{}", f.counter, f.timestamp);
        for t in &f.taps {
            let _ = write!(out, ",{},{}", t.re.round() as i64, t.im.round() as i64);
        }
        out.push('\n');
    }
    if !record.accel.is_empty() {
        out.push_str("[accel]\n");
        for s in &record.accel {
            let _ = writeln!(out, "{},{},{},{}", s.t, s.ax, s.ay, s.az);
        }
    }
    if !record.reference.is_empty() {
        out.push_str("[ref]\n");
        for s in &record.reference {
            let _ = writeln!(out, "{},{}", s.t, s.value);
        }
    }
    out
}

/// Uniformly sampled series.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    pub start: f64,
    pub rate: f64,
    pub values: Vec<f64>,
}

/// Linear interpolation onto `start + k / target_rate` for every `k` that
/// stays within the reference's time range.
pub fn resample_reference(reference: &[RefSample], target_rate: f64) -> Result<UniformSeries> {
    if reference.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: reference.len(),
        });
    }
    if !(target_rate > 0.0) {
        return Err(Error::config("target_rate > 0", format!("got {target_rate}")));
    }
    let start = reference[0].t;
    let end = reference[reference.len() - 1].t;
    let count = ((end - start) * target_rate + 1e-9).floor() as usize + 1;
    let mut values = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let t = start + k as f64 / target_rate;
        while seg + 2 < reference.len() && reference[seg + 1].t <= t {
            seg += 1;
        }
        let (a, b) = (reference[seg], reference[seg + 1]);
        let span = b.t - a.t;
        let v = if span > 0.0 {
            let frac = ((t - a.t) / span).clamp(0.0, 1.0);
            a.value + frac * (b.value - a.value)
        } else {
            b.value
        };
        values.push(v);
    }
    Ok(UniformSeries {
        start,
        rate: target_rate,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_geometry() -> SamplingGeometry {
        SamplingGeometry {
            window_taps: 2,
            ..Default::default()
        }
    }

    fn trace_with_counters(counters: &[u64]) -> String {
        let mut s = String::from("UWBTRACE 1\n[meta]\nid=t\n[cir]\n");
        for &c in counters {
            let t = (c - 1) as f64 / 32.0;
            s.push_str(&format!("{c},{t},1,0,{c},0\n"));
        }
        s
    }

    #[test]
    fn duplicate_counters_keep_first() {
        let text = trace_with_counters(&[1, 2, 2, 3]);
        let (rec, rep) = parse_trace_str(&text, &small_geometry(), &IngestOptions::default()).unwrap();
        let counters: Vec<u64> = rec.cir.iter().map(|f| f.counter).collect();
        assert_eq!(counters, vec![1, 2, 3]);
        assert_eq!(rep.frames_read, 4);
        assert_eq!(rep.duplicates_dropped, 1);
        assert!(rep.gaps.is_empty());
    }

    #[test]
    fn missing_counters_become_a_gap() {
        let text = trace_with_counters(&[1, 2, 5, 6]);
        let (_, rep) = parse_trace_str(&text, &small_geometry(), &IngestOptions::default()).unwrap();
        assert_eq!(rep.gaps.len(), 1);
        let (a, b) = rep.gaps[0];
        // counters 3 and 4 missing: (5 - 2 - 1) frames at 32 Hz
        assert!((b - a - 2.0 / 32.0).abs() < 1e-12);
    }

    #[test]
    fn late_frame_is_reported() {
        let text = "UWBTRACE 1\n[cir]\n1,0,1,0,1,0\n2,0.03125,1,0,1,0\n3,0.1,1,0,1,0\n";
        let (_, rep) = parse_trace_str(text, &small_geometry(), &IngestOptions::default()).unwrap();
        assert_eq!(rep.gaps, vec![(0.03125, 0.1)]);
        assert!((rep.clock_skew_estimate - (0.1 - 2.0 / 32.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_cir_section() {
        let text = "UWBTRACE 1\n[meta]\nid=x\n[cir]\n";
        assert!(matches!(
            parse_trace_str(text, &small_geometry(), &IngestOptions::default()),
            Err(Error::NoFrames)
        ));
    }

    #[test]
    fn tap_count_mismatch_names_both() {
        let text = "UWBTRACE 1\n[cir]\n1,0,1,0,1,0,1,0\n";
        match parse_trace_str(text, &small_geometry(), &IngestOptions::default()) {
            Err(Error::TapCount {
                line,
                expected,
                found,
            }) => assert_eq!((line, expected, found), (3, 2, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "UWBTRACE 1\n[cir]\n1,0,1,0,1,0\n2,zz,1,0,1,0\n";
        match parse_trace_str(text, &small_geometry(), &IngestOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let text = "UWBTRACE 1\n[cir]\n1,0,1.5,0,1,0\n";
        assert!(matches!(
            parse_trace_str(text, &small_geometry(), &IngestOptions::default()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn version_is_checked() {
        let g = small_geometry();
        let o = IngestOptions::default();
        assert!(matches!(
            parse_trace_str("UWBTRACE 2\n[cir]\n", &g, &o),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(parse_trace_str("", &g, &o), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn meta_and_streams() {
        let text = "UWBTRACE 1 # comment\n[meta]\nid=abc\nactivity=walking\nreference_kind=belt\nduration=3\nrr_true=12\nsite=lab\n\
[cir]\n0,0,3,4,0,0\n[accel]\n0.5,0,0,1\n0,0,0,1\n[ref]\n0,1\n1,2\n";
        let (rec, _) = parse_trace_str(text, &small_geometry(), &IngestOptions::default()).unwrap();
        assert_eq!(rec.id, "abc");
        assert_eq!(rec.activity_label, "walking");
        assert_eq!(rec.reference_kind, ReferenceKind::Belt);
        assert_eq!(rec.duration, 3.0);
        assert_eq!(rec.ground_truth.unwrap().rr_bpm, 12.0);
        assert_eq!(rec.meta.get("site").map(String::as_str), Some("lab"));
        assert_eq!(rec.cir[0].taps[0], Complex64::new(3.0, 4.0));
        assert_eq!(rec.accel[0].t, 0.0); // sorted
        assert_eq!(rec.reference.len(), 2);
    }

    #[test]
    fn write_then_parse_is_identity_for_integer_taps() {
        let text = "UWBTRACE 1\n[meta]\nid=abc\nactivity=sit\nreference_kind=spirometer\nduration=1.5\nrr_true=15\nrate_drift=0.5\n\
[cir]\n0,0,3,-4,0,7\n1,0.03125,1,1,2,2\n[ref]\n0,0.25\n1.5,1\n";
        let g = small_geometry();
        let (rec, _) = parse_trace_str(text, &g, &IngestOptions::default()).unwrap();
        let written = write_trace(&rec);
        let (again, _) = parse_trace_str(&written, &g, &IngestOptions::default()).unwrap();
        assert_eq!(rec, again);
        assert_eq!(written, write_trace(&again));
    }

    #[test]
    fn resample_linear_ramp() {
        let r = [RefSample { t: 0.0, value: 0.0 }, RefSample { t: 1.0, value: 1.0 }];
        let s = resample_reference(&r, 4.0).unwrap();
        assert_eq!(s.values, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn resample_constant() {
        let r: Vec<RefSample> = (0..50).map(|i| RefSample { t: i as f64 * 0.02, value: 3.0 }).collect();
        for rate in [1.0, 7.0, 32.0, 1000.0] {
            assert!(resample_reference(&r, rate).unwrap().values.iter().all(|&v| v == 3.0));
        }
    }

    #[test]
    fn resample_needs_two_samples() {
        assert!(resample_reference(&[RefSample { t: 0.0, value: 1.0 }], 4.0).is_err());
    }

    #[test]
    fn resampled_belt_keeps_its_peak() {
        use crate::model::BandConfig;
        use crate::spectral::{estimate_rr, periodogram};
        let r: Vec<RefSample> = (0..240_000)
            .map(|i| {
                let t = i as f64 / 2000.0;
                RefSample { t, value: (2.0 * std::f64::consts::PI * 0.25 * t).sin() }
            })
            .collect();
        let band = BandConfig::default();
        let original: Vec<f64> = r.iter().map(|s| s.value).collect();
        let f_orig = estimate_rr(&periodogram(&original, 2000.0).unwrap(), &band)
            .unwrap()
            .peak_frequency;
        let s = resample_reference(&r, 32.0).unwrap();
        let f_res = estimate_rr(&periodogram(&s.values[..3840], 32.0).unwrap(), &band)
            .unwrap()
            .peak_frequency;
        assert_eq!(f_orig, 0.25);
        assert_eq!(f_res, 0.25);
    }

    #[test]
    fn time_slicing() {
        let text = trace_with_counters(&[1, 2, 3, 4, 5]);
        let (rec, _) = parse_trace_str(&text, &small_geometry(), &IngestOptions::default()).unwrap();
        let w = rec.frames_in(1.0 / 32.0, 3.0 / 32.0);
        assert_eq!(w.iter().map(|f| f.counter).collect::<Vec<_>>(), vec![2, 3]);
        assert!(rec.frames_in(5.0, 1.0).is_empty());
    }

    #[test]
    fn parsing_is_deterministic() {
        let text = trace_with_counters(&[1, 2, 2, 5, 6, 7]);
        let g = small_geometry();
        let a = parse_trace_str(&text, &g, &IngestOptions::default()).unwrap();
        let b = parse_trace_str(&text, &g, &IngestOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
