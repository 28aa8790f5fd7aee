//! Simulator-to-metrics runs through the public library API.

use uwb_rr::eval::{evaluate, EvalResult};
use uwb_rr::ingest::{parse_trace, parse_trace_str, IngestOptions};
use uwb_rr::simulator::Reflection;
use uwb_rr::{process_trace, simulate, write_trace, Method, PipelineConfig, SimScenario};

fn clean() -> SimScenario {
    SimScenario {
        noise_std: 0.0,
        direct_path_jitter_std: 0.0,
        ..Default::default()
    }
}

#[test]
fn clean_trace_recovers_exact_rate() {
    let cfg = PipelineConfig::default();
    let t = simulate(&clean(), &cfg.geometry, 0).unwrap();
    let r = process_trace(&t, Method::Uwb, &cfg, false);
    assert_eq!(r[0].estimate().unwrap().rate_bpm, 15.0);
}

#[test]
fn clean_trace_survives_the_file_format() {
    let cfg = PipelineConfig::default();
    let t = simulate(&clean(), &cfg.geometry, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clean.trace");
    std::fs::write(&path, write_trace(&t)).unwrap();
    let (back, report) = parse_trace(&path, &cfg.geometry).unwrap();
    assert_eq!(report.duplicates_dropped, 0);
    assert!(report.gaps.is_empty());
    assert_eq!(back.cir.len(), t.cir.len());
    assert_eq!(back.ground_truth, t.ground_truth);
    let r = process_trace(&back, Method::Uwb, &cfg, false);
    assert_eq!(r[0].estimate().unwrap().rate_bpm, 15.0);
}

#[test]
fn no_modulation_means_low_snr() {
    let cfg = PipelineConfig::default();
    let s = SimScenario {
        reflections: vec![Reflection {
            tap: 40,
            base_magnitude: 500.0,
            depth: 0.0,
            phase: 0.0,
        }],
        ..Default::default()
    };
    let mut snrs: Vec<f64> = (0..50)
        .map(|seed| {
            let t = simulate(&s, &cfg.geometry, seed).unwrap();
            process_trace(&t, Method::Uwb, &cfg, false)[0].estimate().unwrap().snr
        })
        .collect();
    snrs.sort_by(f64::total_cmp);
    let median = (snrs[24] + snrs[25]) / 2.0;
    assert!(median < 0.1, "median snr {median}");
}

#[test]
fn other_rates_are_recovered() {
    let cfg = PipelineConfig::default();
    for rr in [8.0, 12.0, 20.0, 30.0, 40.0] {
        let s = SimScenario { rr_true: rr, ..Default::default() };
        let t = simulate(&s, &cfg.geometry, 3).unwrap();
        for m in [Method::Uwb, Method::Rahman, Method::Bates] {
            let e = process_trace(&t, m, &cfg, false)[0].estimate().unwrap().rate_bpm;
            assert!((e - rr).abs() <= 0.5, "{m} at {rr}: {e}");
        }
    }
}

#[test]
fn motion_gate_suppresses_bates_only() {
    let mut cfg = PipelineConfig::default();
    cfg.analysis.window_s = Some(30.0);
    cfg.analysis.hop_fraction = 1.0;
    let s = SimScenario {
        motion_events: vec![uwb_rr::simulator::MotionEvent {
            start: 0.0,
            end: 120.0,
            amplitude: 2000.0,
        }],
        ..Default::default()
    };
    let t = simulate(&s, &cfg.geometry, 1).unwrap();
    let bates = evaluate(std::slice::from_ref(&t), Method::Bates, &cfg);
    assert_eq!(bates.suppressed, 4);
    assert!(bates.rows.is_empty());
    let uwb = evaluate(std::slice::from_ref(&t), Method::Uwb, &cfg);
    assert_eq!(uwb.suppressed, 0);
    assert_eq!(uwb.rows.len(), 4);
}

#[test]
fn batches_merge_to_the_same_aggregates() {
    let mut cfg = PipelineConfig::default();
    cfg.analysis.window_s = Some(40.0);
    let traces: Vec<_> = (0..6)
        .map(|seed| {
            let mut s = SimScenario {
                noise_std: 150.0 + 50.0 * seed as f64,
                ..Default::default()
            };
            s.activity = if seed % 2 == 0 { "sit".into() } else { "walk".into() };
            simulate(&s, &cfg.geometry, seed).unwrap()
        })
        .collect();
    let whole = evaluate(&traces, Method::Uwb, &cfg);
    let merged: EvalResult = evaluate(&traces[..2], Method::Uwb, &cfg).merge(evaluate(&traces[2..], Method::Uwb, &cfg));
    assert_eq!(whole.aggregates(), merged.aggregates());
    assert_eq!(whole, evaluate(&traces, Method::Uwb, &cfg));
    let names: Vec<String> = whole.aggregates().into_iter().map(|a| a.activity).collect();
    assert_eq!(names, ["sit", "walk", "all"]);
}

#[test]
fn dropped_and_repeated_frames_are_tolerated() {
    let cfg = PipelineConfig::default();
    let t = simulate(&clean(), &cfg.geometry, 2).unwrap();
    let text = write_trace(&t);
    let mut lines: Vec<&str> = text.lines().collect();
    let cir_start = lines.iter().position(|l| *l == "[cir]").unwrap() + 1;
    let repeated = lines[cir_start + 100];
    lines.remove(cir_start + 500);
    lines.insert(cir_start + 101, repeated);
    let edited = lines.join("\n");
    let (back, report) = parse_trace_str(&edited, &cfg.geometry, &IngestOptions::default()).unwrap();
    assert_eq!(report.duplicates_dropped, 1);
    assert_eq!(report.gaps.len(), 1);
    assert_eq!(back.cir.len(), t.cir.len() - 1);
    // one frame short of an exact 0.25 Hz bin
    let r = process_trace(&back, Method::Uwb, &cfg, false);
    assert!((r[0].estimate().unwrap().rate_bpm - 15.0).abs() < 0.5);
}
