#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use uwb_rr::eval::{default_sweep_grid, evaluate, snr_error_correlation, window_sweep_pooled};
use uwb_rr::ingest::{parse_trace_str, write_trace, IngestOptions};
use uwb_rr::output::{self, Correlation, EstimateRecord, Format};
use uwb_rr::pipeline::{process_trace, Method};
use uwb_rr::simulator::{simulate, SimScenario};
use uwb_rr::{PipelineConfig, TraceRecord};

#[derive(Parser)]
#[command(name = "uwb-rr", version, about = "Respiratory rate from wearable UWB radar traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the respiratory rate of one trace, window by window.
    Process(ProcessArgs),
    /// Score estimates against the reference over a set of traces.
    Evaluate(EvalArgs),
    /// Success rate as a function of window length.
    Sweep(SweepArgs),
    /// Write a synthetic trace.
    Simulate(SimulateArgs),
    /// Pearson correlation between SNR and absolute error.
    Correlate(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// TOML pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "uwb")]
    method: Method,
    /// Lower band edge, Hz.
    #[arg(long)]
    band_low: Option<f64>,
    /// Upper band edge, Hz.
    #[arg(long)]
    band_high: Option<f64>,
    /// Analysis window, seconds. Default: the whole trace.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Output file. Default: stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(f) = self.band_low {
            cfg.band.f_low = f;
        }
        if let Some(f) = self.band_high {
            cfg.band.f_high = f;
        }
        if self.window.is_some() {
            cfg.analysis.window_s = self.window;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn format(&self) -> Format {
        match self.format {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }

    fn out(&self) -> Result<Box<dyn Write>> {
        sink(self.out.as_deref())
    }
}

/// Traces from files and/or generated from a scenario.
#[derive(Args)]
struct TraceSource {
    /// Trace files.
    #[arg(long = "trace", num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Scenario TOML; simulated traces are added to the set.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// First simulation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of simulated traces (seeds `seed..seed+count`).
    #[arg(long, default_value_t = 1)]
    count: u64,
}

impl TraceSource {
    fn load(&self, cfg: &PipelineConfig) -> Result<Vec<TraceRecord>> {
        let mut out = Vec::new();
        for p in &self.traces {
            out.push(read_trace(p, cfg)?);
        }
        if let Some(p) = &self.scenario {
            let scenario = load_scenario(Some(p))?;
            for seed in self.seed..self.seed + self.count {
                let mut t = simulate(&scenario, &cfg.geometry, seed)?;
                t.id = format!("{}-{seed}", t.id);
                out.push(t);
            }
        }
        if out.is_empty() {
            bail!("no traces given (use --trace and/or --scenario)");
        }
        Ok(out)
    }
}

#[derive(Args)]
struct ProcessArgs {
    /// Trace file.
    trace: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Export an intermediate matrix: magnitude, calibrated or aligned.
    #[arg(long)]
    dump_stage: Option<String>,
    /// Destination of --dump-stage. Default: <stage>.csv
    #[arg(long)]
    dump_stage_out: Option<PathBuf>,
    /// Write the fused-series spectrum of every window.
    #[arg(long)]
    dump_spectrum: Option<PathBuf>,
    /// Write the fusion weights of every window with tap depths.
    #[arg(long)]
    dump_weights: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: TraceSource,
    #[command(flatten)]
    common: Common,
    /// Also write the per-window rows here.
    #[arg(long)]
    rows: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: TraceSource,
    #[command(flatten)]
    common: Common,
    /// Window sizes in seconds, comma separated. Default: 2, 5, ..., 119.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<f64>,
    /// Hop as a fraction of the window length.
    #[arg(long, default_value_t = 0.1)]
    step: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML. Default: built-in scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pipeline configuration providing the sampling geometry.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace file. Default: stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_trace(path: &Path, cfg: &PipelineConfig) -> Result<TraceRecord> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let opts = IngestOptions {
        jitter_tolerance: cfg.analysis.jitter_tolerance,
    };
    let (trace, report) =
        parse_trace_str(&text, &cfg.geometry, &opts).with_context(|| format!("parsing {}", path.display()))?;
    if report.duplicates_dropped > 0 || !report.gaps.is_empty() {
        eprintln!(
            "{}: {} duplicate frames dropped, {} gaps, clock skew {:.6} s",
            path.display(),
            report.duplicates_dropped,
            report.gaps.len(),
            report.clock_skew_estimate
        );
    }
    Ok(trace)
}

fn load_scenario(path: Option<&Path>) -> Result<SimScenario> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(SimScenario::from_toml_str(&text)?)
        }
        None => Ok(SimScenario::default()),
    }
}

fn run_process(a: &ProcessArgs) -> Result<()> {
    let cfg = a.common.config()?;
    let trace = read_trace(&a.trace, &cfg)?;
    let wants_detail = a.dump_stage.is_some() || a.dump_spectrum.is_some() || a.dump_weights.is_some();
    if wants_detail && a.common.method != Method::Uwb {
        bail!("--dump-stage, --dump-spectrum and --dump-weights need --method uwb");
    }
    if let Some(stage) = &a.dump_stage {
        if !["magnitude", "calibrated", "aligned"].contains(&stage.as_str()) {
            bail!("unknown stage '{stage}' (magnitude, calibrated, aligned)");
        }
    }
    let results = process_trace(&trace, a.common.method, &cfg, wants_detail);
    let format = a.common.format();

    let records: Vec<EstimateRecord> = results.iter().map(|w| EstimateRecord::new(&trace.id, w)).collect();
    let mut out = a.common.out()?;
    output::write_estimates(&mut out, &records, format)?;
    out.flush()?;

    let details = || results.iter().enumerate().filter_map(|(i, w)| w.detail.as_deref().map(|d| (i, d)));
    if let Some(stage) = &a.dump_stage {
        let rows: Vec<_> = details()
            .flat_map(|(i, d)| output::stage_rows(i, d.preprocessed.stage(stage).expect("stage checked")))
            .collect();
        let path = a.dump_stage_out.clone().unwrap_or_else(|| PathBuf::from(format!("{stage}.csv")));
        let mut w = sink(Some(&path))?;
        output::write_stage(&mut w, &rows, format)?;
        w.flush()?;
    }
    if let Some(path) = &a.dump_spectrum {
        let pts: Vec<_> = details()
            .flat_map(|(i, d)| output::spectrum_points(i, &d.estimate.spectrum))
            .collect();
        let mut w = sink(Some(path))?;
        output::write_spectrum(&mut w, &pts, format)?;
        w.flush()?;
    }
    if let Some(path) = &a.dump_weights {
        let pts: Vec<_> = details()
            .flat_map(|(i, d)| output::weight_points(i, &d.fusion.w_opt, d.preprocessed.output(), &cfg.geometry))
            .collect();
        let mut w = sink(Some(path))?;
        output::write_weights(&mut w, &pts, format)?;
        w.flush()?;
    }
    Ok(())
}

fn run_evaluate(a: &EvalArgs) -> Result<()> {
    let cfg = a.common.config()?;
    let traces = a.source.load(&cfg)?;
    let result = evaluate(&traces, a.common.method, &cfg);
    if !result.excluded.is_empty() || result.suppressed > 0 {
        eprintln!(
            "{} windows excluded, {} suppressed by the motion gate",
            result.excluded.len(),
            result.suppressed
        );
    }
    let format = a.common.format();
    let mut out = a.common.out()?;
    output::write_aggregates(&mut out, &result.aggregates(), format)?;
    out.flush()?;
    if let Some(p) = &a.rows {
        let mut w = sink(Some(p))?;
        output::write_eval_rows(&mut w, &result.rows, format)?;
        w.flush()?;
    }
    Ok(())
}

fn run_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = a.common.config()?;
    let traces = a.source.load(&cfg)?;
    let sizes = if a.sizes.is_empty() { default_sweep_grid() } else { a.sizes.clone() };
    if !(a.step > 0.0) {
        bail!("--step must be positive");
    }
    let rows = window_sweep_pooled(&traces, &sizes, a.step, a.common.method, &cfg);
    let mut out = a.common.out()?;
    output::write_sweep(&mut out, &rows, a.common.format())?;
    out.flush()?;
    Ok(())
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let scenario = load_scenario(a.scenario.as_deref())?;
    let trace = simulate(&scenario, &cfg.geometry, a.seed)?;
    let mut out = sink(a.out.as_deref())?;
    out.write_all(write_trace(&trace).as_bytes())?;
    out.flush()?;
    Ok(())
}

fn run_correlate(a: &EvalArgs) -> Result<()> {
    let cfg = a.common.config()?;
    let traces = a.source.load(&cfg)?;
    let result = evaluate(&traces, a.common.method, &cfg);
    let pearson = snr_error_correlation(&result)?;
    let n = result.rows.iter().filter(|r| r.snr.is_finite()).count();
    let mut out = a.common.out()?;
    output::write_correlation(&mut out, &Correlation { n, pearson }, a.common.format())?;
    out.flush()?;
    if let Some(p) = &a.rows {
        let mut w = sink(Some(p))?;
        output::write_eval_rows(&mut w, &result.rows, a.common.format())?;
        w.flush()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Process(a) => run_process(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Correlate(a) => run_correlate(a),
    }
}
