//! Respiratory-rate estimation from the channel impulse response of a
//! chest-worn UWB radar.
//!
//! The processing chain is: [`ingest`] a trace, take CIR magnitudes and
//! [`preprocess`] them (per-frame calibration, direct-path alignment), [`fusion`]
//! collapses the taps into one series by maximising its in-band energy
//! fraction, and [`spectral`] picks the breathing peak and its SNR. The
//! accelerometer [`baselines`], the [`simulator`] and the [`eval`] harness
//! sit around that chain.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod ingest;
pub mod model;
pub mod output;
pub mod pipeline;
pub mod preprocess;
pub mod simulator;
pub mod spectral;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use ingest::{parse_trace, write_trace, TraceRecord};
pub use model::{BandConfig, CirFrame, CirMatrix, RrEstimate, SamplingGeometry};
pub use pipeline::{process_trace, Method};
pub use simulator::{simulate, SimScenario};
