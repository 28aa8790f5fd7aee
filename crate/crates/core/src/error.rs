use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration invariant does not hold. `invariant` names it.
    #[error("invalid configuration: {invariant} ({detail})")]
    InvalidConfig {
        invariant: &'static str,
        detail: String,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: expected {expected} taps, found {found}")]
    TapCount {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("unsupported trace format: {0}")]
    UnsupportedFormat(String),

    #[error("no frames")]
    NoFrames,

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("degenerate direct path")]
    DegenerateDirectPath,

    #[error("band unresolvable at this window length ({samples} samples at {rate} Hz)")]
    BandUnresolvable { samples: usize, rate: f64 },

    #[error("degenerate window")]
    DegenerateWindow,

    #[error("no spectral bins inside {f_low}-{f_high} Hz")]
    NoBinsInBand { f_low: f64, f_high: f64 },

    #[error("analysis window too short: {have:.2} s < {need:.2} s")]
    WindowTooShort { have: f64, need: f64 },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("config: {0}")]
    ConfigSyntax(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(invariant: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidConfig {
            invariant,
            detail: detail.into(),
        }
    }
}
