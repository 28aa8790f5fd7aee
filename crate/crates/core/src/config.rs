//! Pipeline configuration, loadable from TOML. Every field has a default, so
//! an empty file is a valid configuration.
//!
//! ```toml
//! [geometry]
//! extraction_offset = 720
//! window_taps = 100
//! slow_time_rate = 32.0
//!
//! [band]
//! f_low = 0.1
//! f_high = 0.7
//! snr_band_width = 6.0
//!
//! [calibration]
//! half_window = 3
//! domain = "magnitude"        # or "complex"
//!
//! [alignment]
//! enabled = true
//! search_radius = 8
//!
//! [fusion]
//! remove_mean = true
//! regularization = 1e-9
//!
//! [spectral]
//! taper = "none"              # or "hann"
//! zero_pad = 1
//!
//! [analysis]
//! window_s = 30.0             # omit to analyse each trace as one window
//! hop_fraction = 0.1
//! jitter_tolerance = 0.2
//!
//! [baselines]
//! motion_threshold = 0.05
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::model::{validate_geometry, BandConfig, SamplingGeometry};
use crate::preprocess::{AlignmentConfig, CalibrationConfig};
use crate::spectral::SpectralConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Window length in seconds; `None` analyses the whole trace at once.
    pub window_s: Option<f64>,
    /// Hop between windows as a fraction of the window length.
    pub hop_fraction: f64,
    pub jitter_tolerance: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_s: None,
            hop_fraction: 0.1,
            jitter_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub geometry: SamplingGeometry,
    pub band: BandConfig,
    pub calibration: CalibrationConfig,
    pub alignment: AlignmentConfig,
    pub fusion: FusionConfig,
    pub spectral: SpectralConfig,
    pub analysis: AnalysisConfig,
    pub baselines: BaselineConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigSyntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        validate_geometry(&self.geometry, &self.band, &self.calibration)?;
        self.band.validate(self.geometry.slow_time_rate)?;
        if let Some(w) = self.analysis.window_s {
            if !(w > 0.0) {
                return Err(Error::config("window_s > 0", format!("got {w}")));
            }
        }
        if !(self.analysis.hop_fraction > 0.0) {
            return Err(Error::config(
                "hop_fraction > 0",
                format!("got {}", self.analysis.hop_fraction),
            ));
        }
        if !(self.fusion.regularization >= 0.0) {
            return Err(Error::config(
                "regularization >= 0",
                format!("got {}", self.fusion.regularization),
            ));
        }
        if self.spectral.zero_pad == 0 {
            return Err(Error::config("zero_pad >= 1", "got 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.calibration.half_window, 3);
        assert_eq!(cfg.alignment.search_radius, 8);
        assert_eq!(cfg.band.f_low, 0.1);
    }

    #[test]
    fn partial_override() {
        let cfg = PipelineConfig::from_toml_str(
            "[band]\nf_high = 0.6\n[alignment]\nenabled = false\n[analysis]\nwindow_s = 30.0\n",
        )
        .unwrap();
        assert_eq!(cfg.band.f_high, 0.6);
        assert_eq!(cfg.band.f_low, 0.1);
        assert!(!cfg.alignment.enabled);
        assert_eq!(cfg.analysis.window_s, Some(30.0));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(PipelineConfig::from_toml_str("[geometry]\nextraction_offset = 950\n").is_err());
        assert!(PipelineConfig::from_toml_str("[geometry]\nslow_time_rate = 1.0\n").is_err());
        assert!(PipelineConfig::from_toml_str("[band]\nf_low = 0.0\n").is_err());
        assert!(PipelineConfig::from_toml_str("[band\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.analysis.window_s = Some(45.0);
        cfg.spectral.taper = crate::spectral::Taper::Hann;
        let again = PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
    }
}
