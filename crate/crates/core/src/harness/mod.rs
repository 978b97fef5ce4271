//! Configuration loading, figure presets, parallel sweeps, result files and
//! calibration.

mod calibrate;
mod emit;
mod sweep;

pub use calibrate::{
    calibrate, reference_anchors, Anchor, AnchorResult, CalibrationOptions, CalibrationReport, FreeParameter,
};
pub use emit::{emit_results, gnuplot_script, to_csv, CSV_HEADER};
pub use sweep::{run_seed, run_sweep, SweepAxis, SweepRow, SweepSpec, SweepTable};

use std::path::Path;

use crate::config::SimConfig;
use crate::error::Result;

/// A validated configuration together with its fully resolved TOML echo.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: SimConfig,
    /// Every key, defaults included, as it will be used.
    pub echo: String,
}

impl LoadedConfig {
    pub fn from_config(config: SimConfig) -> Result<Self> {
        let echo = config.resolved()?.to_toml_string();
        Ok(Self { config, echo })
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)?;
    LoadedConfig::from_config(SimConfig::from_toml_str(&text)?)
}
