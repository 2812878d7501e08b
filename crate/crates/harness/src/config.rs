//! Harness config file: probe template, monitor sources and calibration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::monitors::MonitorSettings;
use crate::probe::{HarnessError, ProbeConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub probe: ProbeConfig,
    pub monitors: MonitorSettings,
    /// Interference baselines written by calibration.
    pub calibration_file: Option<PathBuf>,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
