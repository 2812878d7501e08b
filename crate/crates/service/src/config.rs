use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerPageConfig {
    pub workers: u32,
    /// Idle fraction of each 100 ms slice.
    pub throttle: f64,
    /// Payload size of every PoW frame in both directions, bytes.
    pub frame_size: usize,
    /// Seconds between shares.
    pub share_interval: f64,
    /// When set, miners submit one share per this many hashes instead of
    /// on a timer.
    pub hashes_per_share: Option<u64>,
}

impl Default for MinerPageConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            throttle: 0.0,
            frame_size: 186,
            share_interval: 1.0,
            hashes_per_share: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdPageConfig {
    pub slot_count: u32,
    /// Body size of each ad resource, bytes.
    pub resource_size: usize,
}

impl Default for AdPageConfig {
    fn default() -> Self {
        Self {
            slot_count: 3,
            resource_size: 2233,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlPageConfig {
    /// Exact size of the control page, bytes.
    pub page_size: usize,
}

impl Default for ControlPageConfig {
    fn default() -> Self {
        Self { page_size: 4096 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub host: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    pub miner: MinerPageConfig,
    pub ads: AdPageConfig,
    pub control: ControlPageConfig,
    /// Directory holding the compiled in-browser scripts, served under
    /// `/lib/`. Without it a placeholder script is served.
    pub assets_dir: Option<PathBuf>,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            miner: MinerPageConfig::default(),
            ads: AdPageConfig::default(),
            control: ControlPageConfig::default(),
            assets_dir: None,
        }
    }
}

impl FixtureConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let config: Self =
            toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn listen_addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        validate_miner(&self.miner)?;
        if self.control.page_size < crate::pages::MIN_CONTROL_PAGE {
            return Err(ServiceError::Config(format!(
                "control.page_size must be at least {} bytes",
                crate::pages::MIN_CONTROL_PAGE
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_miner(m: &MinerPageConfig) -> Result<(), ServiceError> {
    if !(0.0..=1.0).contains(&m.throttle) {
        return Err(ServiceError::Config(format!(
            "miner.throttle must lie in [0, 1], got {}",
            m.throttle
        )));
    }
    if !(m.share_interval.is_finite() && m.share_interval > 0.0) {
        return Err(ServiceError::Config(format!(
            "miner.share_interval must be positive, got {}",
            m.share_interval
        )));
    }
    if m.hashes_per_share == Some(0) {
        return Err(ServiceError::Config("miner.hashes_per_share must be positive".into()));
    }
    Ok(())
}
