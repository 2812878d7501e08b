//! Measurement harness: browser drivers, resource monitors, the two-phase
//! probe and sequential campaigns.

pub mod bench;
pub mod campaign;
pub mod cdp;
pub mod config;
pub mod driver;
pub mod mock;
pub mod monitors;
pub mod network;
pub mod probe;
pub mod target;

pub use bench::{BenchError, Calibration};
pub use campaign::{load_campaign, run_campaign, CampaignSink};
pub use cdp::{CdpDriver, LaunchSpec};
pub use config::HarnessConfig;
pub use driver::{BrowserDriver, DriverError, PageLoad, StoredState};
pub use mock::{MockBrowser, MockOptions};
pub use monitors::{build_monitors, Monitor, MonitorError, MonitorSettings};
pub use network::{NetworkCapture, NetworkLog};
pub use probe::{purge_and_verify, run_probe, HarnessError, ProbeConfig};
pub use target::ResourceTarget;
