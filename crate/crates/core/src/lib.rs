//! Measurement and modeling primitives for comparing the user-side cost and
//! publisher revenue of miner-supported and ad-supported web pages.

pub mod manifest;
pub mod pow;
pub mod profit;
pub mod record;
pub mod scenario;
pub mod signatures;
pub mod stats;
pub mod traffic;
pub mod wire;

pub use profit::{AdRateModel, MiningRateModel, ModelError, Strategy, TrafficModel, VisitorProfile};
pub use record::{ProbeResult, ProbeStatus, RequestRecord, SampleSeries, WsFrameRecord};
pub use signatures::{Blacklist, Category, DetectionReport, PageSnapshot, SignatureEntry};
pub use stats::{ComparisonRow, PercentileTable};
pub use traffic::TrafficSummary;
