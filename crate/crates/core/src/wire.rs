//! JSON bodies of the service API.

use serde::{Deserialize, Serialize};

use crate::profit::{AdRateModel, MiningRateModel, Strategy, TrafficModel, VisitorProfile};
use crate::record::{RequestRecord, WsFrameRecord};
use crate::signatures::{Blacklist, PageSnapshot};

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UsdValue {
    pub usd: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MiningRevenueRequest {
    pub visitor: VisitorProfile,
    pub duration: f64,
    pub rates: MiningRateModel,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdRevenueRequest {
    pub rates: AdRateModel,
    pub visits: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BreakEvenRequest {
    pub ad: AdRateModel,
    pub visitor: VisitorProfile,
    pub mining: MiningRateModel,
}

/// `seconds` is absent when mining never catches up.
#[derive(Debug, Serialize, Deserialize)]
pub struct BreakEvenResponse {
    pub seconds: Option<f64>,
    pub never: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MonthlyProfitRequest {
    pub traffic: TrafficModel,
    pub strategy: Strategy,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ContentionRequest {
    pub device_rate: f64,
    pub tabs: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HashRateValue {
    pub hash_rate: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CellularCostRequest {
    pub mean_rate: f64,
    pub duration: f64,
    pub price: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PercentilesRequest {
    #[serde(default = "default_metric")]
    pub metric: String,
    pub series: Vec<f64>,
    #[serde(default)]
    pub points: Option<Vec<f64>>,
}

fn default_metric() -> String {
    "series".into()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub blacklist: Blacklist,
    pub pages: Vec<PageSnapshot>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummarizeRequest {
    pub target_url: String,
    #[serde(default)]
    pub requests: Vec<RequestRecord>,
    #[serde(default)]
    pub frames: Vec<WsFrameRecord>,
    pub blacklist: Blacklist,
    pub window: f64,
}
