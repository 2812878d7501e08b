//! Publisher revenue under in-browser mining versus display advertising,
//! plus the user-side costs that go with it (metered data, tab contention).
//!
//! All money is USD as `f64`. Every function validates its inputs and
//! returns [`ModelError::Domain`] for negative or non-finite values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hashes per payout unit: mining services pay per million accepted hashes.
pub const HASHES_PER_PAYOUT_UNIT: f64 = 1e6;

/// Coinhive payout, XMR per 10^6 hashes.
pub const COINHIVE_PAYOUT_PER_MHASH: f64 = 0.0001468;

/// XMR/USD exchange rate used for the reference simulations.
pub const XMR_USD: f64 = 205.0;

/// Median price of an ad impression, USD per 1000 impressions.
pub const MEDIAN_CPM: f64 = 1.0;

/// Ad slots assumed per ad-supported page.
pub const DEFAULT_AD_SLOTS: f64 = 3.0;

/// Mean ad slots measured over the ad-supported corpus.
pub const MEASURED_AD_SLOTS: f64 = 3.4;

/// Visitor device classes in H/s, from weak to powerful.
pub const HASH_RATE_TIERS: [f64; 4] = [50.0, 100.0, 200.0, 300.0];

/// Average hash rate of a desktop visitor running a Coinhive miner.
pub const REFERENCE_VISITOR_HASH_RATE: f64 = 227.0;

/// Mean PoW channel rate of a miner-supported page, bytes per second.
pub const REFERENCE_MINER_BYTE_RATE: f64 = 146.0;

/// Cellular data price per byte implied by a cost of 0.000219 USD per
/// minute at 146 B/s.
pub const CELLULAR_PRICE_PER_BYTE: f64 = 0.000219 / (REFERENCE_MINER_BYTE_RATE * 60.0);

/// Default visit length in seconds.
pub const DEFAULT_VISIT_SECONDS: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{name} must be finite and non-negative, got {value}")]
    Domain { name: &'static str, value: f64 },
    #[error("concurrent mining tabs must be at least 1")]
    NoTabs,
}

fn check(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(ModelError::Domain { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningRateModel {
    /// XMR paid per 10^6 accepted hashes.
    pub payout_per_mhash: f64,
    /// USD per XMR.
    pub coin_price: f64,
}

impl MiningRateModel {
    pub fn new(payout_per_mhash: f64, coin_price: f64) -> Result<Self, ModelError> {
        let rates = Self {
            payout_per_mhash,
            coin_price,
        };
        rates.validate()?;
        Ok(rates)
    }

    pub fn coinhive() -> Self {
        Self {
            payout_per_mhash: COINHIVE_PAYOUT_PER_MHASH,
            coin_price: XMR_USD,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check("payout_per_mhash", self.payout_per_mhash)?;
        check("coin_price", self.coin_price)?;
        Ok(())
    }

    /// USD earned per single hash.
    pub fn usd_per_hash(&self) -> f64 {
        self.payout_per_mhash * self.coin_price / HASHES_PER_PAYOUT_UNIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdRateModel {
    /// Ad slots per page. Fractional values model corpus averages.
    pub ad_slots: f64,
    /// USD per 1000 impressions.
    pub cpm: f64,
}

impl AdRateModel {
    pub fn new(ad_slots: f64, cpm: f64) -> Result<Self, ModelError> {
        let rates = Self { ad_slots, cpm };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check("ad_slots", self.ad_slots)?;
        check("cpm", self.cpm)?;
        Ok(())
    }

    /// Revenue of one visit: one impression per slot, no refresh.
    pub fn per_visit(&self) -> f64 {
        self.ad_slots * self.cpm / 1000.0
    }
}

impl Default for AdRateModel {
    fn default() -> Self {
        Self {
            ad_slots: DEFAULT_AD_SLOTS,
            cpm: MEDIAN_CPM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisitorProfile {
    /// Hashes per second the visitor's device sustains.
    pub hash_rate: f64,
    /// Metered data price, USD per byte.
    #[serde(default)]
    pub dataplan_price: Option<f64>,
}

impl VisitorProfile {
    pub fn with_hash_rate(hash_rate: f64) -> Self {
        Self {
            hash_rate,
            dataplan_price: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check("hash_rate", self.hash_rate)?;
        if let Some(price) = self.dataplan_price {
            check("dataplan_price", price)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub visitors_per_month: f64,
    /// Seconds per visit.
    #[serde(default = "default_visit_seconds")]
    pub visit_duration: f64,
}

fn default_visit_seconds() -> f64 {
    DEFAULT_VISIT_SECONDS
}

impl TrafficModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        check("visitors_per_month", self.visitors_per_month)?;
        check("visit_duration", self.visit_duration)?;
        Ok(())
    }
}

/// How a publisher monetizes its visits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Mining {
        visitor: VisitorProfile,
        rates: MiningRateModel,
    },
    Ads {
        rates: AdRateModel,
    },
}

/// Revenue of a visitor hashing for `duration` seconds.
pub fn mining_revenue(
    visitor: &VisitorProfile,
    duration: f64,
    rates: &MiningRateModel,
) -> Result<f64, ModelError> {
    visitor.validate()?;
    rates.validate()?;
    let duration = check("duration", duration)?;
    Ok(visitor.hash_rate * duration / HASHES_PER_PAYOUT_UNIT
        * rates.payout_per_mhash
        * rates.coin_price)
}

/// Revenue of `visits` page views with every slot filled once.
pub fn ad_revenue(rates: &AdRateModel, visits: f64) -> Result<f64, ModelError> {
    rates.validate()?;
    let visits = check("visits", visits)?;
    Ok(rates.per_visit() * visits)
}

/// Visit length at which mining earns as much as one ad-supported visit.
///
/// Returns `f64::INFINITY` when the mining side earns nothing per second
/// but there is ad revenue to match, and `0.0` when there is no ad revenue.
pub fn break_even_duration(
    ad: &AdRateModel,
    visitor: &VisitorProfile,
    mining: &MiningRateModel,
) -> Result<f64, ModelError> {
    ad.validate()?;
    visitor.validate()?;
    mining.validate()?;
    let target = ad.per_visit();
    if target == 0.0 {
        return Ok(0.0);
    }
    let per_second = visitor.hash_rate * mining.payout_per_mhash * mining.coin_price
        / HASHES_PER_PAYOUT_UNIT;
    if per_second == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(target / per_second)
}

/// Monthly revenue of `traffic` under `strategy`.
pub fn monthly_profit(traffic: &TrafficModel, strategy: &Strategy) -> Result<f64, ModelError> {
    traffic.validate()?;
    let per_visit = match strategy {
        Strategy::Mining { visitor, rates } => {
            mining_revenue(visitor, traffic.visit_duration, rates)?
        }
        Strategy::Ads { rates } => ad_revenue(rates, 1.0)?,
    };
    Ok(traffic.visitors_per_month * per_visit)
}

/// Per-tab hash rate when `tabs` mining pages share one device.
pub fn contention_scaled_rate(device_rate: f64, tabs: u32) -> Result<f64, ModelError> {
    let device_rate = check("device_rate", device_rate)?;
    if tabs == 0 {
        return Err(ModelError::NoTabs);
    }
    Ok(device_rate / f64::from(tabs))
}

/// Metered-data cost of receiving `mean_rate` B/s for `duration` seconds.
pub fn cellular_cost(mean_rate: f64, duration: f64, price: f64) -> Result<f64, ModelError> {
    let mean_rate = check("mean_rate", mean_rate)?;
    let duration = check("duration", duration)?;
    let price = check("price", price)?;
    Ok(mean_rate * duration * price)
}
