//! Scenario files for revenue simulations and the tables they produce.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profit::{
    self, AdRateModel, MiningRateModel, ModelError, Strategy, TrafficModel, VisitorProfile,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scenario lists no hash rates")]
    NoHashRates,
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A revenue simulation setup, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "defaults::payout")]
    pub payout_per_mhash: f64,
    #[serde(default = "defaults::coin_price")]
    pub coin_price: f64,
    #[serde(default = "defaults::cpm")]
    pub cpm: f64,
    #[serde(default = "defaults::ad_slots")]
    pub ad_slots: f64,
    #[serde(default = "defaults::hash_rates")]
    pub hash_rates: Vec<f64>,
    #[serde(default = "defaults::visitors")]
    pub visitors_per_month: f64,
    #[serde(default = "defaults::visit_duration")]
    pub visit_duration_s: f64,
    #[serde(default = "defaults::tabs")]
    pub tabs: u32,
    #[serde(default = "defaults::price_per_byte")]
    pub price_per_byte: f64,
    /// PoW channel rate used for the metered-data columns, B/s.
    #[serde(default = "defaults::miner_byte_rate")]
    pub miner_byte_rate: f64,
}

mod defaults {
    use crate::profit::*;

    pub fn payout() -> f64 {
        COINHIVE_PAYOUT_PER_MHASH
    }
    pub fn coin_price() -> f64 {
        XMR_USD
    }
    pub fn cpm() -> f64 {
        MEDIAN_CPM
    }
    pub fn ad_slots() -> f64 {
        DEFAULT_AD_SLOTS
    }
    pub fn hash_rates() -> Vec<f64> {
        HASH_RATE_TIERS.to_vec()
    }
    pub fn visitors() -> f64 {
        100_000.0
    }
    pub fn visit_duration() -> f64 {
        DEFAULT_VISIT_SECONDS
    }
    pub fn tabs() -> u32 {
        1
    }
    pub fn price_per_byte() -> f64 {
        CELLULAR_PRICE_PER_BYTE
    }
    pub fn miner_byte_rate() -> f64 {
        REFERENCE_MINER_BYTE_RATE
    }
}

impl Default for Scenario {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueRow {
    pub strategy: String,
    pub parameter: String,
    pub revenue_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakEvenRow {
    pub hash_rate: f64,
    /// Per-tab rate after splitting the device across `tabs` mining tabs.
    pub effective_hash_rate: f64,
    pub break_even_s: f64,
    pub break_even_min: f64,
    /// Metered-data cost of the miner channel over the break-even visit.
    pub data_cost_usd: f64,
    pub ads_to_mining_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub revenue: Vec<RevenueRow>,
    pub break_even: Vec<BreakEvenRow>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn mining_rates(&self) -> Result<MiningRateModel, ModelError> {
        MiningRateModel::new(self.payout_per_mhash, self.coin_price)
    }

    pub fn ad_rates(&self) -> Result<AdRateModel, ModelError> {
        AdRateModel::new(self.ad_slots, self.cpm)
    }

    pub fn traffic(&self) -> TrafficModel {
        TrafficModel {
            visitors_per_month: self.visitors_per_month,
            visit_duration: self.visit_duration_s,
        }
    }

    /// Monthly revenue per strategy and break-even table per hash-rate tier.
    pub fn simulate(&self) -> Result<SimulationOutput, ScenarioError> {
        if self.hash_rates.is_empty() {
            return Err(ScenarioError::NoHashRates);
        }
        let mining = self.mining_rates()?;
        let ads = self.ad_rates()?;
        let traffic = self.traffic();
        traffic.validate()?;

        let ad_month = profit::monthly_profit(&traffic, &Strategy::Ads { rates: ads })?;
        let mut revenue = vec![RevenueRow {
            strategy: "ads".into(),
            parameter: format!("ad_slots={}", self.ad_slots),
            revenue_usd: ad_month,
        }];
        let mut break_even = Vec::with_capacity(self.hash_rates.len());
        for &rate in &self.hash_rates {
            let effective = profit::contention_scaled_rate(rate, self.tabs)?;
            let visitor = VisitorProfile {
                hash_rate: effective,
                dataplan_price: Some(self.price_per_byte),
            };
            let month = profit::monthly_profit(
                &traffic,
                &Strategy::Mining {
                    visitor,
                    rates: mining,
                },
            )?;
            let parameter = if self.tabs > 1 {
                format!("hash_rate={rate};tabs={}", self.tabs)
            } else {
                format!("hash_rate={rate}")
            };
            revenue.push(RevenueRow {
                strategy: "mining".into(),
                parameter,
                revenue_usd: month,
            });

            let seconds = profit::break_even_duration(&ads, &visitor, &mining)?;
            let data_cost = if seconds.is_finite() {
                profit::cellular_cost(self.miner_byte_rate, seconds, self.price_per_byte)?
            } else {
                f64::INFINITY
            };
            break_even.push(BreakEvenRow {
                hash_rate: rate,
                effective_hash_rate: effective,
                break_even_s: seconds,
                break_even_min: seconds / 60.0,
                data_cost_usd: data_cost,
                ads_to_mining_ratio: if month > 0.0 {
                    ad_month / month
                } else {
                    f64::INFINITY
                },
            });
        }
        Ok(SimulationOutput {
            revenue,
            break_even,
        })
    }
}

impl SimulationOutput {
    pub fn write_revenue_csv<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.revenue {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_break_even_csv<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.break_even {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
