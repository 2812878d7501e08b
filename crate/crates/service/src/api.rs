//! JSON endpoints exposing the revenue model, statistics, detector and
//! traffic analyzer.

use std::collections::BTreeMap;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pagecost_core::profit;
use pagecost_core::scenario::{Scenario, SimulationOutput};
use pagecost_core::signatures::{self, DetectionReport};
use pagecost_core::stats::{self, PercentileTable, STANDARD_POINTS};
use pagecost_core::traffic::{self, TrafficSummary};
use pagecost_core::wire::*;

pub struct ApiError(String);

impl<E: std::fmt::Display> From<E> for ApiError {
    fn from(e: E) -> Self {
        Self(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(ErrorBody { error: self.0 }),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn mining_revenue(Json(req): Json<MiningRevenueRequest>) -> ApiResult<UsdValue> {
    let usd = profit::mining_revenue(&req.visitor, req.duration, &req.rates)?;
    Ok(Json(UsdValue { usd }))
}

async fn ad_revenue(Json(req): Json<AdRevenueRequest>) -> ApiResult<UsdValue> {
    Ok(Json(UsdValue {
        usd: profit::ad_revenue(&req.rates, req.visits)?,
    }))
}

async fn break_even(Json(req): Json<BreakEvenRequest>) -> ApiResult<BreakEvenResponse> {
    let s = profit::break_even_duration(&req.ad, &req.visitor, &req.mining)?;
    Ok(Json(BreakEvenResponse {
        seconds: s.is_finite().then_some(s),
        never: s.is_infinite(),
    }))
}

async fn monthly_profit(Json(req): Json<MonthlyProfitRequest>) -> ApiResult<UsdValue> {
    Ok(Json(UsdValue {
        usd: profit::monthly_profit(&req.traffic, &req.strategy)?,
    }))
}

async fn contention(Json(req): Json<ContentionRequest>) -> ApiResult<HashRateValue> {
    Ok(Json(HashRateValue {
        hash_rate: profit::contention_scaled_rate(req.device_rate, req.tabs)?,
    }))
}

async fn cellular_cost(Json(req): Json<CellularCostRequest>) -> ApiResult<UsdValue> {
    Ok(Json(UsdValue {
        usd: profit::cellular_cost(req.mean_rate, req.duration, req.price)?,
    }))
}

async fn simulate(Json(scenario): Json<Scenario>) -> ApiResult<SimulationOutput> {
    let out = scenario.simulate()?;
    if out
        .break_even
        .iter()
        .any(|r| !r.break_even_s.is_finite() || !r.ads_to_mining_ratio.is_finite())
    {
        // JSON has no infinity; a zero rate never breaks even
        return Err(ApiError("every hash rate must be positive".into()));
    }
    Ok(Json(out))
}

async fn percentiles(Json(req): Json<PercentilesRequest>) -> ApiResult<PercentileTable> {
    let points = req.points.unwrap_or_else(|| STANDARD_POINTS.to_vec());
    Ok(Json(stats::percentiles(req.metric, &req.series, &points)?))
}

async fn classify(Json(req): Json<ClassifyRequest>) -> ApiResult<Vec<DetectionReport>> {
    for page in &req.pages {
        page.validate()?;
    }
    Ok(Json(
        req.pages
            .iter()
            .map(|p| signatures::classify_page(p, &req.blacklist))
            .collect(),
    ))
}

async fn market_share(Json(reports): Json<Vec<DetectionReport>>) -> Json<BTreeMap<String, f64>> {
    Json(signatures::market_share(&reports))
}

async fn summarize(Json(req): Json<SummarizeRequest>) -> ApiResult<TrafficSummary> {
    Ok(Json(traffic::summarize(
        &req.target_url,
        &req.requests,
        &req.frames,
        &req.blacklist,
        req.window,
    )?))
}

async fn health() -> &'static str {
    "ok"
}

pub fn router<S: Clone + Send + Sync + 'static>() -> Router<S> {
    Router::new()
        .route("/health", get(health))
        .route("/profit/mining-revenue", post(mining_revenue))
        .route("/profit/ad-revenue", post(ad_revenue))
        .route("/profit/break-even", post(break_even))
        .route("/profit/monthly", post(monthly_profit))
        .route("/profit/contention", post(contention))
        .route("/profit/cellular-cost", post(cellular_cost))
        .route("/simulate", post(simulate))
        .route("/stats/percentiles", post(percentiles))
        .route("/detect/classify", post(classify))
        .route("/detect/market-share", post(market_share))
        .route("/traffic/summarize", post(summarize))
}
