//! Thin clients for the fixture service: [`ApiClient`] for the JSON API and
//! ledger, [`PowClient`] for the proof-of-work socket.

use std::collections::BTreeMap;

use futures::{SinkExt, StreamExt};
use pagecost_core::pow::{LedgerSnapshot, PowJob, PowMessage, PowShare, RejectReason};
use pagecost_core::profit::{AdRateModel, MiningRateModel, Strategy, TrafficModel, VisitorProfile};
use pagecost_core::record::FrameDirection;
use pagecost_core::scenario::{Scenario, SimulationOutput};
use pagecost_core::signatures::{Blacklist, DetectionReport, PageSnapshot};
use pagecost_core::stats::PercentileTable;
use pagecost_core::traffic::TrafficSummary;
use pagecost_core::wire::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("http error: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service rejected request ({status}): {message}")]
    Api { status: u16, message: String },
    #[error("websocket error: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct ApiClient {
    http: reqwest::Client,
    base: String,
}

impl ApiClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<R: DeserializeOwned>(resp: reqwest::Response) -> Result<R> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text)
            .map(|b| b.error)
            .unwrap_or(text);
        Err(ClientError::Api {
            status: status.as_u16(),
            message,
        })
    }

    async fn post<B: Serialize + ?Sized, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R> {
        let resp = self
            .http
            .post(format!("{}/api/v1{path}", self.base))
            .json(body)
            .send()
            .await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<()> {
        let resp = self
            .http
            .get(format!("{}/api/v1/health", self.base))
            .send()
            .await?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ClientError::Api {
                status: resp.status().as_u16(),
                message: resp.text().await.unwrap_or_default(),
            })
        }
    }

    pub async fn mining_revenue(
        &self,
        visitor: VisitorProfile,
        duration: f64,
        rates: MiningRateModel,
    ) -> Result<f64> {
        let v: UsdValue = self
            .post(
                "/profit/mining-revenue",
                &MiningRevenueRequest {
                    visitor,
                    duration,
                    rates,
                },
            )
            .await?;
        Ok(v.usd)
    }

    pub async fn ad_revenue(&self, rates: AdRateModel, visits: f64) -> Result<f64> {
        let v: UsdValue = self
            .post("/profit/ad-revenue", &AdRevenueRequest { rates, visits })
            .await?;
        Ok(v.usd)
    }

    /// Break-even seconds; `f64::INFINITY` when mining never catches up.
    pub async fn break_even(
        &self,
        ad: AdRateModel,
        visitor: VisitorProfile,
        mining: MiningRateModel,
    ) -> Result<f64> {
        let v: BreakEvenResponse = self
            .post("/profit/break-even", &BreakEvenRequest { ad, visitor, mining })
            .await?;
        Ok(v.seconds.unwrap_or(f64::INFINITY))
    }

    pub async fn monthly_profit(&self, traffic: TrafficModel, strategy: Strategy) -> Result<f64> {
        let v: UsdValue = self
            .post("/profit/monthly", &MonthlyProfitRequest { traffic, strategy })
            .await?;
        Ok(v.usd)
    }

    pub async fn contention_scaled_rate(&self, device_rate: f64, tabs: u32) -> Result<f64> {
        let v: HashRateValue = self
            .post("/profit/contention", &ContentionRequest { device_rate, tabs })
            .await?;
        Ok(v.hash_rate)
    }

    pub async fn cellular_cost(&self, mean_rate: f64, duration: f64, price: f64) -> Result<f64> {
        let v: UsdValue = self
            .post(
                "/profit/cellular-cost",
                &CellularCostRequest {
                    mean_rate,
                    duration,
                    price,
                },
            )
            .await?;
        Ok(v.usd)
    }

    pub async fn simulate(&self, scenario: &Scenario) -> Result<SimulationOutput> {
        self.post("/simulate", scenario).await
    }

    pub async fn percentiles(
        &self,
        metric: &str,
        series: &[f64],
        points: Option<&[f64]>,
    ) -> Result<PercentileTable> {
        self.post(
            "/stats/percentiles",
            &PercentilesRequest {
                metric: metric.to_string(),
                series: series.to_vec(),
                points: points.map(<[f64]>::to_vec),
            },
        )
        .await
    }

    pub async fn classify(
        &self,
        blacklist: &Blacklist,
        pages: &[PageSnapshot],
    ) -> Result<Vec<DetectionReport>> {
        self.post(
            "/detect/classify",
            &ClassifyRequest {
                blacklist: blacklist.clone(),
                pages: pages.to_vec(),
            },
        )
        .await
    }

    pub async fn market_share(&self, reports: &[DetectionReport]) -> Result<BTreeMap<String, f64>> {
        self.post("/detect/market-share", reports).await
    }

    pub async fn summarize(&self, req: &SummarizeRequest) -> Result<TrafficSummary> {
        self.post("/traffic/summarize", req).await
    }

    pub async fn ledger(&self) -> Result<LedgerSnapshot> {
        let resp = self.http.get(format!("{}/ledger", self.base)).send().await?;
        Self::decode(resp).await
    }

    /// Raw text of a blacklist served by the fixture, `miner.txt` or `ads.txt`.
    pub async fn fixture_list(&self, name: &str) -> Result<String> {
        let resp = self
            .http
            .get(format!("{}/blacklists/{name}", self.base))
            .send()
            .await?;
        if resp.status().is_success() {
            Ok(resp.text().await?)
        } else {
            Err(ClientError::Api {
                status: resp.status().as_u16(),
                message: resp.text().await.unwrap_or_default(),
            })
        }
    }

    pub async fn reset_ledger(&self) -> Result<()> {
        let resp = self
            .http
            .post(format!("{}/ledger/reset", self.base))
            .send()
            .await?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ClientError::Api {
                status: resp.status().as_u16(),
                message: resp.text().await.unwrap_or_default(),
            })
        }
    }
}

/// Outcome of one submitted share.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShareOutcome {
    /// Accepted; the server has issued this new job.
    Accepted(PowJob),
    Rejected(RejectReason),
}

type FrameObserver = Box<dyn FnMut(FrameDirection, usize) + Send>;

/// Miner-side connection to the PoW stub.
///
/// Shares are submitted one at a time: each submit waits for the server's
/// reply before returning.
pub struct PowClient {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    job: PowJob,
    frame_size: usize,
    observer: Option<FrameObserver>,
}

impl PowClient {
    /// Connects and waits for the first job.
    pub async fn connect(url: &str, frame_size: usize) -> Result<Self> {
        Self::connect_observed(url, frame_size, None).await
    }

    /// Like [`PowClient::connect`], reporting the payload size of every text
    /// frame in either direction to `observer`.
    pub async fn connect_observed(
        url: &str,
        frame_size: usize,
        observer: Option<FrameObserver>,
    ) -> Result<Self> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        let mut client = Self {
            ws,
            job: PowJob {
                job_id: String::new(),
                blob: String::new(),
                difficulty_target: 0,
            },
            frame_size,
            observer,
        };
        match client.recv().await? {
            PowMessage::Job { job, .. } => client.job = job,
            other => {
                return Err(ClientError::Protocol(format!(
                    "expected a job on connect, got {other:?}"
                )))
            }
        }
        Ok(client)
    }

    pub fn current_job(&self) -> &PowJob {
        &self.job
    }

    async fn recv(&mut self) -> Result<PowMessage> {
        loop {
            match self.ws.next().await {
                Some(Ok(Message::Text(text))) => {
                    if let Some(obs) = self.observer.as_mut() {
                        obs(FrameDirection::Received, text.len());
                    }
                    return PowMessage::decode(&text)
                        .map_err(|e| ClientError::Protocol(format!("undecodable frame: {e}")));
                }
                Some(Ok(Message::Close(_))) | None => {
                    return Err(ClientError::Protocol("socket closed".into()))
                }
                Some(Ok(_)) => continue,
                Some(Err(e)) => return Err(e.into()),
            }
        }
    }

    /// Sends a raw text frame and returns the server's reply.
    pub async fn send_raw(&mut self, text: String) -> Result<PowMessage> {
        let len = text.len();
        self.ws.send(Message::Text(text.into())).await?;
        if let Some(obs) = self.observer.as_mut() {
            obs(FrameDirection::Sent, len);
        }
        self.recv().await
    }

    /// Submits a share for the current job.
    pub async fn submit(&mut self, nonce: u64, hash_count_claimed: u64) -> Result<ShareOutcome> {
        let job_id = self.job.job_id.clone();
        self.submit_for(&job_id, nonce, hash_count_claimed).await
    }

    /// Submits a share naming an arbitrary job id.
    pub async fn submit_for(
        &mut self,
        job_id: &str,
        nonce: u64,
        hash_count_claimed: u64,
    ) -> Result<ShareOutcome> {
        let msg = PowMessage::share(PowShare {
            job_id: job_id.to_string(),
            nonce,
            hash_count_claimed,
        });
        let text = msg.encode_padded(self.frame_size);
        match self.send_raw(text).await? {
            PowMessage::Job { job, .. } => {
                self.job = job.clone();
                Ok(ShareOutcome::Accepted(job))
            }
            PowMessage::Rejected { reason, .. } => Ok(ShareOutcome::Rejected(reason)),
            other => Err(ClientError::Protocol(format!("unexpected reply {other:?}"))),
        }
    }

    pub async fn close(mut self) -> Result<()> {
        self.ws.close(None).await?;
        // drain until the server acknowledges
        while let Some(Ok(_)) = self.ws.next().await {}
        Ok(())
    }
}
