//! Local fixture service: synthetic miner, ad and control pages, the
//! proof-of-work stub with its share ledger, and the JSON API.

pub mod api;
pub mod config;
pub mod ledger;
pub mod pages;
pub mod pow;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::ws::WebSocketUpgrade;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pagecost_core::pow::LedgerSnapshot;
use pagecost_core::signatures::{parse_blacklist, Blacklist, Category, ListFormat};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tracing::info;

pub use config::{AdPageConfig, ControlPageConfig, FixtureConfig, MinerPageConfig};
pub use ledger::Ledger;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid fixture config: {0}")]
    Config(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Serve(#[from] std::io::Error),
}

#[derive(Clone)]
struct AppState {
    config: Arc<FixtureConfig>,
    ledger: Arc<Ledger>,
    base_url: Arc<str>,
    ws_base: Arc<str>,
}

/// The blacklists matching fixture traffic.
pub fn fixture_blacklist() -> Blacklist {
    let miners = parse_blacklist(
        pages::FIXTURE_MINER_LIST.as_bytes(),
        ListFormat::PlainLines,
        Category::Miner,
    )
    .expect("fixture miner list parses");
    let ads = parse_blacklist(
        pages::FIXTURE_AD_LIST.as_bytes(),
        ListFormat::PlainLines,
        Category::Ad,
    )
    .expect("fixture ad list parses");
    Blacklist::from_entries("fixture", miners.into_iter().chain(ads))
}

type Params = Query<HashMap<String, String>>;

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> Result<Option<T>, Response> {
    match q.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse().map(Some).map_err(|_| {
            (StatusCode::BAD_REQUEST, format!("bad query parameter {key}={raw}")).into_response()
        }),
    }
}

fn html(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], body).into_response()
}

async fn control(State(st): State<AppState>, Query(q): Params) -> Response {
    let size = match param::<usize>(&q, "size") {
        Ok(s) => s.unwrap_or(st.config.control.page_size),
        Err(r) => return r,
    };
    if size < pages::MIN_CONTROL_PAGE {
        return (StatusCode::BAD_REQUEST, "size below minimum page size").into_response();
    }
    html(pages::control_page(size))
}

async fn ads(State(st): State<AppState>, Query(q): Params) -> Response {
    let (slots, size) = match (param::<u32>(&q, "slots"), param::<usize>(&q, "size")) {
        (Ok(a), Ok(b)) => (
            a.unwrap_or(st.config.ads.slot_count),
            b.unwrap_or(st.config.ads.resource_size),
        ),
        (Err(r), _) | (_, Err(r)) => return r,
    };
    html(pages::ads_page(&st.base_url, slots, size))
}

async fn ad_resource(
    State(st): State<AppState>,
    Path(name): Path<String>,
    Query(q): Params,
) -> Response {
    let Some(slot) = name.strip_prefix("slot").and_then(|n| n.parse::<u32>().ok()) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let size = match param::<usize>(&q, "size") {
        Ok(s) => s.unwrap_or(st.config.ads.resource_size),
        Err(r) => return r,
    };
    (
        [(header::CONTENT_TYPE, "application/javascript")],
        pages::ad_resource(slot, size),
    )
        .into_response()
}

fn miner_config(base: &MinerPageConfig, q: &HashMap<String, String>) -> Result<MinerPageConfig, Response> {
    let mut cfg = base.clone();
    if let Some(v) = param(q, "workers")? {
        cfg.workers = v;
    }
    if let Some(v) = param(q, "throttle")? {
        cfg.throttle = v;
    }
    if let Some(v) = param(q, "interval")? {
        cfg.share_interval = v;
    }
    if let Some(v) = param(q, "frame")? {
        cfg.frame_size = v;
    }
    if let Some(v) = param::<u64>(q, "hashes")? {
        cfg.hashes_per_share = Some(v);
    }
    config::validate_miner(&cfg)
        .map_err(|e| (StatusCode::BAD_REQUEST, e.to_string()).into_response())?;
    Ok(cfg)
}

async fn miner(State(st): State<AppState>, Query(q): Params) -> Response {
    match miner_config(&st.config.miner, &q) {
        Ok(cfg) => html(pages::miner_page(&st.base_url, &st.ws_base, &cfg)),
        Err(r) => r,
    }
}

async fn state_test(State(st): State<AppState>) -> Response {
    html(pages::state_test_page(&st.base_url))
}

async fn asset(State(st): State<AppState>, Path(file): Path<String>) -> Response {
    if file.contains("..") || file.contains('/') {
        return StatusCode::NOT_FOUND.into_response();
    }
    let js = [(header::CONTENT_TYPE, "application/javascript")];
    match &st.config.assets_dir {
        Some(dir) => match tokio::fs::read(dir.join(&file)).await {
            Ok(bytes) => (js, bytes).into_response(),
            Err(_) => StatusCode::NOT_FOUND.into_response(),
        },
        None => (js, pages::PLACEHOLDER_SCRIPT).into_response(),
    }
}

async fn pow_socket(
    State(st): State<AppState>,
    Query(q): Params,
    ws: WebSocketUpgrade,
) -> Response {
    let frame = match param::<usize>(&q, "frame") {
        Ok(f) => f.unwrap_or(st.config.miner.frame_size),
        Err(r) => return r,
    };
    let difficulty = st
        .config
        .miner
        .hashes_per_share
        .unwrap_or(pow::DEFAULT_DIFFICULTY);
    let ledger = st.ledger.clone();
    ws.on_upgrade(move |socket| pow::pow_session(socket, ledger, frame, difficulty))
}

async fn ledger(State(st): State<AppState>) -> Json<LedgerSnapshot> {
    Json(st.ledger.snapshot())
}

async fn ledger_reset(State(st): State<AppState>) -> StatusCode {
    st.ledger.reset();
    StatusCode::NO_CONTENT
}

async fn miner_list() -> Response {
    Body::from(pages::FIXTURE_MINER_LIST).into_response()
}

async fn ad_list() -> Response {
    Body::from(pages::FIXTURE_AD_LIST).into_response()
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/control", get(control))
        .route("/ads", get(ads))
        .route("/adsrv/{name}", get(ad_resource))
        .route("/miner", get(miner))
        .route("/state-test", get(state_test))
        .route("/lib/{file}", get(asset))
        .route(pages::POW_SOCKET_PATH, get(pow_socket))
        .route("/ledger", get(ledger))
        .route("/ledger/reset", post(ledger_reset))
        .route("/blacklists/miner.txt", get(miner_list))
        .route("/blacklists/ads.txt", get(ad_list))
        .nest("/api/v1", api::router())
        .with_state(state)
}

/// A running fixture service.
pub struct ServiceHandle {
    addr: SocketAddr,
    ledger: Arc<Ledger>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<(), std::io::Error>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    /// Stops accepting connections and waits for the server task.
    pub async fn shutdown(mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match (&mut self.task).await {
            Ok(r) => r.map_err(ServiceError::Serve),
            Err(e) => Err(ServiceError::Serve(std::io::Error::other(e))),
        }
    }

    /// Runs until the server stops on its own.
    pub async fn wait(self) -> Result<(), ServiceError> {
        let _keep = self.shutdown;
        match self.task.await {
            Ok(r) => r.map_err(ServiceError::Serve),
            Err(e) => Err(ServiceError::Serve(std::io::Error::other(e))),
        }
    }
}

/// Binds the configured address and starts serving in the background.
pub async fn serve(config: FixtureConfig) -> Result<ServiceHandle, ServiceError> {
    config.validate()?;
    let addr = config.listen_addr();
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    let addr = listener.local_addr()?;
    let ledger = Arc::new(Ledger::new());
    let state = AppState {
        config: Arc::new(config),
        ledger: ledger.clone(),
        base_url: format!("http://{addr}").into(),
        ws_base: format!("ws://{addr}").into(),
    };
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    info!(%addr, "fixture service listening");
    Ok(ServiceHandle {
        addr,
        ledger,
        shutdown: Some(tx),
        task,
    })
}
