//! Driver for a Chromium-family browser over its remote-debugging protocol.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use futures::{SinkExt, StreamExt};
use pagecost_core::record::{now_timestamp, FrameDirection, RequestRecord, WsFrameRecord};
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot, watch};
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, warn};

use crate::driver::{BrowserDriver, DriverError, PageLoad, StoredState};
use crate::network::NetworkLog;
use crate::target::ResourceTarget;

const COMMAND_TIMEOUT: Duration = Duration::from_secs(30);

/// How to start a browser the driver owns.
#[derive(Debug, Clone)]
pub struct LaunchSpec {
    pub binary: PathBuf,
    pub port: u16,
    pub extra_args: Vec<String>,
}

impl LaunchSpec {
    pub fn new(binary: impl Into<PathBuf>, port: u16) -> Self {
        Self {
            binary: binary.into(),
            port,
            extra_args: Vec::new(),
        }
    }
}

#[derive(Debug, Default)]
struct PendingRequest {
    url: String,
    initiator: String,
    resource_type: String,
    status: u16,
}

/// Everything the event reader updates.
#[derive(Default)]
struct EventState {
    network: Arc<NetworkLog>,
    requests: Mutex<HashMap<String, PendingRequest>>,
    sockets: Mutex<HashMap<String, String>>,
    document_status: Mutex<u16>,
    service_workers: Mutex<BTreeMap<String, String>>,
    crashed: Mutex<Option<String>>,
}

impl EventState {
    fn crash(&self, reason: &str) {
        self.crashed.lock().unwrap().get_or_insert_with(|| reason.to_string());
    }

    fn handle(&self, method: &str, p: &Value, loads: &watch::Sender<u64>) {
        let s = |v: &Value| v.as_str().unwrap_or_default().to_string();
        match method {
            "Page.loadEventFired" => {
                loads.send_modify(|n| *n += 1);
            }
            "Network.requestWillBeSent" => {
                let initiator = p["initiator"]["url"]
                    .as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| s(&p["initiator"]["type"]));
                self.requests.lock().unwrap().insert(
                    s(&p["requestId"]),
                    PendingRequest {
                        url: s(&p["request"]["url"]),
                        initiator,
                        resource_type: s(&p["type"]).to_lowercase(),
                        status: 0,
                    },
                );
            }
            "Network.responseReceived" => {
                let status = p["response"]["status"].as_f64().unwrap_or(0.0) as u16;
                if p["type"] == "Document" {
                    *self.document_status.lock().unwrap() = status;
                }
                if let Some(r) = self.requests.lock().unwrap().get_mut(&s(&p["requestId"])) {
                    r.status = status;
                }
            }
            "Network.loadingFinished" | "Network.loadingFailed" => {
                let Some(r) = self.requests.lock().unwrap().remove(&s(&p["requestId"])) else {
                    return;
                };
                self.network.push_request(RequestRecord {
                    timestamp: now_timestamp(),
                    url: r.url,
                    initiator: r.initiator,
                    transferred_bytes: p["encodedDataLength"].as_f64().unwrap_or(0.0).max(0.0) as u64,
                    resource_type: r.resource_type,
                    status_code: r.status,
                });
            }
            "Network.webSocketCreated" => {
                self.sockets
                    .lock()
                    .unwrap()
                    .insert(s(&p["requestId"]), s(&p["url"]));
            }
            "Network.webSocketFrameSent" | "Network.webSocketFrameReceived" => {
                let endpoint = self
                    .sockets
                    .lock()
                    .unwrap()
                    .get(&s(&p["requestId"]))
                    .cloned()
                    .unwrap_or_default();
                let direction = if method.ends_with("Sent") {
                    FrameDirection::Sent
                } else {
                    FrameDirection::Received
                };
                self.network.push_frame(WsFrameRecord {
                    timestamp: now_timestamp(),
                    direction,
                    payload_bytes: frame_payload_len(&p["response"]),
                    endpoint_url: endpoint,
                });
            }
            "ServiceWorker.workerRegistrationUpdated" => {
                let mut regs = self.service_workers.lock().unwrap();
                for r in p["registrations"].as_array().into_iter().flatten() {
                    let id = s(&r["registrationId"]);
                    if r["isDeleted"].as_bool().unwrap_or(false) {
                        regs.remove(&id);
                    } else {
                        regs.insert(id, s(&r["scopeURL"]));
                    }
                }
            }
            "Inspector.targetCrashed" => self.crash("renderer crashed"),
            "Inspector.detached" => self.crash(&format!("detached: {}", s(&p["reason"]))),
            _ => {}
        }
    }
}

/// Payload bytes of a frame event: text as UTF-8, binary from its base64 form.
pub fn frame_payload_len(response: &Value) -> u64 {
    let data = response["payloadData"].as_str().unwrap_or_default();
    if response["opcode"].as_u64() == Some(2) {
        let pad = data.bytes().rev().take_while(|&b| b == b'=').count();
        (data.len() / 4 * 3).saturating_sub(pad) as u64
    } else {
        data.len() as u64
    }
}

type Pending = Arc<Mutex<HashMap<u64, oneshot::Sender<Result<Value, String>>>>>;

struct Connection {
    out: mpsc::UnboundedSender<Message>,
    pending: Pending,
    next_id: AtomicU64,
    loads: watch::Receiver<u64>,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

async fn open_connection(ws_url: &str, events: Arc<EventState>) -> Result<Connection, DriverError> {
    let (ws, _) = tokio_tungstenite::connect_async(ws_url)
        .await
        .map_err(|e| DriverError::Launch(format!("cannot reach {ws_url}: {e}")))?;
    let (mut sink, mut stream) = ws.split();
    let (out, mut out_rx) = mpsc::unbounded_channel::<Message>();
    let pending: Pending = Arc::default();
    let (load_tx, loads) = watch::channel(0u64);
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            if sink.send(m).await.is_err() {
                break;
            }
        }
    });
    let reader_pending = pending.clone();
    let reader = tokio::spawn(async move {
        while let Some(msg) = stream.next().await {
            let text = match msg {
                Ok(Message::Text(t)) => t,
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            let Ok(v) = serde_json::from_str::<Value>(&text) else {
                debug!("undecodable protocol message");
                continue;
            };
            if let Some(id) = v["id"].as_u64() {
                if let Some(tx) = reader_pending.lock().unwrap().remove(&id) {
                    let r = match v.get("error") {
                        Some(e) => Err(e["message"].as_str().unwrap_or("error").to_string()),
                        None => Ok(v["result"].clone()),
                    };
                    let _ = tx.send(r);
                }
            } else if let Some(method) = v["method"].as_str() {
                events.handle(method, &v["params"], &load_tx);
            }
        }
        events.crash("debugging socket closed");
        reader_pending.lock().unwrap().clear();
    });
    Ok(Connection {
        out,
        pending,
        next_id: AtomicU64::new(1),
        loads,
        tasks: vec![writer, reader],
    })
}

impl Connection {
    async fn call(&self, method: &str, params: Value) -> Result<Value, DriverError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        self.pending.lock().unwrap().insert(id, tx);
        let msg = json!({"id": id, "method": method, "params": params}).to_string();
        if self.out.send(Message::Text(msg.into())).is_err() {
            return Err(DriverError::Crashed("debugging socket closed".into()));
        }
        match tokio::time::timeout(COMMAND_TIMEOUT, rx).await {
            Ok(Ok(Ok(v))) => Ok(v),
            Ok(Ok(Err(e))) => Err(DriverError::Protocol(format!("{method}: {e}"))),
            Ok(Err(_)) => Err(DriverError::Crashed("debugging socket closed".into())),
            Err(_) => Err(DriverError::Protocol(format!("{method}: no reply"))),
        }
    }
}

/// Browser driver speaking the remote-debugging protocol to one page target.
pub struct CdpDriver {
    endpoint: String,
    launch: Option<LaunchSpec>,
    child: Option<Child>,
    profile_dir: Option<PathBuf>,
    pid: Option<i32>,
    conn: Option<Connection>,
    events: Arc<EventState>,
    network: Arc<NetworkLog>,
    origins: BTreeSet<String>,
    session: u64,
}

impl CdpDriver {
    /// Starts a headless browser with a throwaway profile and attaches to it.
    pub async fn launch(spec: LaunchSpec) -> Result<Self, DriverError> {
        let mut d = Self::empty(format!("http://127.0.0.1:{}", spec.port));
        d.launch = Some(spec);
        d.start_browser().await?;
        d.attach().await?;
        Ok(d)
    }

    /// Attaches to an already running browser's debugging endpoint, e.g.
    /// `http://127.0.0.1:9222`. CPU and memory are attributed to `pid` and
    /// its descendants; without it the driver asks the browser.
    pub async fn attach_to(endpoint: &str, pid: Option<i32>) -> Result<Self, DriverError> {
        let mut d = Self::empty(endpoint.trim_end_matches('/').to_string());
        d.pid = pid;
        d.attach().await?;
        Ok(d)
    }

    /// Attaches straight to a page target's WebSocket URL.
    pub async fn connect_page(ws_url: &str, pid: Option<i32>) -> Result<Self, DriverError> {
        let mut d = Self::empty(String::new());
        d.pid = pid;
        d.connect(ws_url).await?;
        Ok(d)
    }

    fn empty(endpoint: String) -> Self {
        let network = Arc::new(NetworkLog::default());
        Self {
            endpoint,
            launch: None,
            child: None,
            profile_dir: None,
            pid: None,
            conn: None,
            events: Arc::new(EventState {
                network: network.clone(),
                ..Default::default()
            }),
            network,
            origins: BTreeSet::new(),
            session: 0,
        }
    }

    async fn start_browser(&mut self) -> Result<(), DriverError> {
        let spec = self.launch.clone().expect("launch spec");
        self.session += 1;
        let profile = std::env::temp_dir().join(format!(
            "pagecost-profile-{}-{}",
            std::process::id(),
            self.session
        ));
        let _ = std::fs::remove_dir_all(&profile);
        std::fs::create_dir_all(&profile).map_err(|e| DriverError::Launch(e.to_string()))?;
        let child = Command::new(&spec.binary)
            .arg("--headless=new")
            .arg(format!("--remote-debugging-port={}", spec.port))
            .arg(format!("--user-data-dir={}", profile.display()))
            .args(["--no-first-run", "--no-default-browser-check", "--disable-extensions"])
            .args(&spec.extra_args)
            .arg("about:blank")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| DriverError::Launch(format!("{}: {e}", spec.binary.display())))?;
        self.pid = Some(child.id() as i32);
        self.child = Some(child);
        self.profile_dir = Some(profile);
        let version = format!("{}/json/version", self.endpoint);
        for _ in 0..150 {
            if reqwest::get(&version).await.is_ok_and(|r| r.status().is_success()) {
                return Ok(());
            }
            tokio::time::sleep(Duration::from_millis(100)).await;
        }
        Err(DriverError::Launch(format!("no debugging endpoint at {}", self.endpoint)))
    }

    fn stop_browser(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
        if let Some(p) = self.profile_dir.take() {
            let _ = std::fs::remove_dir_all(p);
        }
    }

    /// Finds or opens a page target and connects to it.
    async fn attach(&mut self) -> Result<(), DriverError> {
        let list: Value = reqwest::get(format!("{}/json/list", self.endpoint))
            .await
            .map_err(|e| DriverError::Launch(e.to_string()))?
            .json()
            .await
            .map_err(|e| DriverError::Launch(e.to_string()))?;
        let existing = list
            .as_array()
            .into_iter()
            .flatten()
            .find(|t| t["type"] == "page")
            .and_then(|t| t["webSocketDebuggerUrl"].as_str())
            .map(str::to_string);
        let ws = match existing {
            Some(ws) => ws,
            None => {
                let t: Value = reqwest::Client::new()
                    .put(format!("{}/json/new?about:blank", self.endpoint))
                    .send()
                    .await
                    .map_err(|e| DriverError::Launch(e.to_string()))?
                    .json()
                    .await
                    .map_err(|e| DriverError::Launch(e.to_string()))?;
                t["webSocketDebuggerUrl"]
                    .as_str()
                    .ok_or_else(|| DriverError::Launch("browser opened no page target".into()))?
                    .to_string()
            }
        };
        self.connect(&ws).await
    }

    async fn connect(&mut self, ws_url: &str) -> Result<(), DriverError> {
        self.conn = None;
        *self.events.crashed.lock().unwrap() = None;
        self.events.requests.lock().unwrap().clear();
        self.events.sockets.lock().unwrap().clear();
        let conn = open_connection(ws_url, self.events.clone()).await?;
        for domain in ["Page", "Network", "DOMStorage", "ServiceWorker"] {
            conn.call(&format!("{domain}.enable"), json!({})).await?;
        }
        if self.pid.is_none() {
            self.pid = conn
                .call("SystemInfo.getProcessInfo", json!({}))
                .await
                .ok()
                .and_then(|v| {
                    v["processInfo"]
                        .as_array()?
                        .iter()
                        .find(|p| p["type"] == "browser")?["id"]
                        .as_i64()
                })
                .map(|p| p as i32);
        }
        self.conn = Some(conn);
        Ok(())
    }

    fn conn(&self) -> Result<&Connection, DriverError> {
        if let Some(reason) = self.events.crashed.lock().unwrap().clone() {
            return Err(DriverError::Crashed(reason));
        }
        self.conn
            .as_ref()
            .ok_or_else(|| DriverError::Crashed("not connected".into()))
    }

    async fn load(&mut self, url: &str, timeout: Duration) -> Result<(), DriverError> {
        let conn = self.conn()?;
        let mut loads = conn.loads.clone();
        loads.borrow_and_update();
        let r = conn.call("Page.navigate", json!({ "url": url })).await?;
        if let Some(err) = r["errorText"].as_str().filter(|e| !e.is_empty()) {
            return Err(DriverError::Navigation {
                url: url.to_string(),
                reason: err.to_string(),
            });
        }
        match tokio::time::timeout(timeout, loads.changed()).await {
            Ok(Ok(())) => Ok(()),
            Ok(Err(_)) => Err(DriverError::Crashed("debugging socket closed".into())),
            Err(_) => {
                if let Some(reason) = self.events.crashed.lock().unwrap().clone() {
                    return Err(DriverError::Crashed(reason));
                }
                Err(DriverError::Timeout {
                    url: url.to_string(),
                    after: timeout,
                })
            }
        }
    }
}

#[async_trait]
impl BrowserDriver for CdpDriver {
    fn name(&self) -> &str {
        "cdp"
    }

    async fn navigate(&mut self, url: &str, timeout: Duration) -> Result<PageLoad, DriverError> {
        *self.events.document_status.lock().unwrap() = 0;
        if let Ok(u) = url::Url::parse(url) {
            if u.scheme().starts_with("http") {
                self.origins.insert(u.origin().ascii_serialization());
            }
        }
        self.load(url, timeout).await?;
        let title = self
            .conn()?
            .call(
                "Runtime.evaluate",
                json!({"expression": "document.title", "returnByValue": true}),
            )
            .await?["result"]["value"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        let status_code = *self.events.document_status.lock().unwrap();
        Ok(PageLoad {
            url: url.to_string(),
            status_code,
            title,
        })
    }

    async fn close_page(&mut self) -> Result<(), DriverError> {
        self.load("about:blank", Duration::from_secs(10)).await
    }

    async fn purge_state(&mut self) -> Result<(), DriverError> {
        let conn = self.conn()?;
        conn.call("Network.clearBrowserCookies", json!({})).await?;
        conn.call("Network.clearBrowserCache", json!({})).await?;
        for origin in &self.origins {
            conn.call(
                "Storage.clearDataForOrigin",
                json!({"origin": origin, "storageTypes": "all"}),
            )
            .await?;
        }
        let scopes: Vec<String> = self.events.service_workers.lock().unwrap().values().cloned().collect();
        for scope in scopes {
            conn.call("ServiceWorker.unregister", json!({ "scopeURL": scope }))
                .await?;
        }
        Ok(())
    }

    async fn stored_state(&mut self) -> Result<StoredState, DriverError> {
        let conn = self.conn()?;
        let mut state = StoredState::default();
        let cookies = conn.call("Network.getAllCookies", json!({})).await?;
        for c in cookies["cookies"].as_array().into_iter().flatten() {
            state.cookies.push(format!(
                "{}@{}",
                c["name"].as_str().unwrap_or_default(),
                c["domain"].as_str().unwrap_or_default()
            ));
        }
        for origin in &self.origins {
            for local in [true, false] {
                let items = conn
                    .call(
                        "DOMStorage.getDOMStorageItems",
                        json!({"storageId": {"securityOrigin": origin, "isLocalStorage": local}}),
                    )
                    .await;
                let Ok(items) = items else { continue };
                for e in items["entries"].as_array().into_iter().flatten() {
                    if let Some(k) = e[0].as_str() {
                        state.storage_keys.push(format!("{origin}|{k}"));
                    }
                }
            }
        }
        state
            .service_workers
            .extend(self.events.service_workers.lock().unwrap().values().cloned());
        Ok(state)
    }

    async fn restart(&mut self) -> Result<(), DriverError> {
        self.conn = None;
        self.events.service_workers.lock().unwrap().clear();
        if self.launch.is_some() {
            self.stop_browser();
            self.start_browser().await?;
            self.attach().await
        } else if !self.endpoint.is_empty() {
            self.session += 1;
            self.attach().await
        } else {
            Err(DriverError::Launch("no endpoint to reconnect to".into()))
        }
    }

    fn network(&self) -> Arc<NetworkLog> {
        self.network.clone()
    }

    fn resource_target(&self) -> ResourceTarget {
        if self.pid.is_none() {
            warn!("browser pid unknown; resource monitors will report it as exited");
        }
        ResourceTarget::ProcessTree(self.pid.unwrap_or(0))
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::from([
            ("driver".to_string(), "cdp".to_string()),
            ("session".to_string(), self.session.to_string()),
        ]);
        if !self.endpoint.is_empty() {
            m.insert("endpoint".into(), self.endpoint.clone());
        }
        if let Some(pid) = self.pid {
            m.insert("browser_pid".into(), pid.to_string());
        }
        m
    }
}

impl Drop for CdpDriver {
    fn drop(&mut self) {
        self.stop_browser();
    }
}
