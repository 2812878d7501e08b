//! Scripted browser that needs no browser binary.
//!
//! Fixture pages are fetched over HTTP and their embedded manifest is acted
//! out: subresources are requested, miner pages start hashing threads and a
//! PoW socket, and the state self-test page plants artifacts. Other URLs can
//! be given canned scripts that replay recorded network events and burn a
//! configured amount of CPU.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use md5::{Digest, Md5};
use pagecost_client::PowClient;
use pagecost_core::manifest::{MinerParams, PageKind, PageManifest, SharePolicy};
use pagecost_core::record::{now_timestamp, FrameDirection, RequestRecord, WsFrameRecord};
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tracing::{debug, warn};

use crate::driver::{state_title, BrowserDriver, DriverError, PageLoad, StoredState};
use crate::network::NetworkLog;
use crate::target::{current_tid, PageAccounting, ResourceTarget};

/// Busy/idle time slice of the hashing workers.
pub const SLICE: Duration = Duration::from_millis(100);
/// Memory each hashing worker keeps resident, like a CryptoNight scratchpad.
pub const SCRATCHPAD_BYTES: usize = 2 << 20;

const STATE_COOKIE: &str = "pagecost_state";
const STATE_STORAGE_KEY: &str = "pagecost_state";
const STATE_WORKER: &str = "/lib/statetest-sw.js";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedRequest {
    pub url: String,
    #[serde(default)]
    pub initiator: String,
    pub transferred_bytes: u64,
    #[serde(default)]
    pub resource_type: String,
    #[serde(default = "ok_status")]
    pub status_code: u16,
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedFrame {
    /// Seconds after navigation.
    pub offset_s: f64,
    pub direction: FrameDirection,
    pub payload_bytes: u64,
    pub endpoint_url: String,
}

/// Behavior replayed when a canned URL is loaded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannedPage {
    pub title: String,
    pub requests: Vec<CannedRequest>,
    pub frames: Vec<CannedFrame>,
    pub cpu_workers: u32,
    pub throttle: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MockOptions {
    pub canned: BTreeMap<String, CannedPage>,
    /// The next this-many navigations crash the session.
    pub crashes: u32,
    /// Purge reports success but leaves state behind.
    pub broken_purge: bool,
}

struct LoadedPage {
    stop: Arc<AtomicBool>,
    stop_tx: watch::Sender<bool>,
    workers: Vec<std::thread::JoinHandle<()>>,
    tasks: Vec<tokio::task::JoinHandle<()>>,
    memory: u64,
}

pub struct MockBrowser {
    http: reqwest::Client,
    network: Arc<NetworkLog>,
    acct: Arc<PageAccounting>,
    stored: BTreeSet<(String, String)>,
    page: Option<LoadedPage>,
    hashes: Arc<AtomicU64>,
    crashed: bool,
    options: MockOptions,
    session: u64,
}

impl Default for MockBrowser {
    fn default() -> Self {
        Self::new(MockOptions::default())
    }
}

impl MockBrowser {
    pub fn new(options: MockOptions) -> Self {
        Self {
            http: reqwest::Client::new(),
            network: Arc::new(NetworkLog::default()),
            acct: PageAccounting::new(),
            stored: BTreeSet::new(),
            page: None,
            hashes: Arc::new(AtomicU64::new(0)),
            crashed: false,
            options,
            session: 1,
        }
    }

    /// Hashes completed by miner workers since the current page loaded.
    pub fn hash_count(&self) -> u64 {
        self.hashes.load(Ordering::Relaxed)
    }

    pub fn options_mut(&mut self) -> &mut MockOptions {
        &mut self.options
    }

    fn request(&self, url: &str, initiator: &str, kind: &str, bytes: u64, status: u16) {
        self.network.push_request(RequestRecord {
            timestamp: now_timestamp(),
            url: url.to_string(),
            initiator: initiator.to_string(),
            transferred_bytes: bytes,
            resource_type: kind.to_string(),
            status_code: status,
        });
    }

    async fn fetch(&self, url: &str) -> Result<(u16, Vec<u8>), reqwest::Error> {
        let resp = self.http.get(url).send().await?;
        let status = resp.status().as_u16();
        Ok((status, resp.bytes().await?.to_vec()))
    }

    async fn load(&mut self, url: &str, page: &mut LoadedPage) -> Result<PageLoad, DriverError> {
        if let Some(canned) = self.options.canned.get(url).cloned() {
            return Ok(self.replay(url, &canned, page));
        }
        let (status, body) = self.fetch(url).await.map_err(|e| DriverError::Navigation {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
        self.request(url, "navigation", "document", body.len() as u64, status);
        page.memory += body.len() as u64;
        self.acct.add_memory(body.len() as u64, body.len() as u64);
        let html = String::from_utf8_lossy(&body);
        let manifest = match PageManifest::extract(&html) {
            Some(Ok(m)) => Some(m),
            Some(Err(e)) => {
                warn!(%url, error = %e, "page manifest unreadable; treating as static page");
                None
            }
            None => None,
        };
        let mut title = title_of(&html);
        let Some(manifest) = manifest else {
            return Ok(PageLoad {
                url: url.to_string(),
                status_code: status,
                title,
            });
        };
        for res in &manifest.resources {
            let kind = if res.ends_with(".js") || manifest.kind == PageKind::Ads {
                "script"
            } else {
                "other"
            };
            match self.fetch(res).await {
                Ok((st, b)) => {
                    page.memory += b.len() as u64;
                    self.acct.add_memory(b.len() as u64, b.len() as u64);
                    self.request(res, url, kind, b.len() as u64, st);
                }
                Err(e) => {
                    debug!(resource = %res, error = %e, "subresource failed");
                    self.request(res, url, kind, 0, 0);
                }
            }
        }
        if manifest.plant_state {
            let found = self.plant_state(url);
            title = state_title(&found);
        }
        if let Some(miner) = &manifest.miner {
            self.start_miner(miner, page);
        }
        Ok(PageLoad {
            url: url.to_string(),
            status_code: status,
            title,
        })
    }

    /// Reports what was already present, then plants all three artifacts.
    fn plant_state(&mut self, url: &str) -> Vec<&'static str> {
        let origin = origin_of(url);
        let wanted = [
            ("cookie", STATE_COOKIE),
            ("storage", STATE_STORAGE_KEY),
            ("service_worker", STATE_WORKER),
        ];
        let mut found = Vec::new();
        for (kind, name) in wanted {
            let key = (kind.to_string(), format!("{origin}|{name}"));
            if self.stored.contains(&key) {
                found.push(kind);
            }
            self.stored.insert(key);
        }
        found
    }

    fn replay(&mut self, url: &str, canned: &CannedPage, page: &mut LoadedPage) -> PageLoad {
        self.request(url, "navigation", "document", 0, 200);
        for r in &canned.requests {
            self.request(&r.url, &r.initiator, &r.resource_type, r.transferred_bytes, r.status_code);
        }
        if !canned.frames.is_empty() {
            let frames = canned.frames.clone();
            let log = self.network.clone();
            let mut stop = page.stop_tx.subscribe();
            page.tasks.push(tokio::spawn(async move {
                let start = tokio::time::Instant::now();
                for f in frames {
                    let at = start + Duration::from_secs_f64(f.offset_s.max(0.0));
                    tokio::select! {
                        _ = tokio::time::sleep_until(at) => {}
                        _ = stop.changed() => return,
                    }
                    log.push_frame(WsFrameRecord {
                        timestamp: now_timestamp(),
                        direction: f.direction,
                        payload_bytes: f.payload_bytes,
                        endpoint_url: f.endpoint_url,
                    });
                }
            }));
        }
        for _ in 0..canned.cpu_workers {
            self.spawn_worker(canned.throttle, page);
        }
        PageLoad {
            url: url.to_string(),
            status_code: 200,
            title: canned.title.clone(),
        }
    }

    fn spawn_worker(&self, throttle: f64, page: &mut LoadedPage) {
        let stop = page.stop.clone();
        let acct = self.acct.clone();
        let hashes = self.hashes.clone();
        let (tx, rx) = std::sync::mpsc::channel();
        page.workers.push(std::thread::spawn(move || {
            let tid = current_tid();
            acct.register_thread(tid);
            let _ = tx.send(());
            hash_worker(&stop, throttle, &hashes, &acct);
            acct.retire_thread(tid);
        }));
        // the thread is attributed to the page before navigation returns
        let _ = rx.recv();
    }

    fn start_miner(&self, params: &MinerParams, page: &mut LoadedPage) {
        for _ in 0..params.workers {
            self.spawn_worker(params.throttle, page);
        }
        let log = self.network.clone();
        let hashes = self.hashes.clone();
        let stop = page.stop_tx.subscribe();
        let params = params.clone();
        page.tasks.push(tokio::spawn(pow_loop(params, hashes, log, stop)));
    }

    async fn unload(&mut self) {
        let Some(page) = self.page.take() else {
            return;
        };
        page.stop.store(true, Ordering::Relaxed);
        let _ = page.stop_tx.send(true);
        for t in page.tasks {
            if tokio::time::timeout(Duration::from_secs(5), t).await.is_err() {
                warn!("page task did not stop in time");
            }
        }
        let workers = page.workers;
        let _ = tokio::task::spawn_blocking(move || {
            for w in workers {
                let _ = w.join();
            }
        })
        .await;
        self.acct.release_memory(page.memory, page.memory);
    }
}

fn title_of(html: &str) -> String {
    let Some(start) = html.find("<title>") else {
        return String::new();
    };
    let rest = &html[start + 7..];
    rest[..rest.find("</title>").unwrap_or(rest.len())].trim().to_string()
}

fn origin_of(url: &str) -> String {
    url::Url::parse(url)
        .map(|u| u.origin().ascii_serialization())
        .unwrap_or_else(|_| url.to_string())
}

/// Hashes in 100 ms slices, busy for `1 - throttle` of each.
fn hash_worker(stop: &AtomicBool, throttle: f64, hashes: &AtomicU64, acct: &PageAccounting) {
    let mut scratch = vec![0u8; SCRATCHPAD_BYTES];
    // touch every page so the scratchpad is resident
    for (i, b) in scratch.iter_mut().enumerate().step_by(4096) {
        *b = i as u8;
    }
    acct.add_memory(SCRATCHPAD_BYTES as u64, SCRATCHPAD_BYTES as u64);
    let busy = SLICE.mul_f64((1.0 - throttle).clamp(0.0, 1.0));
    let mut buf = [0u8; 64];
    let mut cursor = 0usize;
    while !stop.load(Ordering::Relaxed) {
        let slice_start = Instant::now();
        while slice_start.elapsed() < busy {
            for _ in 0..64 {
                let d = Md5::digest(buf);
                buf[..16].copy_from_slice(&d);
                buf[16] = scratch[cursor];
                scratch[cursor] = d[0];
                cursor = (cursor + 4099) % SCRATCHPAD_BYTES;
            }
            hashes.fetch_add(64, Ordering::Relaxed);
            if stop.load(Ordering::Relaxed) {
                break;
            }
        }
        if let Some(idle) = SLICE.checked_sub(slice_start.elapsed()) {
            std::thread::sleep(idle);
        }
    }
    std::hint::black_box(&scratch);
    acct.release_memory(SCRATCHPAD_BYTES as u64, SCRATCHPAD_BYTES as u64);
}

/// Submits shares as the page's policy dictates, reconnecting with backoff.
async fn pow_loop(
    params: MinerParams,
    hashes: Arc<AtomicU64>,
    log: Arc<NetworkLog>,
    mut stop: watch::Receiver<bool>,
) {
    let mut reported = 0u64;
    let mut nonce = 0u64;
    let mut backoff = Duration::from_millis(250);
    while !*stop.borrow() {
        let endpoint = params.socket_url.clone();
        let frame_log = log.clone();
        let observer = Box::new(move |dir: FrameDirection, len: usize| {
            frame_log.push_frame(WsFrameRecord {
                timestamp: now_timestamp(),
                direction: dir,
                payload_bytes: len as u64,
                endpoint_url: endpoint.clone(),
            });
        });
        let mut client = match PowClient::connect_observed(&params.socket_url, params.frame_size, Some(observer)).await {
            Ok(c) => c,
            Err(e) => {
                debug!(error = %e, "pow connect failed");
                tokio::select! {
                    _ = tokio::time::sleep(backoff) => {}
                    _ = stop.changed() => break,
                }
                backoff = (backoff * 2).min(Duration::from_secs(8));
                continue;
            }
        };
        backoff = Duration::from_millis(250);
        let result = match params.share_policy {
            SharePolicy::Interval { seconds } => {
                let period = Duration::from_secs_f64(seconds.max(1e-3));
                let mut tick = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
                tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                loop {
                    tokio::select! {
                        _ = tick.tick() => {}
                        _ = stop.changed() => break Ok(()),
                    }
                    let done = hashes.load(Ordering::Relaxed);
                    let claim = done - reported;
                    if claim == 0 {
                        continue;
                    }
                    nonce += 1;
                    if let Err(e) = client.submit(nonce, claim).await {
                        break Err(e);
                    }
                    reported = done;
                }
            }
            SharePolicy::Difficulty { hashes: per_share } => {
                let per_share = per_share.max(1);
                let mut tick = tokio::time::interval(Duration::from_millis(5));
                'outer: loop {
                    tokio::select! {
                        _ = tick.tick() => {}
                        _ = stop.changed() => break Ok(()),
                    }
                    while hashes.load(Ordering::Relaxed) - reported >= per_share {
                        nonce += 1;
                        if let Err(e) = client.submit(nonce, per_share).await {
                            break 'outer Err(e);
                        }
                        reported += per_share;
                    }
                }
            }
        };
        match result {
            Ok(()) => {
                let _ = client.close().await;
                break;
            }
            Err(e) => debug!(error = %e, "pow socket lost; reconnecting"),
        }
    }
}

#[async_trait]
impl BrowserDriver for MockBrowser {
    fn name(&self) -> &str {
        "mock"
    }

    async fn navigate(&mut self, url: &str, timeout: Duration) -> Result<PageLoad, DriverError> {
        if self.crashed {
            return Err(DriverError::Crashed("session needs restart".into()));
        }
        self.unload().await;
        if self.options.crashes > 0 {
            self.options.crashes -= 1;
            self.crashed = true;
            return Err(DriverError::Crashed(format!("injected crash loading {url}")));
        }
        self.acct.reset();
        self.hashes.store(0, Ordering::Relaxed);
        let (stop_tx, _) = watch::channel(false);
        let mut page = LoadedPage {
            stop: Arc::new(AtomicBool::new(false)),
            stop_tx,
            workers: Vec::new(),
            tasks: Vec::new(),
            memory: 0,
        };
        let result = tokio::time::timeout(timeout, self.load(url, &mut page)).await;
        // keep whatever started so close_page can stop it
        self.page = Some(page);
        match result {
            Ok(r) => r,
            Err(_) => Err(DriverError::Timeout {
                url: url.to_string(),
                after: timeout,
            }),
        }
    }

    async fn close_page(&mut self) -> Result<(), DriverError> {
        self.unload().await;
        Ok(())
    }

    async fn purge_state(&mut self) -> Result<(), DriverError> {
        if self.crashed {
            return Err(DriverError::Crashed("session needs restart".into()));
        }
        if !self.options.broken_purge {
            self.stored.clear();
        }
        Ok(())
    }

    async fn stored_state(&mut self) -> Result<StoredState, DriverError> {
        if self.crashed {
            return Err(DriverError::Crashed("session needs restart".into()));
        }
        let mut s = StoredState::default();
        for (kind, name) in &self.stored {
            match kind.as_str() {
                "cookie" => s.cookies.push(name.clone()),
                "storage" => s.storage_keys.push(name.clone()),
                _ => s.service_workers.push(name.clone()),
            }
        }
        Ok(s)
    }

    async fn restart(&mut self) -> Result<(), DriverError> {
        self.unload().await;
        self.crashed = false;
        // a fresh session starts with an empty profile
        self.stored.clear();
        self.session += 1;
        Ok(())
    }

    fn network(&self) -> Arc<NetworkLog> {
        self.network.clone()
    }

    fn resource_target(&self) -> ResourceTarget {
        ResourceTarget::Page(self.acct.clone())
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("driver".to_string(), "mock".to_string()),
            ("session".to_string(), self.session.to_string()),
        ])
    }
}

impl Drop for MockBrowser {
    fn drop(&mut self) {
        if let Some(page) = self.page.take() {
            page.stop.store(true, Ordering::Relaxed);
            let _ = page.stop_tx.send(true);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn title_extraction() {
        assert_eq!(title_of("<html><title> a b </title>"), "a b");
        assert_eq!(title_of("<html>"), "");
    }

    #[test]
    fn origins() {
        assert_eq!(origin_of("http://127.0.0.1:80/x?y"), "http://127.0.0.1");
        assert_eq!(origin_of("http://a.test:8080/x"), "http://a.test:8080");
    }

    #[test]
    fn full_throttle_does_no_work() {
        let stop = AtomicBool::new(false);
        let hashes = AtomicU64::new(0);
        let acct = PageAccounting::new();
        std::thread::scope(|s| {
            s.spawn(|| hash_worker(&stop, 1.0, &hashes, &acct));
            std::thread::sleep(Duration::from_millis(250));
            stop.store(true, Ordering::Relaxed);
        });
        assert_eq!(hashes.load(Ordering::Relaxed), 0);
        assert_eq!(acct.memory(), (0, 0));
    }

    #[tokio::test]
    async fn canned_page_replays_events() {
        let canned = CannedPage {
            title: "canned".into(),
            requests: vec![CannedRequest {
                url: "http://cdn.test/a.js".into(),
                initiator: "http://site.test/".into(),
                transferred_bytes: 1234,
                resource_type: "script".into(),
                status_code: 200,
            }],
            frames: vec![CannedFrame {
                offset_s: 0.01,
                direction: FrameDirection::Received,
                payload_bytes: 186,
                endpoint_url: "wss://pool.test/".into(),
            }],
            cpu_workers: 0,
            throttle: 0.0,
        };
        let mut b = MockBrowser::new(MockOptions {
            canned: BTreeMap::from([("http://site.test/".to_string(), canned)]),
            ..Default::default()
        });
        let load = b.navigate("http://site.test/", Duration::from_secs(1)).await.unwrap();
        assert_eq!(load.title, "canned");
        tokio::time::sleep(Duration::from_millis(100)).await;
        b.close_page().await.unwrap();
        let cap = b.network().drain();
        assert_eq!(cap.requests.len(), 2);
        assert_eq!(cap.requests[1].transferred_bytes, 1234);
        assert_eq!(cap.frames.len(), 1);
    }

    #[tokio::test]
    async fn injected_crash_needs_restart() {
        let mut b = MockBrowser::new(MockOptions {
            crashes: 1,
            ..Default::default()
        });
        let t = Duration::from_secs(1);
        assert!(matches!(b.navigate("http://x.test/", t).await, Err(DriverError::Crashed(_))));
        assert!(matches!(b.navigate("http://x.test/", t).await, Err(DriverError::Crashed(_))));
        b.restart().await.unwrap();
        assert_eq!(b.metadata()["session"], "2");
    }
}
