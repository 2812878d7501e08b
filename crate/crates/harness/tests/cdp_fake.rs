//! The remote-debugging driver against a scripted protocol server.

use std::collections::BTreeSet;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use pagecost_core::record::FrameDirection;
use pagecost_harness::driver::{BrowserDriver, DriverError};
use pagecost_harness::monitors::{build_monitors, MonitorSettings};
use pagecost_harness::probe::{purge_and_verify, run_probe, ProbeConfig};
use pagecost_harness::{CdpDriver, ResourceTarget};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;

#[derive(Default)]
struct FakeBrowser {
    cookies: BTreeSet<String>,
    storage: BTreeSet<String>,
    url: String,
}

fn event(method: &str, params: Value) -> Message {
    Message::Text(json!({"method": method, "params": params}).to_string().into())
}

async fn fake_server() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        while let Ok((sock, _)) = listener.accept().await {
            tokio::spawn(async move {
                let mut ws = tokio_tungstenite::accept_async(sock).await.unwrap();
                let mut b = FakeBrowser::default();
                while let Some(Ok(Message::Text(t))) = ws.next().await {
                    let v: Value = serde_json::from_str(&t).unwrap();
                    let id = v["id"].clone();
                    let p = &v["params"];
                    let mut after = Vec::new();
                    let result = match v["method"].as_str().unwrap() {
                        "SystemInfo.getProcessInfo" => {
                            json!({"processInfo": [{"type": "browser", "id": std::process::id()}]})
                        }
                        "Page.navigate" => {
                            let url = p["url"].as_str().unwrap().to_string();
                            b.url = url.clone();
                            if url.contains("crash") {
                                after.push(event("Inspector.targetCrashed", json!({})));
                            } else if url.contains("refused") {
                                let r = json!({"id": id, "result": {"errorText": "net::ERR_CONNECTION_REFUSED"}});
                                ws.send(Message::Text(r.to_string().into())).await.unwrap();
                                continue;
                            } else if !url.contains("hang") {
                                if url.starts_with("http") {
                                    after.push(event("Network.requestWillBeSent", json!({
                                        "requestId": "1", "type": "Document",
                                        "request": {"url": url}, "initiator": {"type": "other"}})));
                                    after.push(event("Network.responseReceived", json!({
                                        "requestId": "1", "type": "Document", "response": {"status": 200}})));
                                    after.push(event("Network.loadingFinished", json!({
                                        "requestId": "1", "encodedDataLength": 5000})));
                                    after.push(event("Network.webSocketCreated", json!({
                                        "requestId": "9", "url": "ws://pool.test/"})));
                                    after.push(event("Network.webSocketFrameSent", json!({
                                        "requestId": "9", "timestamp": 1.0,
                                        "response": {"opcode": 1, "payloadData": "x".repeat(186)}})));
                                    after.push(event("Network.webSocketFrameReceived", json!({
                                        "requestId": "9", "timestamp": 1.1,
                                        "response": {"opcode": 2, "payloadData": "AAECAw=="}})));
                                }
                                if url.contains("state") {
                                    b.cookies.insert("probe".into());
                                    b.storage.insert("probe".into());
                                    after.push(event("ServiceWorker.workerRegistrationUpdated", json!({
                                        "registrations": [{"registrationId": "7", "scopeURL": "http://site.test/", "isDeleted": false}]})));
                                }
                                after.push(event("Page.loadEventFired", json!({"timestamp": 2.0})));
                            }
                            json!({"frameId": "main"})
                        }
                        "Runtime.evaluate" => json!({"result": {"type": "string", "value": format!("title of {}", b.url)}}),
                        "Network.getAllCookies" => json!({"cookies": b.cookies.iter()
                            .map(|c| json!({"name": c, "domain": "site.test"})).collect::<Vec<_>>()}),
                        "Network.clearBrowserCookies" => {
                            b.cookies.clear();
                            json!({})
                        }
                        "Storage.clearDataForOrigin" => {
                            b.storage.clear();
                            json!({})
                        }
                        "DOMStorage.getDOMStorageItems" => {
                            let local = p["storageId"]["isLocalStorage"].as_bool().unwrap();
                            let entries: Vec<Value> = if local {
                                b.storage.iter().map(|k| json!([k, "1"])).collect()
                            } else {
                                vec![]
                            };
                            json!({"entries": entries})
                        }
                        "ServiceWorker.unregister" => {
                            after.push(event("ServiceWorker.workerRegistrationUpdated", json!({
                                "registrations": [{"registrationId": "7", "scopeURL": p["scopeURL"], "isDeleted": true}]})));
                            json!({})
                        }
                        _ => json!({}),
                    };
                    let reply = json!({"id": id, "result": result}).to_string();
                    ws.send(Message::Text(reply.into())).await.unwrap();
                    for e in after {
                        ws.send(e).await.unwrap();
                    }
                }
            });
        }
    });
    format!("ws://{addr}/devtools/page/1")
}

#[tokio::test]
async fn navigation_records_network_events() {
    let ws = fake_server().await;
    let mut d = CdpDriver::connect_page(&ws, None).await.unwrap();
    let load = d
        .navigate("http://site.test/", Duration::from_secs(2))
        .await
        .unwrap();
    assert_eq!(load.status_code, 200);
    assert_eq!(load.title, "title of http://site.test/");
    let cap = d.network().drain();
    assert_eq!(cap.requests.len(), 1);
    assert_eq!(cap.requests[0].transferred_bytes, 5000);
    assert_eq!(cap.requests[0].resource_type, "document");
    assert_eq!(cap.frames.len(), 2);
    assert_eq!(cap.frames[0].direction, FrameDirection::Sent);
    assert_eq!(cap.frames[0].payload_bytes, 186);
    assert_eq!(cap.frames[1].payload_bytes, 4);
    assert_eq!(cap.frames[0].endpoint_url, "ws://pool.test/");
    match d.resource_target() {
        ResourceTarget::ProcessTree(pid) => assert_eq!(pid, std::process::id() as i32),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn purge_clears_cookies_storage_and_workers() {
    let ws = fake_server().await;
    let mut d = CdpDriver::connect_page(&ws, None).await.unwrap();
    purge_and_verify(&mut d).await.unwrap();
    d.navigate("http://site.test/state", Duration::from_secs(2))
        .await
        .unwrap();
    let held = d.stored_state().await.unwrap();
    assert_eq!(held.cookies, ["probe@site.test"]);
    assert_eq!(held.storage_keys, ["http://site.test|probe"]);
    assert_eq!(held.service_workers, ["http://site.test/"]);
    purge_and_verify(&mut d).await.unwrap();
    // the unregister event arrives after the reply
    tokio::time::sleep(Duration::from_millis(50)).await;
    assert!(d.stored_state().await.unwrap().is_empty());
}

#[tokio::test]
async fn load_failures_are_classified() {
    let ws = fake_server().await;
    let mut d = CdpDriver::connect_page(&ws, None).await.unwrap();
    let t = Duration::from_millis(300);
    assert!(matches!(
        d.navigate("http://site.test/hang", t).await,
        Err(DriverError::Timeout { .. })
    ));
    assert!(matches!(
        d.navigate("http://site.test/refused", t).await,
        Err(DriverError::Navigation { .. })
    ));
    assert!(matches!(
        d.navigate("http://site.test/crash", t).await,
        Err(DriverError::Crashed(_))
    ));
    // stays crashed until restarted
    assert!(matches!(d.stored_state().await, Err(DriverError::Crashed(_))));
}

#[tokio::test]
async fn probe_runs_over_the_protocol() {
    let ws = fake_server().await;
    let mut d = CdpDriver::connect_page(&ws, None).await.unwrap();
    let ids = vec!["cpu".to_string(), "memory".to_string(), "network".to_string()];
    let mut ms = build_monitors(&ids, &MonitorSettings::default()).unwrap().0;
    let cfg = ProbeConfig {
        target_url: "http://site.test/".into(),
        phase1_duration: 1.0,
        phase2_duration: 1.0,
        sample_interval: 0.25,
        enabled_monitors: ids.iter().cloned().collect(),
        ..Default::default()
    };
    let r = run_probe(&cfg, &mut d, &mut ms, None).await.unwrap();
    assert!(r.status.is_completed(), "{:?}", r.status);
    r.validate().unwrap();
    assert_eq!(r.series("cpu").unwrap().tick_count(), 4);
    assert!(r.channel_mean("memory", "resident").unwrap() > 0.0);
    assert_eq!(r.frames.len(), 2);
    assert_eq!(r.metadata["driver"], "cdp");
}
