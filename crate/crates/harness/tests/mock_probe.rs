use std::collections::BTreeSet;
use std::time::Duration;

use pagecost_core::record::{FrameDirection, ProbeStatus};
use pagecost_harness::bench::Calibration;
use pagecost_harness::campaign::{load_campaign, load_manifest, run_campaign, CampaignSink};
use pagecost_harness::driver::{BrowserDriver, STATE_ARTIFACTS};
use pagecost_harness::monitors::{build_monitors, Monitor, MonitorSettings};
use pagecost_harness::probe::{purge_and_verify, run_probe, HarnessError, ProbeConfig};
use pagecost_harness::{MockBrowser, MockOptions};
use pagecost_service::{serve, FixtureConfig, ServiceHandle};
use tokio::sync::Mutex;

// CPU-heavy tests would disturb each other's measurements
static CPU: Mutex<()> = Mutex::const_new(());

async fn service() -> ServiceHandle {
    serve(FixtureConfig::default()).await.unwrap()
}

fn monitors(ids: &[&str]) -> Vec<Box<dyn Monitor>> {
    let ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    build_monitors(&ids, &MonitorSettings::default()).unwrap().0
}

fn quick(url: &str, monitors: &[&str], phase1: f64, interval: f64) -> ProbeConfig {
    ProbeConfig {
        target_url: url.into(),
        phase1_duration: phase1,
        phase2_duration: interval.max(0.05),
        sample_interval: interval,
        enabled_monitors: monitors.iter().map(|s| s.to_string()).collect(),
        navigation_timeout: 5.0,
        ..Default::default()
    }
}

#[tokio::test]
async fn control_page_cadence() {
    let _g = CPU.lock().await;
    let svc = service().await;
    let mut driver = MockBrowser::default();
    let mut ms = monitors(&["cpu", "memory"]);
    let cfg = quick(&svc.url("/control"), &["cpu", "memory"], 10.0, 1.0);
    let r = run_probe(&cfg, &mut driver, &mut ms, None).await.unwrap();
    assert_eq!(r.status, ProbeStatus::Completed);
    r.validate().unwrap();
    let cpu = r.series("cpu").unwrap();
    let ts = cpu.timestamps();
    assert!(ts.len() >= 9 && ts.len() <= 11, "{} samples", ts.len());
    for w in ts.windows(2) {
        assert!((w[1] - w[0] - 1.0).abs() <= 0.2, "spacing {}", w[1] - w[0]);
    }
    assert!(cpu.mean("total").unwrap() < 50.0);
    assert_eq!(r.requests.len(), 1);
    assert_eq!(r.requests[0].transferred_bytes, 4096);
    assert!(r.phase2.is_empty());
    // monitors are handed back for the next probe
    assert_eq!(ms.len(), 2);
}

#[tokio::test]
async fn unreachable_url_is_a_failed_probe() {
    let mut driver = MockBrowser::default();
    let mut ms = monitors(&["cpu"]);
    let cfg = quick("http://127.0.0.1:9/", &["cpu"], 1.0, 0.5);
    let r = run_probe(&cfg, &mut driver, &mut ms, None).await.unwrap();
    let ProbeStatus::Failed { error } = &r.status else {
        panic!("expected failure")
    };
    assert!(error.contains("127.0.0.1:9"));
    assert_eq!(r.series("cpu").unwrap().samples.len(), 0);
}

#[tokio::test]
async fn navigation_timeout_keeps_partial_data() {
    // accepts connections and never answers
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let hold = tokio::spawn(async move {
        let mut socks = Vec::new();
        while let Ok((s, _)) = listener.accept().await {
            socks.push(s);
        }
    });
    let mut driver = MockBrowser::default();
    let mut ms = monitors(&["cpu"]);
    let mut cfg = quick(&format!("http://{addr}/"), &["cpu"], 1.0, 0.5);
    cfg.navigation_timeout = 0.3;
    let r = run_probe(&cfg, &mut driver, &mut ms, None).await.unwrap();
    let ProbeStatus::Failed { error } = &r.status else {
        panic!("expected failure")
    };
    assert!(error.contains("timed out"), "{error}");
    assert!(r.phase1.contains_key("cpu"));
    hold.abort();
}

#[tokio::test]
async fn crash_is_retried_once() {
    let svc = service().await;
    let cfg = quick(&svc.url("/control"), &["cpu"], 0.5, 0.25);
    let mut ms = monitors(&["cpu"]);

    let mut once = MockBrowser::new(MockOptions {
        crashes: 1,
        ..Default::default()
    });
    let r = run_probe(&cfg, &mut once, &mut ms, None).await.unwrap();
    assert_eq!(r.status, ProbeStatus::Completed);
    assert_eq!(r.attempts, 2);
    assert_eq!(r.metadata["session"], "2");

    let mut twice = MockBrowser::new(MockOptions {
        crashes: 2,
        ..Default::default()
    });
    let r = run_probe(&cfg, &mut twice, &mut ms, None).await.unwrap();
    assert!(!r.status.is_completed());
    assert_eq!(r.attempts, 2);
}

#[tokio::test]
async fn purge_clears_planted_state() {
    let svc = service().await;
    let url = svc.url("/state-test");
    let t = Duration::from_secs(5);
    let mut d = MockBrowser::default();
    // fresh session: purge is a no-op success
    purge_and_verify(&mut d).await.unwrap();

    let first = d.navigate(&url, t).await.unwrap();
    assert_eq!(first.title, "state-test found: none");
    let second = d.navigate(&url, t).await.unwrap();
    assert_eq!(second.title, format!("state-test found: {}", STATE_ARTIFACTS.join(",")));
    let held = d.stored_state().await.unwrap();
    assert_eq!(held.cookies.len(), 1);
    assert_eq!(held.storage_keys.len(), 1);
    assert_eq!(held.service_workers.len(), 1);

    purge_and_verify(&mut d).await.unwrap();
    assert!(d.stored_state().await.unwrap().is_empty());
    let after = d.navigate(&url, t).await.unwrap();
    assert_eq!(after.title, "state-test found: none");
}

#[tokio::test]
async fn consecutive_probes_are_isolated() {
    let svc = service().await;
    let url = svc.url("/state-test");
    let mut d = MockBrowser::default();
    let mut ms = monitors(&["cpu"]);
    let cfg = quick(&url, &["cpu"], 0.1, 0.05);
    for _ in 0..10 {
        let r = run_probe(&cfg, &mut d, &mut ms, None).await.unwrap();
        assert_eq!(r.metadata["state_found"], "none");
    }
}

#[tokio::test]
async fn broken_purge_stops_the_campaign() {
    let svc = service().await;
    let dir = tempfile::tempdir().unwrap();
    let targets = vec![svc.url("/state-test"), svc.url("/control")];
    let mut d = MockBrowser::new(MockOptions {
        broken_purge: true,
        ..Default::default()
    });
    let mut ms = monitors(&["cpu"]);
    let cfg = quick("", &["cpu"], 0.2, 0.1);
    let mut sink = CampaignSink::create(dir.path(), &targets).unwrap();
    let err = run_campaign(&targets, &cfg, &mut d, &mut ms, None, &mut sink)
        .await
        .unwrap_err();
    assert!(matches!(err, HarnessError::PurgeIncomplete { .. }));
    let m = load_manifest(dir.path()).unwrap();
    assert!(m.aborted.is_some());
    assert!(m.entries.is_empty());
}

#[tokio::test]
async fn campaign_keeps_order_and_duplicates() {
    let svc = service().await;
    let dir = tempfile::tempdir().unwrap();
    let targets = vec![
        svc.url("/control"),
        svc.url("/ads"),
        "http://127.0.0.1:9/".to_string(),
        svc.url("/control"),
    ];
    let mut d = MockBrowser::default();
    let mut ms = monitors(&["cpu", "network"]);
    let cfg = quick("", &["cpu", "network"], 0.3, 0.1);
    let mut sink = CampaignSink::create(dir.path(), &targets).unwrap();
    let results = run_campaign(&targets, &cfg, &mut d, &mut ms, None, &mut sink)
        .await
        .unwrap();
    let urls: Vec<_> = results.iter().map(|r| r.target_url.clone()).collect();
    assert_eq!(urls, targets);
    assert!(!results[2].status.is_completed());
    assert!(results[3].status.is_completed());
    assert_eq!(results[1].requests.len(), 4);
    assert_eq!(load_campaign(dir.path()).unwrap(), results);
}

#[tokio::test]
async fn interrupted_campaign_keeps_complete_results() {
    let svc = service().await;
    let dir = tempfile::tempdir().unwrap();
    let targets = vec![svc.url("/control"), svc.url("/ads"), svc.url("/control")];
    let path = dir.path().to_path_buf();
    let run_targets = targets.clone();
    let task = tokio::spawn(async move {
        let mut d = MockBrowser::default();
        let mut ms = monitors(&["cpu"]);
        let cfg = quick("", &["cpu"], 1.0, 0.1);
        let mut sink = CampaignSink::create(&path, &run_targets).unwrap();
        run_campaign(&run_targets, &cfg, &mut d, &mut ms, None, &mut sink).await
    });
    // kill the campaign as soon as two results have landed
    loop {
        tokio::time::sleep(Duration::from_millis(20)).await;
        if load_manifest(dir.path()).is_ok_and(|m| m.entries.len() >= 2) {
            task.abort();
            break;
        }
    }
    let _ = task.await;
    let results = load_campaign(dir.path()).unwrap();
    assert_eq!(results.len(), 2);
    for r in &results {
        assert!(r.status.is_completed());
        r.validate().unwrap();
    }
}

#[tokio::test]
async fn miner_frames_match_ledger() {
    let _g = CPU.lock().await;
    let svc = service().await;
    let url = svc.url("/miner?workers=1&throttle=0.8&interval=0.2");
    let mut d = MockBrowser::default();
    let mut ms = monitors(&["network"]);
    let cfg = quick(&url, &["network"], 3.0, 0.5);
    let r = run_probe(&cfg, &mut d, &mut ms, None).await.unwrap();
    assert!(r.status.is_completed());
    let ledger = svc.ledger().snapshot();
    assert_eq!(ledger.totals.sessions, 1);
    let sent: u64 = r
        .frames
        .iter()
        .filter(|f| f.direction == FrameDirection::Sent)
        .map(|f| f.payload_bytes)
        .sum();
    let received: u64 = r
        .frames
        .iter()
        .filter(|f| f.direction == FrameDirection::Received)
        .map(|f| f.payload_bytes)
        .sum();
    assert_eq!(sent, ledger.sessions[0].bytes_in);
    assert_eq!(received, ledger.sessions[0].bytes_out);
    assert!(r.frames.iter().all(|f| f.payload_bytes == 186));
    let accepted = ledger.totals.accepted as f64;
    assert!((accepted - 15.0).abs() <= 2.0, "{accepted} shares");
    // the network monitor saw the same bytes the log recorded
    let seen: f64 = r.series("network").unwrap().values("frame_bytes").iter().sum();
    assert!(seen <= (sent + received) as f64);
}

#[tokio::test]
async fn full_throttle_sends_no_shares() {
    let svc = service().await;
    let url = svc.url("/miner?workers=2&throttle=1&interval=0.1");
    let mut d = MockBrowser::default();
    let mut ms = monitors(&["cpu"]);
    let r = run_probe(&quick(&url, &["cpu"], 1.0, 0.5), &mut d, &mut ms, None)
        .await
        .unwrap();
    assert!(r.status.is_completed());
    assert_eq!(svc.ledger().snapshot().totals.received, 0);
}

#[tokio::test]
async fn miner_outweighs_control() {
    let _g = CPU.lock().await;
    let svc = service().await;
    let phase2 = Duration::from_secs(1);
    let mut cal = Calibration::default();
    cal.calibrate(1, phase2).unwrap();
    let all = ["cpu", "memory", "power", "temperature", "interference"];
    let mut ms = monitors(&all);
    let mut d = MockBrowser::default();
    let probe = |url: String| {
        let mut cfg = quick(&url, &all, 2.0, 0.5);
        cfg.phase2_duration = 1.0;
        cfg.interference_workers = vec![1];
        cfg
    };
    let control = run_probe(&probe(svc.url("/control")), &mut d, &mut ms, Some(&cal))
        .await
        .unwrap();
    let miner = run_probe(
        &probe(svc.url("/miner?workers=2&throttle=0")),
        &mut d,
        &mut ms,
        Some(&cal),
    )
    .await
    .unwrap();
    assert!(control.status.is_completed() && miner.status.is_completed());
    let cpu = |r: &pagecost_core::record::ProbeResult| r.channel_mean("cpu", "total").unwrap();
    assert!(cpu(&miner) > 10.0 * cpu(&control).max(1.0));
    let rss = |r: &pagecost_core::record::ProbeResult| r.channel_mean("memory", "resident").unwrap();
    assert!(rss(&miner) > rss(&control));
    let watts = |r: &pagecost_core::record::ProbeResult| r.channel_mean("power", "rail_12v_a").unwrap();
    assert!(watts(&miner) > watts(&control));
    let temp = |r: &pagecost_core::record::ProbeResult| r.channel_mean("temperature", "core0").unwrap();
    assert!(temp(&miner) > temp(&control));
    assert!(miner.interference_ratio(1).unwrap() < control.interference_ratio(1).unwrap());
}

#[tokio::test]
async fn missing_calibration_is_reported() {
    let mut d = MockBrowser::default();
    let mut ms = monitors(&["cpu"]);
    let cfg = ProbeConfig {
        enabled_monitors: BTreeSet::from(["cpu".to_string(), "interference".to_string()]),
        ..quick("http://127.0.0.1:9/", &["cpu"], 1.0, 0.5)
    };
    let err = run_probe(&cfg, &mut d, &mut ms, None).await.unwrap_err();
    assert!(err.to_string().contains("calibration"));
}
