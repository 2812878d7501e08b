use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use pagecost_client::{ApiClient, ClientError, PowClient, ShareOutcome};
use pagecost_core::manifest::{PageKind, PageManifest};
use pagecost_core::pow::{revenue_crosscheck, RejectReason};
use pagecost_core::profit::{
    self, AdRateModel, MiningRateModel, Strategy, TrafficModel, VisitorProfile,
};
use pagecost_core::record::FrameDirection;
use pagecost_core::scenario::Scenario;
use pagecost_core::signatures::{classify_page, Classification, PageSnapshot};
use pagecost_service::{fixture_blacklist, serve, FixtureConfig, ServiceError};

async fn start() -> pagecost_service::ServiceHandle {
    serve(FixtureConfig::default()).await.expect("service starts")
}

async fn get(url: &str) -> (u16, String) {
    let resp = reqwest::get(url).await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.text().await.unwrap())
}

#[tokio::test]
async fn control_page_has_configured_size() {
    let svc = start().await;
    let (status, body) = get(&svc.url("/control")).await;
    assert_eq!(status, 200);
    assert_eq!(body.len(), 4096);
    let (_, body) = get(&svc.url("/control?size=10000")).await;
    assert_eq!(body.len(), 10000);
    let (status, _) = get(&svc.url("/control?size=3")).await;
    assert_eq!(status, 400);
}

#[tokio::test]
async fn ads_page_references_blacklisted_slots() {
    let svc = start().await;
    let (_, body) = get(&svc.url("/ads")).await;
    let manifest = PageManifest::extract(&body).unwrap().unwrap();
    assert_eq!(manifest.kind, PageKind::Ads);
    assert_eq!(manifest.resources.len(), 3);
    for url in &manifest.resources {
        let bytes = reqwest::get(url).await.unwrap().bytes().await.unwrap();
        assert_eq!(bytes.len(), 2233);
    }
    let snapshot = PageSnapshot::new(svc.url("/ads"), body, manifest.resources.clone()).unwrap();
    let report = classify_page(&snapshot, &fixture_blacklist());
    assert_eq!(report.ad_slot_count, 3);
    assert_eq!(report.classification, Classification::AdSupported);
}

#[tokio::test]
async fn miner_page_references_script_and_socket() {
    let svc = start().await;
    let (_, body) = get(&svc.url("/miner?workers=2&throttle=0.5")).await;
    let manifest = PageManifest::extract(&body).unwrap().unwrap();
    let miner = manifest.miner.unwrap();
    assert_eq!(miner.workers, 2);
    assert_eq!(miner.throttle, 0.5);
    assert!(miner.socket_url.starts_with(&format!("ws://{}/stubminer/pow", svc.addr())));
    assert!(body.contains("/lib/stubminer.js"));
    let snapshot = PageSnapshot::new(svc.url("/miner"), body, manifest.resources).unwrap();
    let report = classify_page(&snapshot, &fixture_blacklist());
    assert_eq!(report.classification, Classification::MinerSupported);
    assert_eq!(report.miners_detected[0].library_label, "StubMiner");

    let (status, _) = get(&svc.url("/miner?throttle=2")).await;
    assert_eq!(status, 400);
    let (status, script) = get(&svc.url("/lib/stubminer.js")).await;
    assert_eq!(status, 200);
    assert!(!script.is_empty());
}

#[tokio::test]
async fn shares_are_counted_and_stale_ones_rejected() {
    let svc = start().await;
    let api = ApiClient::new(svc.base_url());
    let url = format!("ws://{}/stubminer/pow", svc.addr());
    let seen = Arc::new(Mutex::new((0u64, 0u64)));
    let obs = seen.clone();
    let mut pow = PowClient::connect_observed(
        &url,
        186,
        Some(Box::new(move |dir, len| {
            let mut s = obs.lock().unwrap();
            match dir {
                FrameDirection::Sent => s.0 += len as u64,
                FrameDirection::Received => s.1 += len as u64,
            }
        })),
    )
    .await
    .unwrap();
    let first_job = pow.current_job().job_id.clone();
    for nonce in 0..5 {
        assert!(matches!(
            pow.submit(nonce, 5000).await.unwrap(),
            ShareOutcome::Accepted(_)
        ));
    }
    let ledger = api.ledger().await.unwrap();
    assert_eq!(ledger.totals.accepted, 5);
    assert_eq!(ledger.totals.claimed_hashes, 25_000);

    assert_eq!(
        pow.submit_for(&first_job, 9, 5000).await.unwrap(),
        ShareOutcome::Rejected(RejectReason::UnknownJob)
    );
    let reply = pow.send_raw("{not json".into()).await.unwrap();
    assert!(matches!(
        reply,
        pagecost_core::pow::PowMessage::Rejected {
            reason: RejectReason::Malformed,
            ..
        }
    ));
    let ledger = api.ledger().await.unwrap();
    assert_eq!(ledger.totals.accepted, 5);
    assert_eq!(ledger.totals.rejected, 2);
    assert_eq!(
        ledger.totals.received,
        ledger.totals.accepted + ledger.totals.rejected
    );
    let (sent, received) = *seen.lock().unwrap();
    assert_eq!(ledger.sessions[0].bytes_in, sent);
    assert_eq!(ledger.sessions[0].bytes_out, received);
    // six padded jobs plus two unpadded rejections
    let rejections = received - 6 * 186;
    assert!(rejections > 0 && rejections < 2 * 186);
    pow.close().await.unwrap();
    svc.shutdown().await.unwrap();
}

#[tokio::test]
async fn interval_shares_match_configuration_arithmetic() {
    let svc = start().await;
    let url = format!("ws://{}/stubminer/pow", svc.addr());
    let mut pow = PowClient::connect(&url, 186).await.unwrap();
    let interval = Duration::from_millis(50);
    let run = Duration::from_secs(3);
    let start = Instant::now();
    let mut tick = tokio::time::interval_at(tokio::time::Instant::now() + interval, interval);
    let mut sent = 0u64;
    while start.elapsed() < run {
        tick.tick().await;
        pow.submit(sent, 100).await.unwrap();
        sent += 1;
    }
    let ledger = ApiClient::new(svc.base_url()).ledger().await.unwrap();
    let expected = run.as_secs_f64() / interval.as_secs_f64();
    let accepted = ledger.totals.accepted as f64;
    assert!((accepted - expected).abs() <= 0.1 * expected, "{accepted} vs {expected}");
    // one share and one job per exchange, plus the initial job
    assert_eq!(ledger.totals.payload_bytes, 186 * (2 * ledger.totals.accepted + 1));
    pow.close().await.unwrap();
}

#[tokio::test]
async fn ledger_revenue_matches_model() {
    let svc = start().await;
    let url = format!("ws://{}/stubminer/pow", svc.addr());
    let mut pow = PowClient::connect(&url, 186).await.unwrap();
    for n in 0..60 {
        pow.submit(n, 5000).await.unwrap();
    }
    let ledger = ApiClient::new(svc.base_url()).ledger().await.unwrap();
    let rates = MiningRateModel::coinhive();
    let usd = revenue_crosscheck(&ledger.totals, &rates, 5000);
    assert!((usd - 0.0090282).abs() < 1e-7);
    let model =
        profit::mining_revenue(&VisitorProfile::with_hash_rate(5000.0), 60.0, &rates).unwrap();
    assert!((usd - model).abs() / model < 0.05);
    pow.close().await.unwrap();
}

#[tokio::test]
async fn port_in_use_is_a_startup_error() {
    let svc = start().await;
    let config = FixtureConfig {
        port: svc.addr().port(),
        ..Default::default()
    };
    assert!(matches!(serve(config).await, Err(ServiceError::Bind { .. })));
}

#[tokio::test]
async fn api_mirrors_core_operations() {
    let svc = start().await;
    let api = ApiClient::new(svc.base_url());
    api.health().await.unwrap();
    let rates = MiningRateModel::coinhive();
    let visitor = VisitorProfile::with_hash_rate(227.0);
    let remote = api.mining_revenue(visitor, 60.0, rates).await.unwrap();
    let local = profit::mining_revenue(&visitor, 60.0, &rates).unwrap();
    assert_eq!(remote, local);
    assert_eq!(api.ad_revenue(AdRateModel::default(), 1.0).await.unwrap(), 0.003);
    let be = api
        .break_even(AdRateModel::default(), VisitorProfile::with_hash_rate(300.0), rates)
        .await
        .unwrap();
    assert!((be - 332.29).abs() < 0.05);
    assert_eq!(
        api.break_even(AdRateModel::default(), VisitorProfile::with_hash_rate(0.0), rates)
            .await
            .unwrap(),
        f64::INFINITY
    );
    let traffic = TrafficModel {
        visitors_per_month: 100_000.0,
        visit_duration: 60.0,
    };
    let month = api
        .monthly_profit(
            traffic,
            Strategy::Ads {
                rates: AdRateModel::default(),
            },
        )
        .await
        .unwrap();
    assert!((month - 300.0).abs() < 1e-9);
    assert_eq!(api.contention_scaled_rate(300.0, 2).await.unwrap(), 150.0);
    match api.contention_scaled_rate(300.0, 0).await {
        Err(ClientError::Api { status: 422, .. }) => {}
        other => panic!("{other:?}"),
    }
    let cost = api.cellular_cost(146.0, 60.0, 2.5e-8).await.unwrap();
    assert!((cost - 0.000219).abs() < 1e-9);

    let sim = api.simulate(&Scenario::default()).await.unwrap();
    assert_eq!(sim, Scenario::default().simulate().unwrap());

    let xs: Vec<f64> = (1..=10).map(f64::from).collect();
    let table = api.percentiles("x", &xs, None).await.unwrap();
    assert_eq!(table.median(), Some(5.5));
    assert!(api.percentiles("x", &[], None).await.is_err());

    let page = PageSnapshot::new(
        "http://site.test/",
        "<script src=/lib/stubminer.js>",
        vec![],
    )
    .unwrap();
    let reports = api.classify(&fixture_blacklist(), &[page]).await.unwrap();
    assert_eq!(reports[0].classification, Classification::MinerSupported);
    let share = api.market_share(&reports).await.unwrap();
    assert_eq!(share.get("StubMiner"), Some(&1.0));
}
