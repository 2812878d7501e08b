use pagecost_core::manifest::PageManifest;
use pagecost_service::{serve, FixtureConfig};

async fn get(url: &str) -> (u16, String) {
    let r = reqwest::get(url).await.unwrap();
    (r.status().as_u16(), r.text().await.unwrap())
}

#[tokio::test]
async fn pages_carry_their_manifest() {
    let svc = serve(FixtureConfig::default()).await.unwrap();
    let (status, body) = get(&svc.url("/miner?workers=2&throttle=0.5&interval=0.5")).await;
    assert_eq!(status, 200);
    let m = PageManifest::extract(&body).unwrap().unwrap();
    let miner = m.miner.unwrap();
    assert_eq!(miner.workers, 2);
    assert_eq!(miner.throttle, 0.5);
    assert_eq!(miner.frame_size, 186);
    assert!(miner.socket_url.starts_with("ws://"));

    let (_, ads) = get(&svc.url("/ads?slots=5")).await;
    assert_eq!(PageManifest::extract(&ads).unwrap().unwrap().resources.len(), 5);
    svc.shutdown().await.unwrap();
}

#[tokio::test]
async fn bad_parameters_are_rejected() {
    let svc = serve(FixtureConfig::default()).await.unwrap();
    for path in ["/miner?throttle=2", "/miner?workers=x", "/control?size=abc"] {
        let (status, _) = get(&svc.url(path)).await;
        assert_eq!(status, 400, "{path}");
    }
    let (status, _) = get(&svc.url("/lib/..%2Fsecret")).await;
    assert_eq!(status, 404);
    svc.shutdown().await.unwrap();
}

#[tokio::test]
async fn ad_resources_have_requested_size() {
    let svc = serve(FixtureConfig::default()).await.unwrap();
    let r = reqwest::get(svc.url("/adsrv/slot3?size=2233")).await.unwrap();
    assert_eq!(r.bytes().await.unwrap().len(), 2233);
    let (_, list) = get(&svc.url("/blacklists/ads.txt")).await;
    assert!(list.contains("/adsrv/"));
    svc.shutdown().await.unwrap();
}

#[tokio::test]
async fn config_file_round_trip() {
    let cfg = FixtureConfig::from_toml("port = 0\n[miner]\nworkers = 8\n[ads]\nslot_count = 4\n").unwrap();
    assert_eq!(cfg.miner.workers, 8);
    assert!(FixtureConfig::from_toml("[miner]\nthrottle = 1.5\n").is_err());
    assert!(FixtureConfig::from_toml("[control]\npage_size = 1\n").is_err());
}
