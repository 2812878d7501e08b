//! End-to-end runs of the `pagecost` binary.

use std::path::Path;
use std::process::Output;

use pagecost_service::{serve, FixtureConfig};
use tokio::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_pagecost");

async fn run(args: &[&str]) -> Output {
    let out = Command::new(BIN).args(args).output().await.unwrap();
    if !out.status.success() {
        panic!(
            "pagecost {args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[tokio::test]
async fn simulate_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    std::fs::write(&cfg, "hash_rates = [300.0]\n").unwrap();
    let out = run(&["simulate", "--config", p(&cfg)]).await;
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("strategy,parameter,revenue_usd\n"), "{text}");
    let be = text
        .lines()
        .find(|l| l.starts_with("300"))
        .expect("break-even row for 300 H/s");
    let seconds: f64 = be.split(',').nth(2).unwrap().parse().unwrap();
    // 0.003 USD per visit over 300 H/s * 0.0001468 * 205 / 1e6 USD/s
    let oracle = 0.003 / (300.0 * 0.0001468 * 205.0 / 1e6);
    assert!((seconds - oracle).abs() < 1e-6, "{seconds} vs {oracle}");
}

#[tokio::test]
async fn simulate_against_remote_service() {
    let svc = serve(FixtureConfig::default()).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    std::fs::write(&cfg, "ad_slots = 3.4\n").unwrap();
    let out_dir = dir.path().join("out");
    run(&["simulate", "--config", p(&cfg), "--out", p(&out_dir), "--server", &svc.base_url()]).await;
    let rev = std::fs::read_to_string(out_dir.join("revenue.csv")).unwrap();
    let be = std::fs::read_to_string(out_dir.join("break_even.csv")).unwrap();
    assert!(rev.lines().count() > 1);
    // header plus four default tiers
    assert_eq!(be.lines().count(), 5);
}

#[tokio::test]
async fn unreachable_server_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    std::fs::write(&cfg, "").unwrap();
    let out = Command::new(BIN)
        .args(["simulate", "--config", p(&cfg), "--server", "http://127.0.0.1:9"])
        .output()
        .await
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not reachable"));
}

#[tokio::test]
async fn detect_writes_reports_and_shares() {
    let dir = tempfile::tempdir().unwrap();
    let miners = dir.path().join("miners.txt");
    let ads = dir.path().join("ads.txt");
    let snaps = dir.path().join("snaps");
    std::fs::create_dir(&snaps).unwrap();
    std::fs::write(&miners, "# hosts\n0.0.0.0 coinhive.com\n").unwrap();
    std::fs::write(&ads, "||doubleclick.net^\n").unwrap();
    std::fs::write(
        snaps.join("a.jsonl"),
        concat!(
            r#"{"url":"http://m.test/","request_urls":["https://coinhive.com/lib/coinhive.min.js"]}"#,
            "\n",
            r#"{"url":"http://a.test/","request_urls":["https://ad.doubleclick.net/x","https://ad.doubleclick.net/y"]}"#,
            "\n"
        ),
    )
    .unwrap();
    std::fs::write(snaps.join("b.json"), r#"{"url":"http://plain.test/"}"#).unwrap();
    let out = dir.path().join("out");
    run(&[
        "detect",
        "--miner-lists",
        p(&miners),
        "--ad-lists",
        p(&ads),
        "--snapshots",
        p(&snaps),
        "--out",
        p(&out),
    ])
    .await;
    let reports = std::fs::read_to_string(out.join("reports.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = reports
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["classification"], "miner_supported");
    assert_eq!(lines[1]["classification"], "ad_supported");
    assert_eq!(lines[1]["ad_slot_count"], 2);
    assert_eq!(lines[2]["classification"], "neither");
    let shares = std::fs::read_to_string(out.join("market_share.csv")).unwrap();
    assert!(shares.starts_with("label,share\n"));
    assert!(shares.contains(",1\n"), "{shares}");
}

#[tokio::test]
async fn probe_report_and_traffic_pipeline() {
    let svc = serve(FixtureConfig::default()).await.unwrap();
    let dir = tempfile::tempdir().unwrap();

    let mut dirs = Vec::new();
    for (name, path) in [("ads", "/ads"), ("miner", "/miner?workers=1&interval=0.2")] {
        let targets = dir.path().join(format!("{name}.txt"));
        std::fs::write(&targets, format!("# {name}\n{}\n", svc.url(path))).unwrap();
        let out = dir.path().join(name);
        let o = run(&[
            "probe",
            "--targets",
            p(&targets),
            "--duration",
            "2",
            "--interval",
            "0.5",
            "--monitors",
            "cpu,memory,network",
            "--out",
            p(&out),
        ])
        .await;
        assert!(String::from_utf8_lossy(&o.stdout).contains("1/1 probes completed"));
        assert!(out.join("campaign.json").exists());
        assert!(out.join("probe-0000.jsonl").exists());
        dirs.push(out);
    }

    let report = dir.path().join("report");
    let server = svc.base_url();
    run(&["report", p(&dirs[0]), p(&dirs[1]), "--out", p(&report), "--server", &server]).await;
    let pct = std::fs::read_to_string(report.join("percentiles.csv")).unwrap();
    assert!(pct.starts_with("metric,group,p10,p25,p50,p75,p90\n"), "{pct}");
    assert!(pct.contains("cpu.total,ads,"));
    assert!(pct.contains("cpu.total,miner,"));
    let cmp = std::fs::read_to_string(report.join("comparisons.csv")).unwrap();
    assert!(cmp.contains("cpu.total:miner/ads,"), "{cmp}");

    let json_dir = dir.path().join("report-json");
    run(&["report", p(&dirs[0]), "--out", p(&json_dir), "--format", "json", "--server", &server]).await;
    assert!(json_dir.join("report.json").exists());

    let traffic = dir.path().join("traffic");
    let o = run(&["traffic", p(&dirs[0]), p(&dirs[1]), "--out", p(&traffic), "--server", &server]).await;
    assert!(String::from_utf8_lossy(&o.stdout).contains("over 1 sites"));
    let rows = std::fs::read_to_string(traffic.join("traffic_summaries.csv")).unwrap();
    let mut r = rows.lines();
    assert_eq!(
        r.next().unwrap(),
        "target_url,window,miner_bytes,ad_bytes,other_bytes,miner_frame_count,mean_frame_size,miner_bitrate"
    );
    let ads_row: Vec<&str> = r.next().unwrap().split(',').collect();
    assert_eq!(ads_row[3], "6699");
    let miner_row: Vec<&str> = r.next().unwrap().split(',').collect();
    assert_eq!(miner_row[6], "186.0");
    assert!(traffic.join("bitrate_distribution.csv").exists());
}

#[tokio::test]
async fn calibrate_writes_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal.json");
    run(&["calibrate", "--out", p(&out), "--duration", "0.1", "--workers", "1,2"]).await;
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let b = v["baselines"].as_object().unwrap();
    assert!(b["1x100ms"].as_u64().unwrap() > 0);
    assert!(b["2x100ms"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn probe_without_calibration_explains_itself() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("t.txt");
    std::fs::write(&targets, "http://127.0.0.1:9/\n").unwrap();
    let out = Command::new(BIN)
        .args([
            "probe",
            "--targets",
            p(&targets),
            "--duration",
            "1",
            "--monitors",
            "cpu,interference",
            "--out",
            p(&dir.path().join("o")),
        ])
        .output()
        .await
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration"));
}
