//! Splits a probe's network log into miner-channel, ad and other traffic.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::record::{ProbeResult, RequestRecord, WsFrameRecord};
use crate::signatures::{host_has_suffix, Blacklist, Category, PatternKind, SignatureEntry};
use crate::stats::{self, PercentileTable, StatsError};

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("no traffic summaries to summarize")]
    Empty,
    #[error("window must be positive, got {0}")]
    BadWindow(f64),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSummary {
    pub target_url: String,
    /// Seconds of observation (the monitored phase length).
    pub window: f64,
    pub miner_bytes: u64,
    pub ad_bytes: u64,
    pub other_bytes: u64,
    pub miner_frame_count: u64,
    pub mean_frame_size: f64,
    /// Bits per second on the miner channel.
    pub miner_bitrate: f64,
}

impl TrafficSummary {
    pub fn total_bytes(&self) -> u64 {
        self.miner_bytes + self.ad_bytes + self.other_bytes
    }

    /// Bytes per second on the miner channel.
    pub fn miner_byte_rate(&self) -> f64 {
        self.miner_bytes as f64 / self.window
    }
}

struct Matcher {
    entries: Vec<SignatureEntry>,
}

impl Matcher {
    fn new(bl: &Blacklist, category: Category) -> Self {
        Self {
            entries: bl.of_category(category),
        }
    }

    fn matches(&self, url: &str) -> bool {
        let lower = url.to_lowercase();
        let host = Url::parse(&lower)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string));
        self.entries.iter().any(|e| match e.kind {
            PatternKind::Domain => {
                host.as_deref().is_some_and(|h| host_has_suffix(h, &e.pattern))
            }
            PatternKind::UrlSubstring | PatternKind::Keyword => lower.contains(&e.pattern),
        })
    }
}

/// Buckets every request and frame exactly once.
///
/// WebSocket frames whose endpoint matches a miner entry count as miner
/// traffic; requests matching an ad entry count as ad traffic; everything
/// else, including miner script downloads, is other.
pub fn summarize(
    target_url: &str,
    requests: &[RequestRecord],
    frames: &[WsFrameRecord],
    bl: &Blacklist,
    window: f64,
) -> Result<TrafficSummary, TrafficError> {
    if !(window.is_finite() && window > 0.0) {
        return Err(TrafficError::BadWindow(window));
    }
    let miner = Matcher::new(bl, Category::Miner);
    let ads = Matcher::new(bl, Category::Ad);

    let (mut miner_bytes, mut ad_bytes, mut other_bytes, mut frames_n) = (0u64, 0u64, 0u64, 0u64);
    for f in frames {
        if miner.matches(&f.endpoint_url) {
            miner_bytes += f.payload_bytes;
            frames_n += 1;
        } else {
            other_bytes += f.payload_bytes;
        }
    }
    for r in requests {
        if ads.matches(&r.url) {
            ad_bytes += r.transferred_bytes;
        } else {
            other_bytes += r.transferred_bytes;
        }
    }
    Ok(TrafficSummary {
        target_url: target_url.to_string(),
        window,
        miner_bytes,
        ad_bytes,
        other_bytes,
        miner_frame_count: frames_n,
        mean_frame_size: miner_bytes as f64 / frames_n.max(1) as f64,
        miner_bitrate: miner_bytes as f64 * 8.0 / window,
    })
}

/// Summary of a stored probe, using its monitored phase as the window.
pub fn summarize_probe(probe: &ProbeResult, bl: &Blacklist) -> Result<TrafficSummary, TrafficError> {
    summarize(
        &probe.target_url,
        &probe.requests,
        &probe.frames,
        bl,
        probe.phase1_duration(),
    )
}

/// Percentiles of the per-site miner bitrate.
pub fn bitrate_distribution(summaries: &[TrafficSummary]) -> Result<PercentileTable, TrafficError> {
    if summaries.is_empty() {
        return Err(TrafficError::Empty);
    }
    let rates: Vec<f64> = summaries.iter().map(|s| s.miner_bitrate).collect();
    Ok(stats::standard_percentiles("miner_bitrate_bps", &rates)?)
}

pub fn write_summaries_csv<W: std::io::Write>(
    summaries: &[TrafficSummary],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for s in summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::FrameDirection;

    fn fixture_blacklist() -> Blacklist {
        Blacklist::from_entries(
            "fixture",
            [
                SignatureEntry::new("stubminer", PatternKind::Keyword, Category::Miner, None)
                    .unwrap(),
                SignatureEntry::new("/adsrv/", PatternKind::UrlSubstring, Category::Ad, None)
                    .unwrap(),
            ],
        )
    }

    fn frame(t: f64, bytes: u64, endpoint: &str) -> WsFrameRecord {
        WsFrameRecord {
            timestamp: t,
            direction: if t as u64 % 2 == 0 {
                FrameDirection::Sent
            } else {
                FrameDirection::Received
            },
            payload_bytes: bytes,
            endpoint_url: endpoint.into(),
        }
    }

    fn request(url: &str, bytes: u64) -> RequestRecord {
        RequestRecord {
            timestamp: 0.0,
            url: url.into(),
            initiator: String::new(),
            transferred_bytes: bytes,
            resource_type: "script".into(),
            status_code: 200,
        }
    }

    #[test]
    fn fixture_frames_arithmetic() {
        let frames: Vec<_> = (0..120)
            .map(|i| frame(i as f64 * 0.5, 186, "ws://127.0.0.1:9/stubminer/pow"))
            .collect();
        let s = summarize("http://t/", &[], &frames, &fixture_blacklist(), 60.0).unwrap();
        assert_eq!(s.miner_bytes, 22320);
        assert_eq!(s.miner_frame_count, 120);
        assert_eq!(s.mean_frame_size, 186.0);
        assert_eq!(s.miner_bitrate, 2976.0);
    }

    #[test]
    fn empty_logs() {
        let s = summarize("http://t/", &[], &[], &fixture_blacklist(), 180.0).unwrap();
        assert_eq!(s.total_bytes(), 0);
        assert_eq!(s.mean_frame_size, 0.0);
        assert_eq!(s.miner_bitrate, 0.0);
    }

    #[test]
    fn median_volumes_ratio() {
        // 22.8 KB of PoW traffic vs 6.7 KB of ads over a 3-minute visit
        let frames: Vec<_> = (0..120)
            .map(|i| frame(i as f64, 190, "ws://x/stubminer/pow"))
            .collect();
        let reqs: Vec<_> = (0..3)
            .map(|i| request(&format!("http://x/adsrv/slot{i}"), 2233 + (i == 0) as u64))
            .collect();
        let bl = fixture_blacklist();
        let miner = summarize("a", &[], &frames, &bl, 180.0).unwrap();
        let ads = summarize("b", &reqs, &[], &bl, 180.0).unwrap();
        assert_eq!(miner.miner_bytes, 22800);
        assert_eq!(ads.ad_bytes, 6700);
        let ratio = miner.miner_bytes as f64 / ads.ad_bytes as f64;
        assert!((ratio - 3.4).abs() / 3.4 < 0.05, "{ratio}");
    }

    #[test]
    fn unmatched_traffic_is_other() {
        let frames = vec![frame(1.0, 50, "ws://chat.example/socket")];
        let reqs = vec![
            request("http://x/app.js", 1000),
            request("http://x/adsrv/slot1", 300),
        ];
        let s = summarize("t", &reqs, &frames, &fixture_blacklist(), 10.0).unwrap();
        assert_eq!((s.miner_bytes, s.ad_bytes, s.other_bytes), (0, 300, 1050));
    }

    #[test]
    fn bad_window_and_empty_distribution() {
        assert!(matches!(
            summarize("t", &[], &[], &fixture_blacklist(), 0.0),
            Err(TrafficError::BadWindow(_))
        ));
        assert!(matches!(bitrate_distribution(&[]), Err(TrafficError::Empty)));
    }

    #[test]
    fn distribution_examples() {
        let mk = |bps: f64| TrafficSummary {
            target_url: String::new(),
            window: 1.0,
            miner_bytes: 0,
            ad_bytes: 0,
            other_bytes: 0,
            miner_frame_count: 0,
            mean_frame_size: 0.0,
            miner_bitrate: bps,
        };
        let single = bitrate_distribution(&[mk(1168.0)]).unwrap();
        assert!(single.points.iter().all(|(_, v)| *v == 1168.0));
        let ten: Vec<_> = (1..=10).map(|k| mk(k as f64 * 1000.0)).collect();
        assert_eq!(bitrate_distribution(&ten).unwrap().median(), Some(5500.0));
    }
}
