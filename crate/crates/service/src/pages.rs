//! Fixture page rendering. Pages embed a [`PageManifest`] describing what
//! their scripts do; control pages and ad resources have exact byte sizes.

use pagecost_core::manifest::{MinerParams, PageKind, PageManifest, SharePolicy};

use crate::config::MinerPageConfig;

/// Smallest control page the renderer can pad to an exact size.
pub const MIN_CONTROL_PAGE: usize = 256;

pub const MINER_SCRIPT_PATH: &str = "/lib/stubminer.js";
pub const STATE_SCRIPT_PATH: &str = "/lib/statetest.js";
pub const POW_SOCKET_PATH: &str = "/stubminer/pow";

/// Literal patterns that identify fixture traffic, in plain-lines format.
pub const FIXTURE_MINER_LIST: &str = "# fixture coin-blocking list\nstubminer # StubMiner\n";
pub const FIXTURE_AD_LIST: &str = "# fixture ad list\n/adsrv/\n";

fn document(title: &str, manifest: &PageManifest, body: &str) -> String {
    format!(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>{title}</title>{}</head><body>{body}",
        manifest.to_script_tag()
    )
}

const TAIL: &str = "</body></html>";

/// Control page of exactly `size` bytes (at least [`MIN_CONTROL_PAGE`]).
pub fn control_page(size: usize) -> String {
    let manifest = PageManifest {
        kind: PageKind::Control,
        resources: Vec::new(),
        miner: None,
        plant_state: false,
    };
    let mut html = document("control", &manifest, "<p>static control page</p>");
    let fixed = html.len() + "<!---->".len() + TAIL.len();
    let fill = size.saturating_sub(fixed);
    html.push_str("<!--");
    html.extend(std::iter::repeat_n('.', fill));
    html.push_str("-->");
    html.push_str(TAIL);
    html
}

pub fn ad_resource_url(base: &str, slot: u32, size: usize) -> String {
    format!("{base}/adsrv/slot{slot}?size={size}")
}

pub fn ads_page(base: &str, slots: u32, resource_size: usize) -> String {
    let resources: Vec<String> = (1..=slots)
        .map(|n| ad_resource_url(base, n, resource_size))
        .collect();
    let tags: String = resources
        .iter()
        .map(|u| format!("<div class=\"ad-slot\"><script src=\"{u}\"></script></div>"))
        .collect();
    let manifest = PageManifest {
        kind: PageKind::Ads,
        resources,
        miner: None,
        plant_state: false,
    };
    let mut html = document("ads", &manifest, &format!("<p>ad-supported page</p>{tags}"));
    html.push_str(TAIL);
    html
}

/// Body of one ad resource, exactly `size` bytes.
pub fn ad_resource(slot: u32, size: usize) -> Vec<u8> {
    let head = format!("/*ad slot {slot}*/");
    let mut body = if head.len() <= size {
        head.into_bytes()
    } else {
        Vec::new()
    };
    body.resize(size, b' ');
    body
}

pub fn miner_params(ws_base: &str, cfg: &MinerPageConfig) -> MinerParams {
    MinerParams {
        workers: cfg.workers,
        throttle: cfg.throttle,
        share_policy: match cfg.hashes_per_share {
            Some(hashes) => SharePolicy::Difficulty { hashes },
            None => SharePolicy::Interval {
                seconds: cfg.share_interval,
            },
        },
        frame_size: cfg.frame_size,
        socket_url: format!("{ws_base}{POW_SOCKET_PATH}?frame={}", cfg.frame_size),
    }
}

pub fn miner_page(base: &str, ws_base: &str, cfg: &MinerPageConfig) -> String {
    let script = format!("{base}{MINER_SCRIPT_PATH}");
    let manifest = PageManifest {
        kind: PageKind::Miner,
        resources: vec![script.clone()],
        miner: Some(miner_params(ws_base, cfg)),
        plant_state: false,
    };
    let mut html = document(
        "miner",
        &manifest,
        &format!("<p id=\"status\">mining</p><script src=\"{script}\"></script>"),
    );
    html.push_str(TAIL);
    html
}

pub fn state_test_page(base: &str) -> String {
    let script = format!("{base}{STATE_SCRIPT_PATH}");
    let manifest = PageManifest {
        kind: PageKind::StateTest,
        resources: vec![script.clone()],
        miner: None,
        plant_state: true,
    };
    let mut html = document(
        "state-test",
        &manifest,
        &format!("<script src=\"{script}\"></script>"),
    );
    html.push_str(TAIL);
    html
}

pub const PLACEHOLDER_SCRIPT: &str =
    "/* in-browser fixture runtime not installed; configure assets_dir */\n";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_page_has_exact_size() {
        for size in [MIN_CONTROL_PAGE, 1000, 4096, 100_000] {
            let page = control_page(size);
            assert_eq!(page.len(), size);
            assert!(page.ends_with(TAIL));
            let m = PageManifest::extract(&page).unwrap().unwrap();
            assert_eq!(m.kind, PageKind::Control);
        }
    }

    #[test]
    fn ads_page_lists_distinct_slots() {
        let page = ads_page("http://127.0.0.1:9", 3, 2233);
        let m = PageManifest::extract(&page).unwrap().unwrap();
        assert_eq!(m.resources.len(), 3);
        let mut uniq = m.resources.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), 3);
        assert!(m.resources.iter().all(|u| u.contains("/adsrv/slot")));
    }

    #[test]
    fn ad_resource_sizes() {
        for size in [0usize, 3, 2233, 10_000] {
            assert_eq!(ad_resource(1, size).len(), size);
        }
    }

    #[test]
    fn miner_page_points_at_socket() {
        let cfg = MinerPageConfig::default();
        let page = miner_page("http://h:1", "ws://h:1", &cfg);
        let m = PageManifest::extract(&page).unwrap().unwrap();
        let miner = m.miner.unwrap();
        assert_eq!(miner.socket_url, "ws://h:1/stubminer/pow?frame=186");
        assert!(page.contains(MINER_SCRIPT_PATH));
    }
}
