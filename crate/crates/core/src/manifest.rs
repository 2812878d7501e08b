//! Machine-readable description embedded in every fixture page.
//!
//! Pages carry a `<script type="application/json" id="page-manifest">` block
//! stating what the page's scripts do once loaded. The in-browser scripts
//! read it, and so does the scripted mock browser, which reproduces the same
//! network and CPU behavior without a browser.

use serde::{Deserialize, Serialize};

pub const MANIFEST_OPEN: &str = r#"<script type="application/json" id="page-manifest">"#;
pub const MANIFEST_CLOSE: &str = "</script>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageKind {
    Control,
    Ads,
    Miner,
    StateTest,
}

/// How a miner decides to submit a share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SharePolicy {
    /// One share every `seconds`, claiming the hashes done since the last.
    Interval { seconds: f64 },
    /// One share per `hashes` completed hashes.
    Difficulty { hashes: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerParams {
    pub workers: u32,
    /// Idle fraction of each time slice, in [0, 1].
    pub throttle: f64,
    pub share_policy: SharePolicy,
    /// Exact payload size of share frames, bytes.
    pub frame_size: usize,
    /// WebSocket endpoint of the PoW stub.
    pub socket_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageManifest {
    pub kind: PageKind,
    /// Subresources the page fetches after load, absolute URLs.
    #[serde(default)]
    pub resources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miner: Option<MinerParams>,
    /// Plant a cookie, a storage key and a service worker on load.
    #[serde(default)]
    pub plant_state: bool,
}

impl PageManifest {
    pub fn to_script_tag(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        // keep `</script>` out of the JSON body
        format!("{MANIFEST_OPEN}{}{MANIFEST_CLOSE}", json.replace("</", "<\\/"))
    }

    /// Finds and decodes the manifest block of an HTML document.
    pub fn extract(html: &str) -> Option<Result<Self, serde_json::Error>> {
        let start = html.find(MANIFEST_OPEN)? + MANIFEST_OPEN.len();
        let len = html[start..].find(MANIFEST_CLOSE)?;
        Some(serde_json::from_str(&html[start..start + len]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_round_trip() {
        let m = PageManifest {
            kind: PageKind::Miner,
            resources: vec!["http://127.0.0.1:1/lib/stubminer.js".into()],
            miner: Some(MinerParams {
                workers: 4,
                throttle: 0.0,
                share_policy: SharePolicy::Interval { seconds: 1.0 },
                frame_size: 186,
                socket_url: "ws://127.0.0.1:1/stubminer/pow".into(),
            }),
            plant_state: false,
        };
        let html = format!("<html><head>{}</head><body></body></html>", m.to_script_tag());
        assert_eq!(PageManifest::extract(&html).unwrap().unwrap(), m);
        assert!(PageManifest::extract("<html></html>").is_none());
    }
}
