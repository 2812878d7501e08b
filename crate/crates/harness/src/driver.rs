//! Browser control behind one interface, so probes run against a real
//! browser or the scripted mock alike.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkLog;
use crate::target::ResourceTarget;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("navigation to {url} timed out after {after:?}")]
    Timeout { url: String, after: Duration },
    #[error("navigation to {url} failed: {reason}")]
    Navigation { url: String, reason: String },
    /// The session is gone; `restart` is required before further use.
    #[error("browser session crashed: {0}")]
    Crashed(String),
    #[error("browser protocol error: {0}")]
    Protocol(String),
    #[error("cannot start browser: {0}")]
    Launch(String),
}

/// Browser-held state a page can leave behind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredState {
    pub cookies: Vec<String>,
    pub storage_keys: Vec<String>,
    pub service_workers: Vec<String>,
}

impl StoredState {
    pub fn is_empty(&self) -> bool {
        self.cookies.is_empty() && self.storage_keys.is_empty() && self.service_workers.is_empty()
    }

    pub fn artifact_count(&self) -> usize {
        self.cookies.len() + self.storage_keys.len() + self.service_workers.len()
    }
}

/// Artifact kinds the state self-test page plants and looks for.
pub const STATE_ARTIFACTS: [&str; 3] = ["cookie", "storage", "service_worker"];
pub const STATE_TITLE_PREFIX: &str = "state-test found: ";

/// Title the state self-test page sets after load.
pub fn state_title(found: &[&str]) -> String {
    if found.is_empty() {
        format!("{STATE_TITLE_PREFIX}none")
    } else {
        format!("{STATE_TITLE_PREFIX}{}", found.join(","))
    }
}

/// Artifacts reported by a state self-test page title, or `None` for other pages.
pub fn parse_state_title(title: &str) -> Option<Vec<String>> {
    let rest = title.strip_prefix(STATE_TITLE_PREFIX)?.trim();
    if rest == "none" {
        return Some(vec![]);
    }
    Some(rest.split(',').map(|s| s.trim().to_string()).collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PageLoad {
    pub url: String,
    pub status_code: u16,
    pub title: String,
}

#[async_trait]
pub trait BrowserDriver: Send {
    fn name(&self) -> &str;

    /// Loads `url` in the single tab, replacing whatever was loaded.
    async fn navigate(&mut self, url: &str, timeout: Duration) -> Result<PageLoad, DriverError>;

    /// Unloads the current page, stopping all its activity.
    async fn close_page(&mut self) -> Result<(), DriverError>;

    /// Clears cookies, cache, local/session storage and service workers.
    async fn purge_state(&mut self) -> Result<(), DriverError>;

    /// State currently held by the browser.
    async fn stored_state(&mut self) -> Result<StoredState, DriverError>;

    /// Replaces a crashed or wedged session with a fresh one.
    async fn restart(&mut self) -> Result<(), DriverError>;

    fn network(&self) -> Arc<NetworkLog>;

    fn resource_target(&self) -> ResourceTarget;

    fn metadata(&self) -> BTreeMap<String, String>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_title_round_trip() {
        assert_eq!(parse_state_title(&state_title(&[])), Some(vec![]));
        assert_eq!(
            parse_state_title(&state_title(&["cookie", "storage"])),
            Some(vec!["cookie".to_string(), "storage".to_string()])
        );
        assert_eq!(parse_state_title("miner"), None);
    }
}
