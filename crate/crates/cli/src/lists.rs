//! Blacklist and snapshot loading.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pagecost_client::ApiClient;
use pagecost_core::signatures::{
    merge_blacklists, parse_blacklist, Blacklist, Category, ListFormat, PageSnapshot,
};

/// Guesses a list's format from its first rule line.
pub fn sniff_format(raw: &str) -> ListFormat {
    let first = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#') && !l.starts_with('!'));
    match first {
        Some(l) if l.split_whitespace().next().is_some_and(|w| w.parse::<std::net::IpAddr>().is_ok()) => {
            ListFormat::HostsFile
        }
        Some(l) if l.starts_with("||") || l.starts_with("@@") || l.contains('^') || l.contains('$') => {
            ListFormat::FilterRules
        }
        _ => ListFormat::PlainLines,
    }
}

fn load_one(path: &Path, category: Category) -> Result<Blacklist> {
    let raw = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let entries = parse_blacklist(raw.as_bytes(), sniff_format(&raw), category)
        .with_context(|| path.display().to_string())?;
    Ok(Blacklist::from_entries(&path.display().to_string(), entries))
}

pub fn load_lists(miner: &[PathBuf], ads: &[PathBuf]) -> Result<Blacklist> {
    let mut lists = Vec::new();
    for p in miner {
        lists.push(load_one(p, Category::Miner)?);
    }
    for p in ads {
        lists.push(load_one(p, Category::Ad)?);
    }
    Ok(merge_blacklists(&lists)?)
}

/// The lists the fixture service's own traffic matches.
pub async fn fixture_lists(api: &ApiClient) -> Result<Blacklist> {
    let mut lists = Vec::new();
    for (name, category) in [("miner.txt", Category::Miner), ("ads.txt", Category::Ad)] {
        let raw = api.fixture_list(name).await?;
        let entries = parse_blacklist(raw.as_bytes(), sniff_format(&raw), category)?;
        lists.push(Blacklist::from_entries(name, entries));
    }
    Ok(merge_blacklists(&lists)?)
}

/// Reads `*.json` (one snapshot) and `*.jsonl` (one per line) files, in
/// file name order.
pub fn load_snapshots(dir: &Path) -> Result<Vec<PageSnapshot>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "jsonl")))
        .collect();
    files.sort();
    let mut pages = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).with_context(|| f.display().to_string())?;
        if f.extension().is_some_and(|e| e == "jsonl") {
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let page: PageSnapshot = serde_json::from_str(line)
                    .with_context(|| format!("{}:{}", f.display(), i + 1))?;
                pages.push(page);
            }
        } else {
            pages.push(serde_json::from_str(&text).with_context(|| f.display().to_string())?);
        }
    }
    for p in &pages {
        p.validate()?;
    }
    Ok(pages)
}
