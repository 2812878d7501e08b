//! Blacklist ingestion and page classification.
//!
//! Coin-blocking and ad-blocking lists are literal patterns, so matching is
//! plain substring or host-suffix comparison on lowercased text. A page is
//! miner-supported when any miner entry matches its markup or one of its
//! request URLs, and its ad-slot count is the number of distinct request URLs
//! that match an ad entry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

#[derive(Debug, Error, PartialEq)]
pub enum SignatureError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid signature pattern {pattern:?}: {reason}")]
    InvalidEntry { pattern: String, reason: &'static str },
    #[error("invalid page url {0:?}")]
    InvalidUrl(String),
    #[error("unknown list format {0:?}")]
    UnknownFormat(String),
    #[error("no blacklists to merge")]
    NothingToMerge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Miner,
    Ad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Domain,
    UrlSubstring,
    Keyword,
}

/// Shape of a raw list file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListFormat {
    /// `0.0.0.0 host [host...]`
    HostsFile,
    /// One domain, URL fragment or keyword per line.
    PlainLines,
    /// Adblock-style network rules (`||host^`, `/path/`, `$options`).
    FilterRules,
}

impl FromStr for ListFormat {
    type Err = SignatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hosts" | "hosts_file" => Ok(Self::HostsFile),
            "plain" | "plain_lines" => Ok(Self::PlainLines),
            "filter" | "filter_rules" | "adblock" => Ok(Self::FilterRules),
            other => Err(SignatureError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignatureEntry {
    pub pattern: String,
    pub kind: PatternKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_label: Option<String>,
    pub category: Category,
}

impl SignatureEntry {
    /// Builds a validated entry. The pattern is lowercased; surrounding
    /// whitespace is an error, as is a domain carrying a scheme or path.
    pub fn new(
        pattern: &str,
        kind: PatternKind,
        category: Category,
        library_label: Option<String>,
    ) -> Result<Self, SignatureError> {
        let invalid = |reason| SignatureError::InvalidEntry {
            pattern: pattern.to_string(),
            reason,
        };
        if pattern.is_empty() {
            return Err(invalid("empty pattern"));
        }
        if pattern.trim() != pattern {
            return Err(invalid("leading or trailing whitespace"));
        }
        if kind == PatternKind::Domain && (pattern.contains("://") || pattern.contains('/')) {
            return Err(invalid("domain pattern carries a scheme or path"));
        }
        Ok(Self {
            pattern: pattern.to_lowercase(),
            kind,
            library_label: library_label.filter(|l| !l.trim().is_empty()),
            category,
        })
    }

    fn key(&self) -> EntryKey {
        (self.pattern.clone(), self.kind, self.category)
    }

    /// Label used for market-share accounting.
    pub fn label(&self) -> &str {
        self.library_label.as_deref().unwrap_or(&self.pattern)
    }

    /// Does this entry match a lowercased request URL?
    fn matches_url(&self, url: &str, host: Option<&str>) -> bool {
        match self.kind {
            PatternKind::Domain => {
                host.is_some_and(|h| host_has_suffix(h, &self.pattern)) || url.contains(&self.pattern)
            }
            PatternKind::UrlSubstring | PatternKind::Keyword => url.contains(&self.pattern),
        }
    }
}

type EntryKey = (String, PatternKind, Category);

/// `host` equals `domain` or is a subdomain of it.
pub fn host_has_suffix(host: &str, domain: &str) -> bool {
    host == domain
        || (host.len() > domain.len()
            && host.ends_with(domain)
            && host.as_bytes()[host.len() - domain.len() - 1] == b'.')
}

/// A merged set of entries, unique under `(pattern, kind, category)`.
///
/// When two sources carry the same key with different labels, the
/// lexicographically smallest label wins so merging stays order-independent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BlacklistRepr", into = "BlacklistRepr")]
pub struct Blacklist {
    entries: BTreeMap<EntryKey, Option<String>>,
    source_names: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct BlacklistRepr {
    entries: Vec<SignatureEntry>,
    #[serde(default)]
    source_names: Vec<String>,
}

impl From<BlacklistRepr> for Blacklist {
    fn from(repr: BlacklistRepr) -> Self {
        let mut bl = Blacklist::default();
        bl.extend(repr.entries);
        bl.source_names.extend(repr.source_names);
        bl
    }
}

impl From<Blacklist> for BlacklistRepr {
    fn from(bl: Blacklist) -> Self {
        BlacklistRepr {
            entries: bl.entries().collect(),
            source_names: bl.source_names.into_iter().collect(),
        }
    }
}

fn merge_label(slot: &mut Option<String>, incoming: Option<String>) {
    match (slot.as_ref(), incoming) {
        (_, None) => {}
        (None, Some(l)) => *slot = Some(l),
        (Some(cur), Some(l)) if l < *cur => *slot = Some(l),
        _ => {}
    }
}

impl Blacklist {
    pub fn from_entries(source: &str, entries: impl IntoIterator<Item = SignatureEntry>) -> Self {
        let mut bl = Self::default();
        bl.source_names.insert(source.to_string());
        bl.extend(entries);
        bl
    }

    pub fn insert(&mut self, entry: SignatureEntry) {
        let label = entry.library_label.clone();
        let slot = self.entries.entry(entry.key()).or_insert(None);
        merge_label(slot, label);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn source_names(&self) -> impl Iterator<Item = &str> {
        self.source_names.iter().map(String::as_str)
    }

    /// Entries in `(pattern, kind, category)` order.
    pub fn entries(&self) -> impl Iterator<Item = SignatureEntry> + '_ {
        self.entries
            .iter()
            .map(|((pattern, kind, category), label)| SignatureEntry {
                pattern: pattern.clone(),
                kind: *kind,
                library_label: label.clone(),
                category: *category,
            })
    }

    pub fn of_category(&self, category: Category) -> Vec<SignatureEntry> {
        self.entries().filter(|e| e.category == category).collect()
    }
}

impl Extend<SignatureEntry> for Blacklist {
    fn extend<T: IntoIterator<Item = SignatureEntry>>(&mut self, iter: T) {
        for entry in iter {
            self.insert(entry);
        }
    }
}

/// Set union of `lists`.
pub fn merge_blacklists<'a>(
    lists: impl IntoIterator<Item = &'a Blacklist>,
) -> Result<Blacklist, SignatureError> {
    let mut lists = lists.into_iter().peekable();
    if lists.peek().is_none() {
        return Err(SignatureError::NothingToMerge);
    }
    let mut merged = Blacklist::default();
    for list in lists {
        for (key, label) in &list.entries {
            let slot = merged.entries.entry(key.clone()).or_insert(None);
            merge_label(slot, label.clone());
        }
        merged.source_names.extend(list.source_names.iter().cloned());
    }
    Ok(merged)
}

/// Parses a raw list file into entries of one category.
pub fn parse_blacklist(
    raw: &[u8],
    format: ListFormat,
    category: Category,
) -> Result<Vec<SignatureEntry>, SignatureError> {
    let mut out = Vec::new();
    for (idx, line) in raw.split(|&b| b == b'\n').enumerate() {
        let lineno = idx + 1;
        let line = std::str::from_utf8(line).map_err(|e| SignatureError::Parse {
            line: lineno,
            reason: format!("invalid UTF-8: {e}"),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('!') {
            continue;
        }
        let parsed = match format {
            ListFormat::HostsFile => parse_hosts_line(line, category),
            ListFormat::PlainLines => parse_plain_line(line, category),
            ListFormat::FilterRules => parse_filter_rule(line, category),
        };
        out.extend(parsed.map_err(|reason| SignatureError::Parse {
            line: lineno,
            reason,
        })?);
    }
    Ok(out)
}

/// Splits a trailing ` # Label` comment off a line.
fn split_inline_label(line: &str) -> (&str, Option<String>) {
    match line.find(" #").or_else(|| line.find("\t#")) {
        Some(pos) => {
            let label = line[pos + 2..].trim();
            (
                line[..pos].trim(),
                (!label.is_empty()).then(|| label.to_string()),
            )
        }
        None => (line, None),
    }
}

const LOCAL_HOSTS: &[&str] = &[
    "localhost",
    "localhost.localdomain",
    "local",
    "broadcasthost",
    "0.0.0.0",
    "ip6-localhost",
    "ip6-loopback",
];

fn parse_hosts_line(line: &str, category: Category) -> Result<Vec<SignatureEntry>, String> {
    let (body, label) = split_inline_label(line);
    let mut fields = body.split_whitespace();
    let _addr = fields.next().ok_or("empty hosts line")?;
    let hosts: Vec<&str> = fields.collect();
    if hosts.is_empty() {
        return Err(format!("hosts line {body:?} names no host"));
    }
    hosts
        .into_iter()
        .map(str::to_lowercase)
        .filter(|h| !LOCAL_HOSTS.contains(&h.as_str()))
        .map(|h| {
            let label = label.clone().or_else(|| derived_label(&h, PatternKind::Domain, category));
            SignatureEntry::new(&h, PatternKind::Domain, category, label).map_err(|e| e.to_string())
        })
        .collect()
}

fn looks_like_host(s: &str) -> bool {
    s.contains('.')
        && !s.starts_with('.')
        && !s.ends_with('.')
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'-' || b == b'_')
}

fn classify_literal(pattern: &str) -> Option<(String, PatternKind)> {
    let pattern = pattern.to_lowercase();
    if pattern.is_empty() {
        return None;
    }
    if let Some((_, rest)) = pattern.split_once("://") {
        if let Ok(url) = Url::parse(&pattern) {
            let bare_host = url.path() == "/" && url.query().is_none() && !rest.contains('/')
                || rest.trim_end_matches('/') == url.host_str().unwrap_or_default();
            if let (true, Some(host)) = (bare_host, url.host_str()) {
                return Some((host.to_string(), PatternKind::Domain));
            }
        }
        return Some((rest.to_string(), PatternKind::UrlSubstring));
    }
    if pattern.contains('/') {
        return Some((pattern, PatternKind::UrlSubstring));
    }
    if looks_like_host(&pattern) {
        return Some((pattern, PatternKind::Domain));
    }
    Some((pattern, PatternKind::Keyword))
}

fn parse_plain_line(line: &str, category: Category) -> Result<Vec<SignatureEntry>, String> {
    let (body, label) = split_inline_label(line);
    if body.split_whitespace().count() > 1 {
        return Err(format!("unexpected whitespace in pattern {body:?}"));
    }
    let Some((pattern, kind)) = classify_literal(body) else {
        return Ok(Vec::new());
    };
    let label = label.or_else(|| derived_label(&pattern, kind, category));
    SignatureEntry::new(&pattern, kind, category, label)
        .map(|e| vec![e])
        .map_err(|e| e.to_string())
}

fn longest_literal(s: &str) -> &str {
    s.split(['*', '^', '|'])
        .max_by_key(|seg| seg.len())
        .unwrap_or("")
}

fn parse_filter_rule(line: &str, category: Category) -> Result<Vec<SignatureEntry>, String> {
    // exceptions and cosmetic rules never block a request
    if line.starts_with("@@") || ["##", "#@#", "#?#", "#$#"].iter().any(|m| line.contains(m)) {
        return Ok(Vec::new());
    }
    let rule = line.split('$').next().unwrap_or_default().trim();
    if rule.starts_with('/') && rule.ends_with('/') && rule.len() > 2 && rule.contains('\\') {
        // regex rules are outside literal matching
        return Ok(Vec::new());
    }
    let (pattern, kind) = if let Some(rest) = rule.strip_prefix("||") {
        let host_end = rest.find(['/', '^', '*', ':']).unwrap_or(rest.len());
        let (host, tail) = rest.split_at(host_end);
        let tail_literal = tail.trim_start_matches('^').trim_end_matches(['^', '|', '*']);
        if tail_literal.is_empty() && looks_like_host(host) {
            (host.to_lowercase(), PatternKind::Domain)
        } else if tail.contains('*') {
            (longest_literal(rest).to_lowercase(), PatternKind::UrlSubstring)
        } else {
            (
                format!("{host}{tail_literal}").to_lowercase(),
                PatternKind::UrlSubstring,
            )
        }
    } else {
        let literal = longest_literal(rule.trim_start_matches('|'));
        match classify_literal(literal) {
            Some((p, PatternKind::Keyword)) => (p, PatternKind::Keyword),
            Some((p, PatternKind::Domain)) if !rule.contains('/') => (p, PatternKind::Domain),
            Some((p, _)) => (p, PatternKind::UrlSubstring),
            None => return Ok(Vec::new()),
        }
    };
    if pattern.is_empty() {
        return Ok(Vec::new());
    }
    let label = derived_label(&pattern, kind, category);
    SignatureEntry::new(&pattern, kind, category, label)
        .map(|e| vec![e])
        .map_err(|e| e.to_string())
}

/// Best-effort library name for a miner pattern without an explicit label:
/// the second-level label of a domain, the script stem of a URL fragment,
/// or the keyword itself.
fn derived_label(pattern: &str, kind: PatternKind, category: Category) -> Option<String> {
    if category != Category::Miner {
        return None;
    }
    let label = match kind {
        PatternKind::Domain => {
            let parts: Vec<&str> = pattern.split('.').collect();
            parts
                .len()
                .checked_sub(2)
                .map_or(pattern, |i| parts[i])
                .to_string()
        }
        PatternKind::UrlSubstring => {
            let last = pattern
                .trim_end_matches('/')
                .rsplit('/')
                .next()
                .unwrap_or(pattern);
            last.trim_end_matches(".js").trim_end_matches(".min").to_string()
        }
        PatternKind::Keyword => pattern.to_string(),
    };
    (!label.is_empty()).then_some(label)
}

/// The parts of a landing page the detector looks at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageSnapshot {
    pub url: String,
    #[serde(default)]
    pub body_text: String,
    #[serde(default)]
    pub request_urls: Vec<String>,
}

impl PageSnapshot {
    pub fn new(
        url: impl Into<String>,
        body_text: impl Into<String>,
        request_urls: Vec<String>,
    ) -> Result<Self, SignatureError> {
        let snap = Self {
            url: url.into(),
            body_text: body_text.into(),
            request_urls,
        };
        snap.validate()?;
        Ok(snap)
    }

    pub fn validate(&self) -> Result<(), SignatureError> {
        Url::parse(&self.url)
            .map(|_| ())
            .map_err(|_| SignatureError::InvalidUrl(self.url.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    MinerSupported,
    AdSupported,
    Both,
    Neither,
}

impl Classification {
    pub fn from_counts(miners: usize, ad_slots: usize) -> Self {
        match (miners > 0, ad_slots > 0) {
            (true, true) => Self::Both,
            (true, false) => Self::MinerSupported,
            (false, true) => Self::AdSupported,
            (false, false) => Self::Neither,
        }
    }

    pub fn has_miner(self) -> bool {
        matches!(self, Self::MinerSupported | Self::Both)
    }

    pub fn has_ads(self) -> bool {
        matches!(self, Self::AdSupported | Self::Both)
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MinerSupported => "miner_supported",
            Self::AdSupported => "ad_supported",
            Self::Both => "both",
            Self::Neither => "neither",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MinerMatch {
    pub library_label: String,
    pub matched_pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub url: String,
    pub miners_detected: Vec<MinerMatch>,
    pub ad_slot_count: usize,
    pub classification: Classification,
}

/// Matches every blacklist entry against one snapshot.
pub fn classify_page(page: &PageSnapshot, bl: &Blacklist) -> DetectionReport {
    let body = page.body_text.to_lowercase();
    let requests: Vec<(String, Option<String>)> = page
        .request_urls
        .iter()
        .map(|u| {
            let lower = u.to_lowercase();
            let host = Url::parse(&lower)
                .ok()
                .and_then(|p| p.host_str().map(str::to_string));
            (lower, host)
        })
        .collect();

    let mut miners = BTreeSet::new();
    let mut ad_urls = BTreeSet::new();
    for entry in bl.entries() {
        match entry.category {
            Category::Miner => {
                let hit = body.contains(&entry.pattern)
                    || requests
                        .iter()
                        .any(|(url, host)| entry.matches_url(url, host.as_deref()));
                if hit {
                    miners.insert(MinerMatch {
                        library_label: entry.label().to_string(),
                        matched_pattern: entry.pattern.clone(),
                    });
                }
            }
            Category::Ad => {
                for (url, host) in &requests {
                    if entry.matches_url(url, host.as_deref()) {
                        ad_urls.insert(url.as_str());
                    }
                }
            }
        }
    }
    let miners_detected: Vec<MinerMatch> = miners.into_iter().collect();
    let ad_slot_count = ad_urls.len();
    DetectionReport {
        url: page.url.clone(),
        classification: Classification::from_counts(miners_detected.len(), ad_slot_count),
        miners_detected,
        ad_slot_count,
    }
}

/// Fraction of miner-supported pages carrying each library. A page with
/// several libraries counts once for each of them.
pub fn market_share(reports: &[DetectionReport]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut pages = 0usize;
    for report in reports {
        let labels: BTreeSet<&str> = report
            .miners_detected
            .iter()
            .map(|m| m.library_label.as_str())
            .collect();
        if labels.is_empty() {
            continue;
        }
        pages += 1;
        for label in labels {
            *counts.entry(label.to_string()).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(label, n)| (label, n as f64 / pages as f64))
        .collect()
}

/// Mean ad slots over ad-carrying reports.
pub fn mean_ad_slots(reports: &[DetectionReport]) -> Option<f64> {
    let slots: Vec<usize> = reports
        .iter()
        .filter(|r| r.ad_slot_count > 0)
        .map(|r| r.ad_slot_count)
        .collect();
    (!slots.is_empty()).then(|| slots.iter().sum::<usize>() as f64 / slots.len() as f64)
}
