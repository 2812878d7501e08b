//! Sequential campaigns over a target list with an append-only results sink.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use pagecost_core::record::{ProbeResult, ProbeStatus};
use serde::{Deserialize, Serialize};
use tracing::{error, info};

use crate::bench::Calibration;
use crate::driver::BrowserDriver;
use crate::monitors::Monitor;
use crate::probe::{purge_and_verify, run_probe, HarnessError, ProbeConfig};

pub const MANIFEST_FILE: &str = "campaign.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub target_url: String,
    pub file: String,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub targets: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Set when the campaign stopped early because results would be contaminated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

/// One JSON-lines file per probe plus a manifest, both replaced atomically,
/// so an interrupted campaign leaves only complete results behind.
pub struct CampaignSink {
    dir: PathBuf,
    manifest: CampaignManifest,
}

fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(tmp, path)
}

fn sink_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Sink(e.to_string())
}

impl CampaignSink {
    pub fn create(dir: &Path, targets: &[String]) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir).map_err(sink_err)?;
        let sink = Self {
            dir: dir.to_path_buf(),
            manifest: CampaignManifest {
                targets: targets.to_vec(),
                ..Default::default()
            },
        };
        sink.write_manifest()?;
        Ok(sink)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &CampaignManifest {
        &self.manifest
    }

    fn write_manifest(&self) -> Result<(), HarnessError> {
        write_atomic(&self.dir.join(MANIFEST_FILE), |w| {
            serde_json::to_writer_pretty(&mut *w, &self.manifest)?;
            w.write_all(b"\n")
        })
        .map_err(sink_err)
    }

    pub fn append(&mut self, result: &ProbeResult) -> Result<(), HarnessError> {
        let index = self.manifest.entries.len();
        let file = format!("probe-{index:04}.jsonl");
        let mut err = None;
        write_atomic(&self.dir.join(&file), |w| {
            result.write_jsonl(&mut *w).map_err(|e| {
                err = Some(e.to_string());
                std::io::Error::other("probe serialization failed")
            })
        })
        .map_err(|e| sink_err(err.take().unwrap_or_else(|| e.to_string())))?;
        self.manifest.entries.push(ManifestEntry {
            index,
            target_url: result.target_url.clone(),
            file,
            completed: result.status.is_completed(),
            error: match &result.status {
                ProbeStatus::Failed { error } => Some(error.clone()),
                ProbeStatus::Completed => None,
            },
        });
        self.write_manifest()
    }

    pub fn abort(&mut self, reason: String) -> Result<(), HarnessError> {
        self.manifest.aborted = Some(reason);
        self.write_manifest()
    }
}

pub fn load_manifest(dir: &Path) -> Result<CampaignManifest, HarnessError> {
    let f = fs::File::open(dir.join(MANIFEST_FILE)).map_err(sink_err)?;
    serde_json::from_reader(BufReader::new(f)).map_err(sink_err)
}

/// Results listed in a campaign directory's manifest, in probe order.
pub fn load_campaign(dir: &Path) -> Result<Vec<ProbeResult>, HarnessError> {
    load_manifest(dir)?
        .entries
        .iter()
        .map(|e| load_probe(&dir.join(&e.file)))
        .collect()
}

pub fn load_probe(path: &Path) -> Result<ProbeResult, HarnessError> {
    let f = fs::File::open(path).map_err(|e| sink_err(format!("{}: {e}", path.display())))?;
    ProbeResult::read_jsonl(BufReader::new(f)).map_err(|e| sink_err(format!("{}: {e}", path.display())))
}

/// Probes `targets` one after another, appending each result to `sink` as
/// soon as it is known.
///
/// A failed probe is recorded and the campaign moves on. A purge that
/// leaves state behind stops the campaign, since every later measurement
/// would be contaminated.
pub async fn run_campaign(
    targets: &[String],
    template: &ProbeConfig,
    driver: &mut dyn BrowserDriver,
    monitors: &mut Vec<Box<dyn Monitor>>,
    calibration: Option<&Calibration>,
    sink: &mut CampaignSink,
) -> Result<Vec<ProbeResult>, HarnessError> {
    if targets.is_empty() {
        return Err(HarnessError::Config("no targets".into()));
    }
    template.for_target(&targets[0]).validate()?;
    if let Err(e) = purge_and_verify(driver).await {
        sink.abort(e.to_string())?;
        return Err(e);
    }
    let mut results = Vec::with_capacity(targets.len());
    for (i, url) in targets.iter().enumerate() {
        info!(index = i, %url, "probing");
        let config = template.for_target(url);
        match run_probe(&config, driver, monitors, calibration).await {
            Ok(r) => {
                sink.append(&r)?;
                results.push(r);
            }
            Err(e) => {
                error!(%url, error = %e, "campaign aborted");
                sink.abort(format!("{url}: {e}"))?;
                return Err(e);
            }
        }
    }
    Ok(results)
}

/// Reads a targets file: one URL per line, `#` comments and blanks ignored.
pub fn read_targets(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sink_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let targets = vec!["http://a.test/".to_string(), "http://b.test/".to_string()];
        let mut sink = CampaignSink::create(dir.path(), &targets).unwrap();
        let a = ProbeResult::failed("http://a.test/", "unreachable", 1.0);
        sink.append(&a).unwrap();
        let m = load_manifest(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.entries[0].error.as_deref(), Some("unreachable"));
        assert_eq!(load_campaign(dir.path()).unwrap(), vec![a]);
        assert!(!dir.path().join("campaign.tmp").exists());
    }

    #[test]
    fn targets_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "# list\nhttp://a/\n\n  http://b/  \n").unwrap();
        assert_eq!(read_targets(&p).unwrap(), ["http://a/", "http://b/"]);
    }
}
