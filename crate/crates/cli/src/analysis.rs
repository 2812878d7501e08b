//! Post-processing of campaign directories.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pagecost_client::ApiClient;
use pagecost_core::record::ProbeResult;
use pagecost_core::signatures::Blacklist;
use pagecost_core::stats::{compare_corpora, emit_report, ComparisonRow, PercentileTable, ReportFormat};
use pagecost_core::traffic::{write_summaries_csv, TrafficSummary};
use pagecost_core::wire::SummarizeRequest;
use pagecost_harness::load_campaign;

/// A named corpus of completed probes.
pub struct Corpus {
    pub name: String,
    pub probes: Vec<ProbeResult>,
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let probes = load_campaign(dir)
        .with_context(|| dir.display().to_string())?
        .into_iter()
        .filter(|p| p.status.is_completed())
        .collect();
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(Corpus { name, probes })
}

/// Per-site scalar metrics: `monitor.channel` means and interference ratios.
fn metrics(corpora: &[Corpus]) -> BTreeSet<(String, Option<String>)> {
    let mut out = BTreeSet::new();
    for c in corpora {
        for p in &c.probes {
            for (id, s) in &p.phase1 {
                for ch in s.channels() {
                    out.insert((id.clone(), Some(ch)));
                }
            }
            for o in &p.phase2 {
                out.insert((format!("interference.w{}", o.workers), None));
            }
        }
    }
    out
}

fn extract(metric: &(String, Option<String>), p: &ProbeResult) -> Option<f64> {
    match metric {
        (id, Some(ch)) => p.channel_mean(id, ch),
        (id, None) => {
            let w: u32 = id.strip_prefix("interference.w")?.parse().ok()?;
            p.interference_ratio(w)
        }
    }
}

fn metric_name(metric: &(String, Option<String>)) -> String {
    match metric {
        (id, Some(ch)) => format!("{id}.{ch}"),
        (id, None) => id.clone(),
    }
}

pub async fn report(api: &ApiClient, dirs: &[PathBuf], out: &Path, format: ReportFormat) -> Result<()> {
    let corpora = dirs.iter().map(|d| load_corpus(d)).collect::<Result<Vec<_>>>()?;
    let mut tables: Vec<PercentileTable> = Vec::new();
    let mut rows: Vec<ComparisonRow> = Vec::new();
    for m in metrics(&corpora) {
        let name = metric_name(&m);
        for c in &corpora {
            let series: Vec<f64> = c.probes.iter().filter_map(|p| extract(&m, p)).collect();
            if series.is_empty() {
                continue;
            }
            tables.push(api.percentiles(&name, &series, None).await?.with_group(c.name.clone()));
        }
        let (reference, others) = corpora.split_first().expect("at least one dir");
        for c in others {
            if let Ok(mut row) = compare_corpora(&name, &reference.probes, &c.probes, |p| extract(&m, p)) {
                row.metric = format!("{name}:{}/{}", c.name, reference.name);
                rows.push(row);
            }
        }
    }
    if tables.is_empty() {
        bail!("no completed probes with samples in the given directories");
    }
    let written = emit_report(out, &tables, &rows, format)?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub async fn summarize_corpus(api: &ApiClient, corpus: &Corpus, bl: &Blacklist) -> Result<Vec<TrafficSummary>> {
    let mut out = Vec::with_capacity(corpus.probes.len());
    for p in &corpus.probes {
        let req = SummarizeRequest {
            target_url: p.target_url.clone(),
            requests: p.requests.clone(),
            frames: p.frames.clone(),
            blacklist: bl.clone(),
            window: p.phase1_duration(),
        };
        out.push(api.summarize(&req).await?);
    }
    Ok(out)
}

pub async fn traffic(api: &ApiClient, dirs: &[PathBuf], bl: &Blacklist, out: &Path) -> Result<()> {
    let mut summaries = Vec::new();
    for d in dirs {
        summaries.extend(summarize_corpus(api, &load_corpus(d)?, bl).await?);
    }
    if summaries.is_empty() {
        bail!("no completed probes in the given directories");
    }
    std::fs::create_dir_all(out)?;
    write_summaries_csv(&summaries, std::fs::File::create(out.join("traffic_summaries.csv"))?)?;

    let miner_sites: Vec<f64> = summaries
        .iter()
        .filter(|s| s.miner_frame_count > 0)
        .map(|s| s.miner_bitrate)
        .collect();
    if miner_sites.is_empty() {
        println!("no miner traffic observed; skipping bitrate distribution");
    } else {
        let table = api.percentiles("miner_bitrate_bps", &miner_sites, None).await?;
        let tmp = out.join(".distribution");
        let written = emit_report(&tmp, &[table.clone()], &[], ReportFormat::Csv)?;
        std::fs::rename(&written[0], out.join("bitrate_distribution.csv"))?;
        let _ = std::fs::remove_dir(&tmp);
        println!(
            "median miner bitrate {:.1} bit/s over {} sites",
            table.median().unwrap_or(0.0),
            miner_sites.len()
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
