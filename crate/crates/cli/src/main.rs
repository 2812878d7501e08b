//! `pagecost`: command-line client for the fixture service and the probe
//! harness.

mod analysis;
mod lists;

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pagecost_client::ApiClient;
use pagecost_core::scenario::Scenario;
use pagecost_core::stats::ReportFormat;
use pagecost_harness::bench::WORKER_COUNTS;
use pagecost_harness::campaign::read_targets;
use pagecost_harness::{
    build_monitors, run_campaign, BrowserDriver, Calibration, CampaignSink, CdpDriver,
    HarnessConfig, LaunchSpec, MockBrowser,
};
use pagecost_service::{serve, FixtureConfig, ServiceHandle};
use tracing::warn;

#[derive(Parser)]
#[command(name = "pagecost", version, about = "Measure what mining and ad-supported pages cost their visitors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ServerArg {
    /// Fixture service to use, e.g. http://127.0.0.1:8080. Without it an
    /// in-process service is started for the duration of the command.
    #[arg(long)]
    server: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the fixture service until interrupted.
    Serve {
        /// Fixture config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Revenue and break-even tables for a scenario.
    Simulate {
        /// Scenario config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Directory for revenue.csv and break_even.csv; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        server: ServerArg,
    },
    /// Classify page snapshots against merged blacklists.
    Detect {
        #[arg(long, num_args = 1.., required = true)]
        miner_lists: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        ad_lists: Vec<PathBuf>,
        /// Directory of snapshot files (*.json or *.jsonl).
        #[arg(long)]
        snapshots: PathBuf,
        #[arg(long, default_value = "detect-out")]
        out: PathBuf,
        #[command(flatten)]
        server: ServerArg,
    },
    /// Run a probe campaign over a targets file.
    Probe {
        /// One URL per line.
        #[arg(long)]
        targets: PathBuf,
        /// Monitored phase length, seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Seconds between samples.
        #[arg(long)]
        interval: Option<f64>,
        /// Comma-separated monitor ids.
        #[arg(long, value_delimiter = ',')]
        monitors: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Harness config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Interference baselines from `calibrate`.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Benchmark run length per worker count, seconds.
        #[arg(long)]
        phase2_duration: Option<f64>,
        #[arg(long, value_enum, default_value = "mock")]
        driver: DriverKind,
        /// Browser binary for the chromium driver.
        #[arg(long, default_value = "chromium")]
        browser: PathBuf,
        /// Remote-debugging port for the chromium driver.
        #[arg(long, default_value_t = 9222)]
        debug_port: u16,
        /// Attach to an already running browser at this http endpoint.
        #[arg(long)]
        attach: Option<String>,
    },
    /// Record interference benchmark baselines on an idle machine.
    Calibrate {
        #[arg(long, default_value = "calibration.json")]
        out: PathBuf,
        /// Seconds per worker count; must match the probes' phase-2 length.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, value_delimiter = ',')]
        workers: Option<Vec<u32>>,
    },
    /// Percentile tables and corpus comparisons over probe output directories.
    Report {
        /// Campaign directories; the first is the reference corpus.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        #[command(flatten)]
        server: ServerArg,
    },
    /// Per-site traffic summaries and the miner bitrate distribution.
    Traffic {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "traffic")]
        out: PathBuf,
        /// Defaults to the fixture service's lists.
        #[arg(long, num_args = 1..)]
        miner_lists: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        ad_lists: Vec<PathBuf>,
        #[command(flatten)]
        server: ServerArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DriverKind {
    Mock,
    Chromium,
}

/// An API client plus the in-process service backing it, if one was started.
struct Session {
    api: ApiClient,
    local: Option<ServiceHandle>,
}

impl Session {
    async fn open(arg: &ServerArg) -> Result<Self> {
        match &arg.server {
            Some(url) => {
                let api = ApiClient::new(url.clone());
                api.health()
                    .await
                    .with_context(|| format!("service at {url} is not reachable"))?;
                Ok(Self { api, local: None })
            }
            None => {
                let handle = serve(FixtureConfig::default()).await?;
                Ok(Self {
                    api: ApiClient::new(handle.base_url()),
                    local: Some(handle),
                })
            }
        }
    }

    async fn close(self) -> Result<()> {
        if let Some(h) = self.local {
            h.shutdown().await?;
        }
        Ok(())
    }
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Serve { config, port } => cmd_serve(config, port).await,
        Command::Simulate {
            config,
            out,
            server,
        } => {
            let s = Session::open(&server).await?;
            let r = cmd_simulate(&s.api, &config, out.as_deref()).await;
            s.close().await?;
            r
        }
        Command::Detect {
            miner_lists,
            ad_lists,
            snapshots,
            out,
            server,
        } => {
            let s = Session::open(&server).await?;
            let r = cmd_detect(&s.api, &miner_lists, &ad_lists, &snapshots, &out).await;
            s.close().await?;
            r
        }
        Command::Probe {
            targets,
            duration,
            interval,
            monitors,
            out,
            config,
            calibration,
            phase2_duration,
            driver,
            browser,
            debug_port,
            attach,
        } => {
            let mut cfg = match &config {
                Some(p) => HarnessConfig::load(p)?,
                None => HarnessConfig::default(),
            };
            if let Some(d) = duration {
                cfg.probe.phase1_duration = d;
            }
            if let Some(i) = interval {
                cfg.probe.sample_interval = i;
            }
            if let Some(m) = monitors {
                cfg.probe.enabled_monitors = m.into_iter().collect();
            }
            if let Some(o) = out {
                cfg.probe.output_dir = o;
            }
            if let Some(d) = phase2_duration {
                cfg.probe.phase2_duration = d;
            }
            if calibration.is_some() {
                cfg.calibration_file = calibration;
            }
            let mut driver: Box<dyn BrowserDriver> = match (driver, attach) {
                (DriverKind::Mock, _) => Box::new(MockBrowser::default()),
                (DriverKind::Chromium, Some(endpoint)) => {
                    Box::new(CdpDriver::attach_to(&endpoint, None).await?)
                }
                (DriverKind::Chromium, None) => {
                    Box::new(CdpDriver::launch(LaunchSpec::new(browser, debug_port)).await?)
                }
            };
            cmd_probe(&cfg, &targets, driver.as_mut()).await
        }
        Command::Calibrate {
            out,
            duration,
            workers,
        } => cmd_calibrate(&out, duration, workers),
        Command::Report {
            dirs,
            out,
            format,
            server,
        } => {
            let s = Session::open(&server).await?;
            let r = analysis::report(&s.api, &dirs, &out, format).await;
            s.close().await?;
            r
        }
        Command::Traffic {
            dirs,
            out,
            miner_lists,
            ad_lists,
            server,
        } => {
            let s = Session::open(&server).await?;
            let r = async {
                let bl = if miner_lists.is_empty() && ad_lists.is_empty() {
                    lists::fixture_lists(&s.api).await?
                } else {
                    lists::load_lists(&miner_lists, &ad_lists)?
                };
                analysis::traffic(&s.api, &dirs, &bl, &out).await
            }
            .await;
            s.close().await?;
            r
        }
    }
}

async fn cmd_serve(config: Option<PathBuf>, port: Option<u16>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => FixtureConfig::from_toml(
            &std::fs::read_to_string(&p).with_context(|| p.display().to_string())?,
        )?,
        None => FixtureConfig::default(),
    };
    if let Some(p) = port {
        cfg.port = p;
    }
    let handle = serve(cfg).await?;
    println!("serving on {}", handle.base_url());
    tokio::signal::ctrl_c().await?;
    handle.shutdown().await?;
    Ok(())
}

async fn cmd_simulate(api: &ApiClient, config: &Path, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| config.display().to_string())?;
    let scenario = Scenario::from_toml(&text)?;
    let result = api.simulate(&scenario).await?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            result.write_revenue_csv(std::fs::File::create(dir.join("revenue.csv"))?)?;
            result.write_break_even_csv(std::fs::File::create(dir.join("break_even.csv"))?)?;
            println!("wrote {}", dir.display());
        }
        None => {
            let stdout = std::io::stdout();
            result.write_revenue_csv(stdout.lock())?;
            println!();
            result.write_break_even_csv(stdout.lock())?;
        }
    }
    Ok(())
}

async fn cmd_detect(
    api: &ApiClient,
    miner_lists: &[PathBuf],
    ad_lists: &[PathBuf],
    snapshots: &Path,
    out: &Path,
) -> Result<()> {
    let bl = lists::load_lists(miner_lists, ad_lists)?;
    let pages = lists::load_snapshots(snapshots)?;
    if pages.is_empty() {
        bail!("no snapshots in {}", snapshots.display());
    }
    let reports = api.classify(&bl, &pages).await?;
    let shares = api.market_share(&reports).await?;

    std::fs::create_dir_all(out)?;
    let mut jsonl = String::new();
    for r in &reports {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    std::fs::write(out.join("reports.jsonl"), jsonl)?;
    let mut csv = String::from("label,share\n");
    for (label, share) in &shares {
        csv.push_str(&format!("{label},{share}\n"));
    }
    std::fs::write(out.join("market_share.csv"), csv)?;

    let miners = reports.iter().filter(|r| r.classification.has_miner()).count();
    let ads = reports.iter().filter(|r| r.classification.has_ads()).count();
    println!(
        "{} pages: {miners} with miners, {ads} with ads; wrote {}",
        reports.len(),
        out.display()
    );
    Ok(())
}

async fn cmd_probe(cfg: &HarnessConfig, targets: &Path, driver: &mut dyn BrowserDriver) -> Result<()> {
    let targets = read_targets(targets).with_context(|| targets.display().to_string())?;
    let ids: Vec<String> = cfg.probe.enabled_monitors.iter().cloned().collect();
    let (mut monitors, warnings) = build_monitors(&ids, &cfg.monitors).map_err(anyhow::Error::msg)?;
    for w in warnings {
        warn!("{w}");
    }
    let calibration = match &cfg.calibration_file {
        Some(p) => Some(Calibration::load(p).with_context(|| p.display().to_string())?),
        None => None,
    };
    let mut sink = CampaignSink::create(&cfg.probe.output_dir, &targets)?;
    let results = run_campaign(
        &targets,
        &cfg.probe,
        driver,
        &mut monitors,
        calibration.as_ref(),
        &mut sink,
    )
    .await?;
    let ok = results.iter().filter(|r| r.status.is_completed()).count();
    println!(
        "{ok}/{} probes completed; results in {}",
        results.len(),
        cfg.probe.output_dir.display()
    );
    Ok(())
}

fn cmd_calibrate(out: &Path, duration: f64, workers: Option<Vec<u32>>) -> Result<()> {
    if !(duration.is_finite() && duration > 0.0) {
        bail!("duration must be positive");
    }
    let mut cal = if out.exists() {
        Calibration::load(out)?
    } else {
        Calibration::default()
    };
    let d = Duration::from_secs_f64(duration);
    for w in workers.unwrap_or_else(|| WORKER_COUNTS.to_vec()) {
        let ops = cal.calibrate(w, d)?;
        println!("{w} workers: {ops} iterations in {duration} s");
    }
    cal.save(out)?;
    println!("wrote {}", out.display());
    Ok(())
}
