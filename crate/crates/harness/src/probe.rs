//! Two-phase probe of one target page.
//!
//! Phase 1 loads the page and samples every enabled monitor on its own
//! timer. The browser is then purged and verified clean. Phase 2 reloads the
//! page once per benchmark worker count with nothing but the interference
//! benchmark running.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Duration;

use pagecost_core::record::{now_timestamp, ProbeResult, ProbeStatus, Sample, SampleSeries};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;
use tracing::{info, warn};

use crate::bench::{BenchError, Calibration};
use crate::driver::{parse_state_title, BrowserDriver, DriverError, StoredState};
use crate::monitors::{Monitor, MonitorError, ProbeContext, ALL_MONITORS, INTERFERENCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub target_url: String,
    /// Seconds.
    pub phase1_duration: f64,
    /// Seconds, per benchmark worker count.
    pub phase2_duration: f64,
    /// Seconds between monitor samples.
    pub sample_interval: f64,
    pub enabled_monitors: BTreeSet<String>,
    pub output_dir: PathBuf,
    /// Seconds before a page load is abandoned.
    pub navigation_timeout: f64,
    /// Extra attempts after a browser crash.
    pub max_retries: u32,
    pub interference_workers: Vec<u32>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            target_url: String::new(),
            phase1_duration: 180.0,
            phase2_duration: 60.0,
            sample_interval: 1.0,
            enabled_monitors: ALL_MONITORS.iter().map(|s| s.to_string()).collect(),
            output_dir: PathBuf::from("probes"),
            navigation_timeout: 30.0,
            max_retries: 1,
            interference_workers: vec![1, 2, 4],
        }
    }
}

impl ProbeConfig {
    pub fn for_target(&self, url: &str) -> Self {
        Self {
            target_url: url.to_string(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.phase1_duration) || !positive(self.phase2_duration) {
            return bad("phase durations must be positive".into());
        }
        if !positive(self.sample_interval)
            || self.sample_interval > self.phase1_duration
            || self.sample_interval > self.phase2_duration
        {
            return bad("sample_interval must be positive and no longer than either phase".into());
        }
        if !positive(self.navigation_timeout) {
            return bad("navigation_timeout must be positive".into());
        }
        if let Some(m) = self
            .enabled_monitors
            .iter()
            .find(|m| !ALL_MONITORS.contains(&m.as_str()))
        {
            return bad(format!("unknown monitor {m}"));
        }
        if self.interference_workers.contains(&0) {
            return bad("interference worker counts must be positive".into());
        }
        Ok(())
    }

    fn phase2_enabled(&self) -> bool {
        self.enabled_monitors.contains(INTERFERENCE) && !self.interference_workers.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid probe config: {0}")]
    Config(String),
    /// Measurements after this point would be contaminated.
    #[error("purge failed: {0}")]
    Purge(DriverError),
    #[error("purge left state behind: {} artifacts ({residue:?})", residue.artifact_count())]
    PurgeIncomplete { residue: StoredState },
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("results sink: {0}")]
    Sink(String),
}

/// Purges and checks that nothing survived.
pub async fn purge_and_verify(driver: &mut dyn BrowserDriver) -> Result<(), HarnessError> {
    driver.purge_state().await.map_err(HarnessError::Purge)?;
    let residue = driver.stored_state().await.map_err(HarnessError::Purge)?;
    if residue.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::PurgeIncomplete { residue })
    }
}

enum AttemptError {
    Crash(String),
    Fatal(HarnessError),
}

impl From<HarnessError> for AttemptError {
    fn from(e: HarnessError) -> Self {
        Self::Fatal(e)
    }
}

/// Runs one probe, retrying after a browser crash up to `max_retries` times.
///
/// Probe-level problems (timeouts, unreachable pages, a dead measured
/// process) produce a failed [`ProbeResult`]; only conditions that would
/// contaminate later probes are returned as errors.
pub async fn run_probe(
    config: &ProbeConfig,
    driver: &mut dyn BrowserDriver,
    monitors: &mut Vec<Box<dyn Monitor>>,
    calibration: Option<&Calibration>,
) -> Result<ProbeResult, HarnessError> {
    config.validate()?;
    let phase2 = Duration::from_secs_f64(config.phase2_duration);
    if config.phase2_enabled() {
        let cal = calibration.ok_or(BenchError::MissingBaseline {
            workers: config.interference_workers[0],
            duration_ms: phase2.as_millis() as u64,
        })?;
        for &w in &config.interference_workers {
            cal.baseline(w, phase2)?;
        }
    }
    let started = now_timestamp();
    let mut last_crash = String::new();
    for attempt in 1..=config.max_retries + 1 {
        match attempt_once(config, driver, monitors, calibration).await {
            Ok(mut r) => {
                r.attempts = attempt;
                r.started_at = started;
                return Ok(r);
            }
            Err(AttemptError::Fatal(e)) => return Err(e),
            Err(AttemptError::Crash(msg)) => {
                warn!(url = %config.target_url, attempt, error = %msg, "browser crashed; restarting");
                last_crash = msg;
                if let Err(e) = driver.restart().await {
                    let mut r = ProbeResult::failed(
                        &config.target_url,
                        format!("restart after crash failed: {e}"),
                        started,
                    );
                    r.attempts = attempt;
                    return Ok(r);
                }
            }
        }
    }
    let mut r = ProbeResult::failed(
        &config.target_url,
        format!("browser crashed on every attempt: {last_crash}"),
        started,
    );
    r.attempts = config.max_retries + 1;
    r.metadata = driver.metadata();
    Ok(r)
}

fn failed_with(mut r: ProbeResult, error: String) -> ProbeResult {
    r.status = ProbeStatus::Failed { error };
    r.finished_at = now_timestamp();
    r
}

async fn attempt_once(
    config: &ProbeConfig,
    driver: &mut dyn BrowserDriver,
    monitors: &mut Vec<Box<dyn Monitor>>,
    calibration: Option<&Calibration>,
) -> Result<ProbeResult, AttemptError> {
    let network = driver.network();
    // events from before this probe belong to nobody
    let _ = network.drain();
    let timeout = Duration::from_secs_f64(config.navigation_timeout);
    let enabled: Vec<usize> = (0..monitors.len())
        .filter(|&i| config.enabled_monitors.contains(monitors[i].id()))
        .collect();

    let begin = now_timestamp();
    let mut result = ProbeResult::failed(&config.target_url, "", begin);
    result.metadata = driver.metadata();
    result.phase1_bounds = (begin, begin);
    for &i in &enabled {
        let m = &monitors[i];
        result
            .phase1
            .insert(m.id().to_string(), SampleSeries::new(m.id(), m.unit()));
    }

    let load = match driver.navigate(&config.target_url, timeout).await {
        Ok(load) => load,
        Err(DriverError::Crashed(msg)) => return Err(AttemptError::Crash(msg)),
        Err(e) => {
            let _ = driver.close_page().await;
            let cap = network.drain();
            result.requests = cap.requests;
            result.frames = cap.frames;
            result.network_gaps = cap.dropped;
            purge_and_verify(driver).await?;
            return Ok(failed_with(result, e.to_string()));
        }
    };
    result.metadata.insert("title".into(), load.title.clone());
    result
        .metadata
        .insert("status_code".into(), load.status_code.to_string());
    if let Some(found) = parse_state_title(&load.title) {
        let v = if found.is_empty() {
            "none".to_string()
        } else {
            found.join(",")
        };
        result.metadata.insert("state_found".into(), v);
    }

    // phase 1
    let ctx = ProbeContext {
        target: driver.resource_target(),
        network: network.clone(),
    };
    let mut active = Vec::new();
    let mut phase1_error = None;
    for &i in &enabled {
        match monitors[i].start(&ctx) {
            Ok(()) => active.push(i),
            Err(MonitorError::TargetExited(e)) => {
                phase1_error = Some(format!("measured process exited: {e}"));
                break;
            }
            Err(e) => {
                warn!(monitor = monitors[i].id(), error = %e, "monitor disabled");
                result
                    .metadata
                    .insert(format!("warning.{}", monitors[i].id()), e.to_string());
            }
        }
    }
    let phase1_start = now_timestamp();
    if phase1_error.is_none() {
        let (taken, mut idle) = take_monitors(monitors, &active);
        let (returned, samples, error) = sample_phase(config, taken).await;
        idle.extend(returned);
        put_back(monitors, idle);
        for (id, t, values) in samples {
            if let Some(series) = result.phase1.get_mut(&id) {
                series.samples.extend(values.into_iter().map(|(channel, value)| Sample {
                    t,
                    channel,
                    value,
                }));
            }
        }
        for (id, warning) in error.warnings {
            result.metadata.insert(format!("warning.{id}"), warning);
        }
        phase1_error = error.fatal;
    }
    let phase1_end = now_timestamp();
    result.phase1_bounds = (phase1_start, phase1_end);
    driver.close_page().await.map_err(|e| match e {
        DriverError::Crashed(m) => AttemptError::Crash(m),
        other => AttemptError::Fatal(HarnessError::Purge(other)),
    })?;
    let cap = network.drain();
    result.requests = cap.requests;
    result.frames = cap.frames;
    result.network_gaps = cap.dropped;
    if cap.dropped > 0 {
        warn!(dropped = cap.dropped, "network events lost to overflow");
    }
    purge_and_verify(driver).await?;
    if let Some(e) = phase1_error {
        return Ok(failed_with(result, e));
    }

    // phase 2
    if config.phase2_enabled() {
        let cal = calibration.expect("checked by run_probe").clone();
        let duration = Duration::from_secs_f64(config.phase2_duration);
        for &w in &config.interference_workers {
            match driver.navigate(&config.target_url, timeout).await {
                Ok(_) => {}
                Err(DriverError::Crashed(msg)) => return Err(AttemptError::Crash(msg)),
                Err(e) => {
                    let _ = driver.close_page().await;
                    let _ = network.drain();
                    purge_and_verify(driver).await?;
                    return Ok(failed_with(result, format!("phase 2: {e}")));
                }
            }
            let c = cal.clone();
            let outcome = tokio::task::spawn_blocking(move || c.measure(w, duration))
                .await
                .map_err(|e| AttemptError::Fatal(HarnessError::Config(e.to_string())))?
                .map_err(HarnessError::from)?;
            driver.close_page().await.map_err(|e| AttemptError::Crash(e.to_string()))?;
            let _ = network.drain();
            purge_and_verify(driver).await?;
            result.phase2.push(outcome);
        }
    }
    result.status = ProbeStatus::Completed;
    result.finished_at = now_timestamp();
    info!(url = %config.target_url, "probe completed");
    Ok(result)
}

type Indexed = Vec<(usize, Box<dyn Monitor>)>;

/// Splits out the active monitors, remembering every original position.
fn take_monitors(monitors: &mut Vec<Box<dyn Monitor>>, active: &[usize]) -> (Indexed, Indexed) {
    std::mem::take(monitors)
        .into_iter()
        .enumerate()
        .partition(|(i, _)| active.contains(i))
}

fn put_back(monitors: &mut Vec<Box<dyn Monitor>>, mut all: Indexed) {
    all.sort_by_key(|(i, _)| *i);
    monitors.extend(all.into_iter().map(|(_, m)| m));
}

#[derive(Default)]
struct PhaseErrors {
    fatal: Option<String>,
    warnings: Vec<(String, String)>,
}

type Tick = (String, f64, Vec<(String, f64)>);

/// Samples each monitor on its own timer; deliveries are serialized
/// through one channel.
async fn sample_phase(
    config: &ProbeConfig,
    taken: Indexed,
) -> (Indexed, Vec<Tick>, PhaseErrors) {
    let interval = Duration::from_secs_f64(config.sample_interval);
    let ticks = (config.phase1_duration / config.sample_interval + 1e-9).floor() as u64;
    let start = tokio::time::Instant::now();
    let (tx, mut rx) = mpsc::unbounded_channel::<(String, f64, Result<Vec<(String, f64)>, MonitorError>)>();
    let mut handles = Vec::new();
    for (i, mut m) in taken {
        let tx = tx.clone();
        handles.push(tokio::spawn(async move {
            let mut timer = tokio::time::interval_at(start + interval, interval);
            timer.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
            let id = m.id().to_string();
            for _ in 0..ticks {
                let at = timer.tick().await;
                // a skipped tick past the phase end is not sampled
                if at > start + interval * ticks as u32 {
                    break;
                }
                let t = now_timestamp();
                let r = m.sample();
                let stop = r.is_err();
                let _ = tx.send((id.clone(), t, r));
                if stop {
                    break;
                }
            }
            (i, m)
        }));
    }
    drop(tx);
    let mut samples = Vec::new();
    let mut errors = PhaseErrors::default();
    let mut last: BTreeMap<String, f64> = BTreeMap::new();
    while let Some((id, t, r)) = rx.recv().await {
        match r {
            Ok(values) => {
                // keep per-monitor timestamps strictly increasing
                let t = match last.get(&id) {
                    Some(&p) if t <= p => f64::from_bits(p.to_bits() + 1),
                    _ => t,
                };
                last.insert(id.clone(), t);
                if !values.is_empty() {
                    samples.push((id, t, values));
                }
            }
            Err(MonitorError::TargetExited(e)) => {
                errors.fatal.get_or_insert(format!("measured process exited: {e}"));
            }
            Err(e) => errors.warnings.push((id, e.to_string())),
        }
    }
    let mut returned = Vec::new();
    for h in handles {
        if let Ok(pair) = h.await {
            returned.push(pair);
        }
    }
    (returned, samples, errors)
}
