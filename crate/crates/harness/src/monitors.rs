//! Pluggable resource monitors sampled during phase 1 of a probe.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use pagecost_core::record::PowerRail;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkLog;
use crate::target::{self, ResourceTarget};

pub const CPU: &str = "cpu";
pub const MEMORY: &str = "memory";
pub const TEMPERATURE: &str = "temperature";
pub const POWER: &str = "power";
pub const NETWORK: &str = "network";
pub const INTERFERENCE: &str = "interference";

pub const ALL_MONITORS: [&str; 6] = [CPU, MEMORY, TEMPERATURE, POWER, NETWORK, INTERFERENCE];

#[derive(Debug, Error)]
pub enum MonitorError {
    /// The source does not exist on this host; the monitor is skipped.
    #[error("{monitor} unavailable: {reason}")]
    Unavailable { monitor: String, reason: String },
    /// The measured process went away; the probe fails.
    #[error("measured process exited: {0}")]
    TargetExited(String),
    #[error("replay source exhausted")]
    Exhausted,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("replay file line {line}: {message}")]
    Replay { line: usize, message: String },
}

/// What a monitor needs to know about the probe it is attached to.
#[derive(Debug, Clone)]
pub struct ProbeContext {
    pub target: ResourceTarget,
    pub network: Arc<NetworkLog>,
}

pub trait Monitor: Send {
    fn id(&self) -> &str;
    fn unit(&self) -> &str;
    fn channels(&self) -> &[String];
    /// Called once at phase start, before the first tick.
    fn start(&mut self, _ctx: &ProbeContext) -> Result<(), MonitorError> {
        Ok(())
    }
    fn sample(&mut self) -> Result<Vec<(String, f64)>, MonitorError>;
}

/// CPU percent (100 = one core) from tick deltas between calls.
#[derive(Debug)]
pub struct CpuMeter {
    target: Option<ResourceTarget>,
    prev: HashMap<(i32, i32), u64>,
    prev_retired: u64,
    prev_at: Instant,
    clk: f64,
}

impl Default for CpuMeter {
    fn default() -> Self {
        Self {
            target: None,
            prev: HashMap::new(),
            prev_retired: 0,
            prev_at: Instant::now(),
            clk: target::clock_ticks(),
        }
    }
}

impl CpuMeter {
    pub fn start(&mut self, t: &ResourceTarget) -> Result<(), MonitorError> {
        self.target = Some(t.clone());
        self.prev.clear();
        self.prev_retired = retired(t);
        let threads = target::target_threads(t).map_err(|e| MonitorError::TargetExited(e.to_string()))?;
        for th in threads {
            self.prev.insert((th.pid, th.tid), th.ticks);
        }
        self.prev_at = Instant::now();
        Ok(())
    }

    /// (total percent, busiest thread percent) since the previous call.
    pub fn read(&mut self) -> Result<(f64, f64), MonitorError> {
        let Some(t) = &self.target else {
            return Ok((0.0, 0.0));
        };
        let threads = target::target_threads(t).map_err(|e| MonitorError::TargetExited(e.to_string()))?;
        let now = Instant::now();
        let dt = now.duration_since(self.prev_at).as_secs_f64().max(1e-6);
        let retired_now = retired(t);
        let mut total = retired_now.saturating_sub(self.prev_retired);
        let mut top = 0;
        let mut next = HashMap::with_capacity(threads.len());
        for th in threads {
            let d = th.ticks.saturating_sub(self.prev.get(&(th.pid, th.tid)).copied().unwrap_or(0));
            total += d;
            top = top.max(d);
            next.insert((th.pid, th.tid), th.ticks);
        }
        self.prev = next;
        self.prev_retired = retired_now;
        self.prev_at = now;
        let pct = |ticks: u64| ticks as f64 / self.clk / dt * 100.0;
        Ok((pct(total), pct(top)))
    }

    /// Share of the whole host's capacity, in [0, 1].
    pub fn host_fraction(total_percent: f64) -> f64 {
        (total_percent / (100.0 * target::core_count() as f64)).clamp(0.0, 1.0)
    }
}

fn retired(t: &ResourceTarget) -> u64 {
    match t {
        ResourceTarget::Page(acct) => acct.retired_ticks(),
        ResourceTarget::ProcessTree(_) => 0,
    }
}

/// Channels `total` and `top_thread`, percent of one core.
pub struct CpuMonitor {
    meter: CpuMeter,
    channels: Vec<String>,
}

impl Default for CpuMonitor {
    fn default() -> Self {
        Self {
            meter: CpuMeter::default(),
            channels: vec!["total".into(), "top_thread".into()],
        }
    }
}

impl Monitor for CpuMonitor {
    fn id(&self) -> &str {
        CPU
    }
    fn unit(&self) -> &str {
        "percent"
    }
    fn channels(&self) -> &[String] {
        &self.channels
    }
    fn start(&mut self, ctx: &ProbeContext) -> Result<(), MonitorError> {
        self.meter.start(&ctx.target)
    }
    fn sample(&mut self) -> Result<Vec<(String, f64)>, MonitorError> {
        let (total, top) = self.meter.read()?;
        Ok(vec![("total".into(), total), ("top_thread".into(), top)])
    }
}

/// Channels `resident` and `virtual`, in MB.
pub struct MemoryMonitor {
    target: Option<ResourceTarget>,
    channels: Vec<String>,
}

impl Default for MemoryMonitor {
    fn default() -> Self {
        Self {
            target: None,
            channels: vec!["resident".into(), "virtual".into()],
        }
    }
}

impl Monitor for MemoryMonitor {
    fn id(&self) -> &str {
        MEMORY
    }
    fn unit(&self) -> &str {
        "MB"
    }
    fn channels(&self) -> &[String] {
        &self.channels
    }
    fn start(&mut self, ctx: &ProbeContext) -> Result<(), MonitorError> {
        self.target = Some(ctx.target.clone());
        Ok(())
    }
    fn sample(&mut self) -> Result<Vec<(String, f64)>, MonitorError> {
        let Some(t) = &self.target else {
            return Ok(vec![]);
        };
        let (rss, vsz) =
            target::target_memory(t).map_err(|e| MonitorError::TargetExited(e.to_string()))?;
        const MB: f64 = 1024.0 * 1024.0;
        Ok(vec![
            ("resident".into(), rss as f64 / MB),
            ("virtual".into(), vsz as f64 / MB),
        ])
    }
}

/// A `timestamp,channel,value` CSV played back one timestamp per tick.
#[derive(Debug, Clone)]
pub struct Replay {
    channels: Vec<String>,
    ticks: VecDeque<Vec<(String, f64)>>,
}

impl Replay {
    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self, MonitorError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(r);
        let mut ticks: Vec<(f64, Vec<(String, f64)>)> = Vec::new();
        let mut channels: Vec<String> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| MonitorError::Replay {
                line,
                message: e.to_string(),
            })?;
            if rec.len() != 3 {
                return Err(MonitorError::Replay {
                    line,
                    message: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            // tolerate a header row
            if line == 1 && rec[0].parse::<f64>().is_err() {
                continue;
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| MonitorError::Replay {
                    line,
                    message: format!("not a number: {s}"),
                })
            };
            let (t, ch, v) = (num(&rec[0])?, rec[1].to_string(), num(&rec[2])?);
            if !channels.contains(&ch) {
                channels.push(ch.clone());
            }
            match ticks.last_mut() {
                Some((lt, vals)) if *lt == t => vals.push((ch, v)),
                Some((lt, _)) if *lt > t => {
                    return Err(MonitorError::Replay {
                        line,
                        message: "timestamps must not decrease".into(),
                    })
                }
                _ => ticks.push((t, vec![(ch, v)])),
            }
        }
        Ok(Self {
            channels,
            ticks: ticks.into_iter().map(|(_, v)| v).collect(),
        })
    }

    pub fn open(path: &Path) -> Result<Self, MonitorError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn next_tick(&mut self) -> Result<Vec<(String, f64)>, MonitorError> {
        self.ticks.pop_front().ok_or(MonitorError::Exhausted)
    }
}

/// Thermal model: per-core temperature affine in host CPU load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticThermal {
    pub idle_c: f64,
    pub full_load_c: f64,
    pub cores: usize,
}

impl Default for SyntheticThermal {
    fn default() -> Self {
        Self {
            idle_c: 46.5,
            full_load_c: 75.0,
            cores: target::core_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThermalSource {
    /// Standard hardware-monitoring tree, usually `/sys/class/hwmon`.
    Hwmon { root: PathBuf },
    Replay { path: PathBuf },
    Synthetic(SyntheticThermal),
}

enum ThermalState {
    Hwmon(Vec<(String, PathBuf)>),
    Replay(Replay),
    Synthetic(SyntheticThermal, CpuMeter),
}

/// Per-core temperature in °C.
pub struct TemperatureMonitor {
    state: ThermalState,
    channels: Vec<String>,
}

/// `temp*_input` files under a hwmon tree, labelled by `temp*_label` when present.
pub fn hwmon_sensors(root: &Path) -> Vec<(String, PathBuf)> {
    let mut out = Vec::new();
    let Ok(dirs) = std::fs::read_dir(root) else {
        return out;
    };
    let mut dirs: Vec<_> = dirs.flatten().map(|d| d.path()).collect();
    dirs.sort();
    for dir in dirs {
        let Ok(files) = std::fs::read_dir(&dir) else {
            continue;
        };
        let mut inputs: Vec<_> = files
            .flatten()
            .map(|f| f.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("temp") && n.ends_with("_input"))
            })
            .collect();
        inputs.sort();
        let dname = dir.file_name().and_then(|n| n.to_str()).unwrap_or("hwmon").to_string();
        for input in inputs {
            let stem = input
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .trim_end_matches("_input")
                .to_string();
            let label = std::fs::read_to_string(dir.join(format!("{stem}_label")))
                .map(|l| l.trim().to_string())
                .unwrap_or_else(|_| format!("{dname}_{stem}"));
            out.push((label, input));
        }
    }
    out
}

impl TemperatureMonitor {
    pub fn new(source: &ThermalSource) -> Result<Self, MonitorError> {
        let unavailable = |reason: String| MonitorError::Unavailable {
            monitor: TEMPERATURE.into(),
            reason,
        };
        let (state, channels) = match source {
            ThermalSource::Hwmon { root } => {
                let sensors = hwmon_sensors(root);
                if sensors.is_empty() {
                    return Err(unavailable(format!("no sensors under {}", root.display())));
                }
                let ch = sensors.iter().map(|(l, _)| l.clone()).collect();
                (ThermalState::Hwmon(sensors), ch)
            }
            ThermalSource::Replay { path } => {
                let r = Replay::open(path)
                    .map_err(|e| unavailable(format!("{}: {e}", path.display())))?;
                let ch = r.channels().to_vec();
                (ThermalState::Replay(r), ch)
            }
            ThermalSource::Synthetic(m) => {
                let ch = (0..m.cores.max(1)).map(|i| format!("core{i}")).collect();
                (ThermalState::Synthetic(*m, CpuMeter::default()), ch)
            }
        };
        Ok(Self { state, channels })
    }
}

impl Monitor for TemperatureMonitor {
    fn id(&self) -> &str {
        TEMPERATURE
    }
    fn unit(&self) -> &str {
        "celsius"
    }
    fn channels(&self) -> &[String] {
        &self.channels
    }
    fn start(&mut self, ctx: &ProbeContext) -> Result<(), MonitorError> {
        if let ThermalState::Synthetic(_, meter) = &mut self.state {
            meter.start(&ctx.target)?;
        }
        Ok(())
    }
    fn sample(&mut self) -> Result<Vec<(String, f64)>, MonitorError> {
        match &mut self.state {
            ThermalState::Hwmon(sensors) => {
                let mut out = Vec::with_capacity(sensors.len());
                for (label, path) in sensors.iter() {
                    let milli: f64 = std::fs::read_to_string(path)?.trim().parse().map_err(|_| {
                        MonitorError::Unavailable {
                            monitor: TEMPERATURE.into(),
                            reason: format!("unreadable {}", path.display()),
                        }
                    })?;
                    out.push((label.clone(), milli / 1000.0));
                }
                Ok(out)
            }
            ThermalState::Replay(r) => r.next_tick(),
            ThermalState::Synthetic(m, meter) => {
                let (total, _) = meter.read()?;
                let f = CpuMeter::host_fraction(total);
                let c = m.idle_c + (m.full_load_c - m.idle_c) * f;
                Ok(self.channels.iter().map(|ch| (ch.clone(), c)).collect())
            }
        }
    }
}

/// Idle watts and watts added at full host load, for one rail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RailModel {
    pub idle_w: f64,
    pub slope_w: f64,
}

/// Power model: each rail's draw is affine in host CPU load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPower {
    pub rails: BTreeMap<PowerRail, RailModel>,
}

impl Default for SyntheticPower {
    fn default() -> Self {
        Self {
            rails: BTreeMap::from([
                (
                    PowerRail::Rail12vA,
                    RailModel {
                        idle_w: 32.4,
                        slope_w: 35.2,
                    },
                ),
                (
                    PowerRail::Rail5v,
                    RailModel {
                        idle_w: 4.46,
                        slope_w: 0.53,
                    },
                ),
            ]),
        }
    }
}

impl SyntheticPower {
    pub fn watts(&self, rail: PowerRail, cpu_fraction: f64) -> Option<f64> {
        self.rails
            .get(&rail)
            .map(|m| m.idle_w + m.slope_w * cpu_fraction.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerSource {
    Replay { path: PathBuf },
    /// Energy counters under a powercap tree, usually `/sys/class/powercap`.
    Rapl { root: PathBuf },
    Synthetic(SyntheticPower),
}

struct RaplZone {
    rail: PowerRail,
    energy: PathBuf,
    max_range: u64,
    prev: Option<(u64, Instant)>,
}

enum PowerState {
    Replay(Replay),
    Rapl(Vec<RaplZone>),
    Synthetic(SyntheticPower, CpuMeter),
}

/// Watts per supply rail.
pub struct PowerMonitor {
    state: PowerState,
    channels: Vec<String>,
}

/// Package zones map to the CPU rail, `dram` subzones to the memory rail.
fn rapl_zones(root: &Path) -> Vec<RaplZone> {
    let mut zones = Vec::new();
    let Ok(entries) = std::fs::read_dir(root) else {
        return zones;
    };
    let mut dirs: Vec<_> = entries.flatten().map(|e| e.path()).collect();
    // subzones also appear nested inside their package directory
    let nested: Vec<_> = dirs
        .iter()
        .filter_map(|d| std::fs::read_dir(d).ok())
        .flat_map(|rd| rd.flatten().map(|e| e.path()))
        .filter(|p| p.join("energy_uj").is_file())
        .collect();
    dirs.extend(nested);
    dirs.sort();
    dirs.dedup();
    let mut seen = std::collections::BTreeSet::new();
    for dir in dirs {
        let Ok(name) = std::fs::read_to_string(dir.join("name")) else {
            continue;
        };
        let name = name.trim();
        let rail = if name.starts_with("package") {
            PowerRail::Rail12vA
        } else if name == "dram" {
            PowerRail::Rail5v
        } else {
            continue;
        };
        if !seen.insert(rail) || !dir.join("energy_uj").is_file() {
            continue;
        }
        let max_range = std::fs::read_to_string(dir.join("max_energy_range_uj"))
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(u64::MAX);
        zones.push(RaplZone {
            rail,
            energy: dir.join("energy_uj"),
            max_range,
            prev: None,
        });
    }
    zones
}

fn read_energy(p: &Path) -> Result<u64, MonitorError> {
    std::fs::read_to_string(p)?
        .trim()
        .parse()
        .map_err(|_| MonitorError::Unavailable {
            monitor: POWER.into(),
            reason: format!("unreadable {}", p.display()),
        })
}

impl PowerMonitor {
    pub fn new(source: &PowerSource) -> Result<Self, MonitorError> {
        let unavailable = |reason: String| MonitorError::Unavailable {
            monitor: POWER.into(),
            reason,
        };
        let (state, channels) = match source {
            PowerSource::Replay { path } => {
                let r = Replay::open(path)
                    .map_err(|e| unavailable(format!("{}: {e}", path.display())))?;
                for ch in r.channels() {
                    if PowerRail::parse(ch).is_none() {
                        return Err(unavailable(format!("unknown rail {ch}")));
                    }
                }
                let ch = r.channels().to_vec();
                (PowerState::Replay(r), ch)
            }
            PowerSource::Rapl { root } => {
                let zones = rapl_zones(root);
                if zones.is_empty() {
                    return Err(unavailable(format!("no energy counters under {}", root.display())));
                }
                for z in &zones {
                    read_energy(&z.energy).map_err(|e| unavailable(e.to_string()))?;
                }
                let ch = zones.iter().map(|z| z.rail.as_str().to_string()).collect();
                (PowerState::Rapl(zones), ch)
            }
            PowerSource::Synthetic(m) => {
                let ch = m.rails.keys().map(|r| r.as_str().to_string()).collect();
                (PowerState::Synthetic(m.clone(), CpuMeter::default()), ch)
            }
        };
        Ok(Self { state, channels })
    }
}

impl Monitor for PowerMonitor {
    fn id(&self) -> &str {
        POWER
    }
    fn unit(&self) -> &str {
        "watts"
    }
    fn channels(&self) -> &[String] {
        &self.channels
    }
    fn start(&mut self, ctx: &ProbeContext) -> Result<(), MonitorError> {
        match &mut self.state {
            PowerState::Synthetic(_, meter) => meter.start(&ctx.target)?,
            PowerState::Rapl(zones) => {
                for z in zones.iter_mut() {
                    z.prev = Some((read_energy(&z.energy)?, Instant::now()));
                }
            }
            PowerState::Replay(_) => {}
        }
        Ok(())
    }
    fn sample(&mut self) -> Result<Vec<(String, f64)>, MonitorError> {
        match &mut self.state {
            PowerState::Replay(r) => r.next_tick(),
            PowerState::Rapl(zones) => {
                let mut out = Vec::with_capacity(zones.len());
                for z in zones.iter_mut() {
                    let e = read_energy(&z.energy)?;
                    let now = Instant::now();
                    if let Some((pe, pt)) = z.prev {
                        let de = if e >= pe {
                            e - pe
                        } else {
                            z.max_range.saturating_sub(pe) + e
                        };
                        let dt = now.duration_since(pt).as_secs_f64().max(1e-6);
                        out.push((z.rail.as_str().to_string(), de as f64 / 1e6 / dt));
                    }
                    z.prev = Some((e, now));
                }
                Ok(out)
            }
            PowerState::Synthetic(m, meter) => {
                let (total, _) = meter.read()?;
                let f = CpuMeter::host_fraction(total);
                Ok(m
                    .rails
                    .iter()
                    .map(|(rail, rm)| (rail.as_str().to_string(), rm.idle_w + rm.slope_w * f))
                    .collect())
            }
        }
    }
}

/// Bytes seen on the network per tick, split into HTTP requests and frames.
pub struct NetworkMonitor {
    log: Option<Arc<NetworkLog>>,
    prev: (u64, u64),
    channels: Vec<String>,
}

impl Default for NetworkMonitor {
    fn default() -> Self {
        Self {
            log: None,
            prev: (0, 0),
            channels: vec!["request_bytes".into(), "frame_bytes".into()],
        }
    }
}

impl Monitor for NetworkMonitor {
    fn id(&self) -> &str {
        NETWORK
    }
    fn unit(&self) -> &str {
        "bytes"
    }
    fn channels(&self) -> &[String] {
        &self.channels
    }
    fn start(&mut self, ctx: &ProbeContext) -> Result<(), MonitorError> {
        self.prev = ctx.network.byte_totals();
        self.log = Some(ctx.network.clone());
        Ok(())
    }
    fn sample(&mut self) -> Result<Vec<(String, f64)>, MonitorError> {
        let Some(log) = &self.log else {
            return Ok(vec![]);
        };
        let now = log.byte_totals();
        let out = vec![
            ("request_bytes".into(), now.0.saturating_sub(self.prev.0) as f64),
            ("frame_bytes".into(), now.1.saturating_sub(self.prev.1) as f64),
        ];
        self.prev = now;
        Ok(out)
    }
}

/// Sources for the monitors whose backing hardware varies by host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSettings {
    pub thermal: ThermalSource,
    pub power: PowerSource,
}

impl Default for MonitorSettings {
    fn default() -> Self {
        Self {
            thermal: ThermalSource::Synthetic(SyntheticThermal::default()),
            power: PowerSource::Synthetic(SyntheticPower::default()),
        }
    }
}

/// Builds the named phase-1 monitors. Unavailable sources are skipped and
/// returned alongside as warnings; unknown names are an error.
pub fn build_monitors(
    ids: &[String],
    settings: &MonitorSettings,
) -> Result<(Vec<Box<dyn Monitor>>, Vec<MonitorError>), String> {
    let mut monitors: Vec<Box<dyn Monitor>> = Vec::new();
    let mut warnings = Vec::new();
    for id in ids {
        let built: Result<Box<dyn Monitor>, MonitorError> = match id.as_str() {
            CPU => Ok(Box::new(CpuMonitor::default())),
            MEMORY => Ok(Box::new(MemoryMonitor::default())),
            NETWORK => Ok(Box::new(NetworkMonitor::default())),
            TEMPERATURE => TemperatureMonitor::new(&settings.thermal).map(|m| Box::new(m) as _),
            POWER => PowerMonitor::new(&settings.power).map(|m| Box::new(m) as _),
            // runs in phase 2, not as a sampler
            INTERFERENCE => continue,
            other => return Err(format!("unknown monitor {other}")),
        };
        match built {
            Ok(m) => monitors.push(m),
            Err(e) => warnings.push(e),
        }
    }
    Ok((monitors, warnings))
}
