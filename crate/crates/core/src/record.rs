//! Probe results and their JSON-lines encoding.
//!
//! Timestamps are seconds since the Unix epoch as `f64` (millisecond
//! resolution is plenty for per-second sampling).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Timestamp = f64;

pub fn now_timestamp() -> Timestamp {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or_default()
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("probe file has no header line")]
    MissingHeader,
    #[error("{0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: Timestamp,
    pub channel: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSeries {
    pub monitor_id: String,
    pub unit: String,
    pub samples: Vec<Sample>,
}

impl SampleSeries {
    pub fn new(monitor_id: impl Into<String>, unit: impl Into<String>) -> Self {
        Self {
            monitor_id: monitor_id.into(),
            unit: unit.into(),
            samples: Vec::new(),
        }
    }

    pub fn values(&self, channel: &str) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.channel == channel)
            .map(|s| s.value)
            .collect()
    }

    /// Distinct sample instants.
    pub fn timestamps(&self) -> Vec<Timestamp> {
        let mut ts: Vec<Timestamp> = self.samples.iter().map(|s| s.t).collect();
        ts.dedup();
        ts
    }

    pub fn tick_count(&self) -> usize {
        self.timestamps().len()
    }

    pub fn mean(&self, channel: &str) -> Option<f64> {
        let v = self.values(channel);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean over ticks of the sum across all channels.
    pub fn mean_of_channel_sum(&self) -> Option<f64> {
        let mut per_tick: BTreeMap<u64, f64> = BTreeMap::new();
        for s in &self.samples {
            *per_tick.entry(s.t.to_bits()).or_default() += s.value;
        }
        (!per_tick.is_empty()).then(|| per_tick.values().sum::<f64>() / per_tick.len() as f64)
    }

    pub fn channels(&self) -> Vec<String> {
        let mut c: Vec<String> = self.samples.iter().map(|s| s.channel.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Per channel, timestamps strictly increase.
    pub fn check_monotone(&self) -> Result<(), RecordError> {
        let mut last: BTreeMap<&str, Timestamp> = BTreeMap::new();
        for s in &self.samples {
            if let Some(prev) = last.insert(&s.channel, s.t) {
                if s.t <= prev {
                    return Err(RecordError::Invariant(format!(
                        "{}: channel {} goes from {prev} to {}",
                        self.monitor_id, s.channel, s.t
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub timestamp: Timestamp,
    pub url: String,
    #[serde(default)]
    pub initiator: String,
    pub transferred_bytes: u64,
    #[serde(default)]
    pub resource_type: String,
    #[serde(default)]
    pub status_code: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameDirection {
    Sent,
    Received,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsFrameRecord {
    pub timestamp: Timestamp,
    pub direction: FrameDirection,
    pub payload_bytes: u64,
    pub endpoint_url: String,
}

/// ATX supply line a power reading belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PowerRail {
    /// CPU supply.
    #[serde(rename = "rail_12v_a")]
    Rail12vA,
    /// Second 12 V line (board, network adapter).
    #[serde(rename = "rail_12v_b")]
    Rail12vB,
    /// Memory.
    #[serde(rename = "rail_5v")]
    Rail5v,
    /// Peripherals.
    #[serde(rename = "rail_3v3")]
    Rail3v3,
}

impl PowerRail {
    pub const ALL: [PowerRail; 4] = [Self::Rail12vA, Self::Rail12vB, Self::Rail5v, Self::Rail3v3];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rail12vA => "rail_12v_a",
            Self::Rail12vB => "rail_12v_b",
            Self::Rail5v => "rail_5v",
            Self::Rail3v3 => "rail_3v3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub timestamp: Timestamp,
    pub rail: PowerRail,
    pub watts: f64,
}

/// Progress of the parallel hashing benchmark while a page was loaded,
/// relative to the benchmark running alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceOutcome {
    pub workers: u32,
    pub duration_s: f64,
    pub completed_ops: u64,
    pub baseline_ops: u64,
    pub ratio: f64,
}

impl InterferenceOutcome {
    pub fn new(workers: u32, duration_s: f64, completed_ops: u64, baseline_ops: u64) -> Self {
        Self {
            workers,
            duration_s,
            completed_ops,
            baseline_ops,
            ratio: if baseline_ops == 0 {
                0.0
            } else {
                completed_ops as f64 / baseline_ops as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ProbeStatus {
    Completed,
    Failed { error: String },
}

impl ProbeStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, Self::Completed)
    }
}

/// Everything measured during one two-phase visit to a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub target_url: String,
    pub status: ProbeStatus,
    pub attempts: u32,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
    /// Start and end of the monitored phase.
    pub phase1_bounds: (Timestamp, Timestamp),
    pub phase1: BTreeMap<String, SampleSeries>,
    pub requests: Vec<RequestRecord>,
    pub frames: Vec<WsFrameRecord>,
    /// Network events lost to channel overflow.
    pub network_gaps: u64,
    pub phase2: Vec<InterferenceOutcome>,
    pub metadata: BTreeMap<String, String>,
}

impl ProbeResult {
    pub fn failed(target_url: &str, error: impl Into<String>, at: Timestamp) -> Self {
        Self {
            target_url: target_url.to_string(),
            status: ProbeStatus::Failed {
                error: error.into(),
            },
            attempts: 1,
            started_at: at,
            finished_at: at,
            phase1_bounds: (at, at),
            phase1: BTreeMap::new(),
            requests: Vec::new(),
            frames: Vec::new(),
            network_gaps: 0,
            phase2: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn series(&self, monitor: &str) -> Option<&SampleSeries> {
        self.phase1.get(monitor)
    }

    /// Mean of one monitor channel over the monitored phase.
    pub fn channel_mean(&self, monitor: &str, channel: &str) -> Option<f64> {
        self.series(monitor)?.mean(channel)
    }

    pub fn interference_ratio(&self, workers: u32) -> Option<f64> {
        self.phase2
            .iter()
            .find(|o| o.workers == workers)
            .map(|o| o.ratio)
    }

    pub fn phase1_duration(&self) -> f64 {
        self.phase1_bounds.1 - self.phase1_bounds.0
    }

    /// Checks that every sample lies in the phase-1 window and that each
    /// channel's timestamps strictly increase.
    pub fn validate(&self) -> Result<(), RecordError> {
        let (lo, hi) = self.phase1_bounds;
        for series in self.phase1.values() {
            series.check_monotone()?;
            if let Some(s) = series.samples.iter().find(|s| s.t < lo || s.t > hi) {
                return Err(RecordError::Invariant(format!(
                    "{} sample at {} outside [{lo}, {hi}]",
                    series.monitor_id, s.t
                )));
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), RecordError> {
        let header = ProbeLine::Probe(Box::new(ProbeHeader {
            target_url: self.target_url.clone(),
            status: self.status.clone(),
            attempts: self.attempts,
            started_at: self.started_at,
            finished_at: self.finished_at,
            phase1_bounds: self.phase1_bounds,
            network_gaps: self.network_gaps,
            metadata: self.metadata.clone(),
            series_units: self
                .phase1
                .values()
                .map(|s| (s.monitor_id.clone(), s.unit.clone()))
                .collect(),
        }));
        let mut put = |line: &ProbeLine| -> Result<(), RecordError> {
            serde_json::to_writer(&mut out, line).map_err(|e| RecordError::Json {
                line: 0,
                source: e,
            })?;
            out.write_all(b"\n")?;
            Ok(())
        };
        put(&header)?;
        for series in self.phase1.values() {
            for s in &series.samples {
                put(&ProbeLine::Sample {
                    monitor: series.monitor_id.clone(),
                    t: s.t,
                    channel: s.channel.clone(),
                    value: s.value,
                })?;
            }
        }
        for r in &self.requests {
            put(&ProbeLine::Request(r.clone()))?;
        }
        for f in &self.frames {
            put(&ProbeLine::Frame(f.clone()))?;
        }
        for o in &self.phase2 {
            put(&ProbeLine::Interference(*o))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, RecordError> {
        let mut result: Option<ProbeResult> = None;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ProbeLine = serde_json::from_str(&line).map_err(|e| RecordError::Json {
                line: idx + 1,
                source: e,
            })?;
            if let ProbeLine::Probe(h) = parsed {
                let h = *h;
                let phase1 = h
                    .series_units
                    .into_iter()
                    .map(|(id, unit)| (id.clone(), SampleSeries::new(id, unit)))
                    .collect();
                result = Some(ProbeResult {
                    target_url: h.target_url,
                    status: h.status,
                    attempts: h.attempts,
                    started_at: h.started_at,
                    finished_at: h.finished_at,
                    phase1_bounds: h.phase1_bounds,
                    phase1,
                    requests: Vec::new(),
                    frames: Vec::new(),
                    network_gaps: h.network_gaps,
                    phase2: Vec::new(),
                    metadata: h.metadata,
                });
                continue;
            }
            let r = result.as_mut().ok_or(RecordError::MissingHeader)?;
            match parsed {
                ProbeLine::Probe(_) => unreachable!(),
                ProbeLine::Sample {
                    monitor,
                    t,
                    channel,
                    value,
                } => r
                    .phase1
                    .entry(monitor.clone())
                    .or_insert_with(|| SampleSeries::new(monitor, ""))
                    .samples
                    .push(Sample { t, channel, value }),
                ProbeLine::Request(req) => r.requests.push(req),
                ProbeLine::Frame(f) => r.frames.push(f),
                ProbeLine::Interference(o) => r.phase2.push(o),
            }
        }
        result.ok_or(RecordError::MissingHeader)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProbeHeader {
    target_url: String,
    status: ProbeStatus,
    attempts: u32,
    started_at: Timestamp,
    finished_at: Timestamp,
    phase1_bounds: (Timestamp, Timestamp),
    network_gaps: u64,
    metadata: BTreeMap<String, String>,
    series_units: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ProbeLine {
    Probe(Box<ProbeHeader>),
    Sample {
        monitor: String,
        t: Timestamp,
        channel: String,
        value: f64,
    },
    Request(RequestRecord),
    Frame(WsFrameRecord),
    Interference(InterferenceOutcome),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_result() -> ProbeResult {
        let mut cpu = SampleSeries::new("cpu", "percent");
        for (i, v) in [12.5, 14.0, 9.0].into_iter().enumerate() {
            let t = 100.0 + i as f64;
            cpu.samples.push(Sample {
                t,
                channel: "total".into(),
                value: v,
            });
            cpu.samples.push(Sample {
                t,
                channel: "top_thread".into(),
                value: v / 2.0,
            });
        }
        let mut r = ProbeResult::failed("http://127.0.0.1:1/miner", "", 99.5);
        r.status = ProbeStatus::Completed;
        r.phase1_bounds = (99.5, 103.0);
        r.finished_at = 104.0;
        r.phase1.insert("cpu".into(), cpu);
        r.requests.push(RequestRecord {
            timestamp: 99.6,
            url: "http://127.0.0.1:1/miner".into(),
            initiator: "navigation".into(),
            transferred_bytes: 1024,
            resource_type: "document".into(),
            status_code: 200,
        });
        r.frames.push(WsFrameRecord {
            timestamp: 100.2,
            direction: FrameDirection::Sent,
            payload_bytes: 186,
            endpoint_url: "ws://127.0.0.1:1/stubminer/pow".into(),
        });
        r.phase2.push(InterferenceOutcome::new(4, 1.0, 50, 100));
        r.metadata.insert("driver".into(), "mock".into());
        r
    }

    #[test]
    fn jsonl_round_trip() {
        let r = sample_result();
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf).unwrap();
        let back = ProbeResult::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.interference_ratio(4), Some(0.5));
        assert_eq!(back.channel_mean("cpu", "total"), Some(35.5 / 3.0));
    }

    #[test]
    fn missing_header() {
        let line = br#"{"type":"interference","workers":1,"duration_s":1.0,"completed_ops":1,"baseline_ops":1,"ratio":1.0}"#;
        assert!(matches!(
            ProbeResult::read_jsonl(&line[..]),
            Err(RecordError::MissingHeader)
        ));
    }

    #[test]
    fn validate_bounds_and_order() {
        let mut r = sample_result();
        r.validate().unwrap();
        r.phase1.get_mut("cpu").unwrap().samples[0].t = 200.0;
        assert!(r.validate().is_err());
        let mut r = sample_result();
        r.phase1.get_mut("cpu").unwrap().samples.swap(0, 2);
        assert!(r.validate().is_err());
    }

    #[test]
    fn rails_round_trip_names() {
        for rail in PowerRail::ALL {
            assert_eq!(PowerRail::parse(rail.as_str()), Some(rail));
            let json = serde_json::to_string(&rail).unwrap();
            assert_eq!(json, format!("\"{}\"", rail.as_str()));
        }
    }
}
