//! Interference benchmark: parallel MD5 iteration counting.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use md5::{Digest, Md5};
use pagecost_core::record::InterferenceOutcome;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BUFFER_LEN: usize = 64;
pub const WORKER_COUNTS: [u32; 3] = [1, 2, 4];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no baseline for {workers} workers over {duration_ms} ms; run calibration first")]
    MissingBaseline { workers: u32, duration_ms: u64 },
    #[error("worker count must be positive")]
    NoWorkers,
    #[error("calibration file: {0}")]
    Io(#[from] std::io::Error),
    #[error("calibration file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Hashes a 64-byte buffer in place until `stop` is set; returns iterations.
pub fn md5_loop(stop: &AtomicBool, seed: u8) -> u64 {
    let mut buf = [seed; BUFFER_LEN];
    let mut n = 0u64;
    loop {
        for _ in 0..256 {
            let d = Md5::digest(buf);
            buf[..16].copy_from_slice(&d);
        }
        n += 256;
        if stop.load(Ordering::Relaxed) {
            std::hint::black_box(buf);
            return n;
        }
    }
}

/// Runs `workers` hashing threads for `duration` and returns total iterations.
pub fn run_benchmark(workers: u32, duration: Duration) -> Result<u64, BenchError> {
    if workers == 0 {
        return Err(BenchError::NoWorkers);
    }
    let stop = Arc::new(AtomicBool::new(false));
    let handles: Vec<_> = (0..workers)
        .map(|i| {
            let stop = stop.clone();
            std::thread::spawn(move || md5_loop(&stop, i as u8))
        })
        .collect();
    std::thread::sleep(duration);
    stop.store(true, Ordering::Relaxed);
    Ok(handles.into_iter().map(|h| h.join().unwrap_or(0)).sum())
}

fn key(workers: u32, duration: Duration) -> String {
    format!("{workers}x{}ms", duration.as_millis())
}

/// Baseline iteration counts, measured with nothing else loaded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub baselines: BTreeMap<String, u64>,
}

impl Calibration {
    pub fn calibrate(&mut self, workers: u32, duration: Duration) -> Result<u64, BenchError> {
        let ops = run_benchmark(workers, duration)?;
        self.baselines.insert(key(workers, duration), ops);
        Ok(ops)
    }

    pub fn baseline(&self, workers: u32, duration: Duration) -> Result<u64, BenchError> {
        self.baselines
            .get(&key(workers, duration))
            .copied()
            .ok_or(BenchError::MissingBaseline {
                workers,
                duration_ms: duration.as_millis() as u64,
            })
    }

    /// Runs the benchmark now and relates it to the stored baseline.
    pub fn measure(&self, workers: u32, duration: Duration) -> Result<InterferenceOutcome, BenchError> {
        let baseline = self.baseline(workers, duration)?;
        let completed = run_benchmark(workers, duration)?;
        Ok(InterferenceOutcome::new(
            workers,
            duration.as_secs_f64(),
            completed,
            baseline,
        ))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_baseline_is_an_error() {
        let c = Calibration::default();
        let err = c.measure(2, Duration::from_millis(10)).unwrap_err();
        assert!(err.to_string().contains("calibration"));
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(matches!(
            run_benchmark(0, Duration::from_millis(1)),
            Err(BenchError::NoWorkers)
        ));
    }

    #[test]
    fn loop_counts_iterations() {
        let stop = AtomicBool::new(true);
        assert_eq!(md5_loop(&stop, 0), 256);
    }
}
