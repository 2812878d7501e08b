//! Bounded log of network events reported by a browser driver.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use pagecost_core::record::{RequestRecord, WsFrameRecord};

pub const DEFAULT_CAPACITY: usize = 1 << 20;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct NetworkCapture {
    pub requests: Vec<RequestRecord>,
    pub frames: Vec<WsFrameRecord>,
    /// Events lost to overflow since the last drain.
    pub dropped: u64,
}

#[derive(Debug, Default)]
struct Pending {
    requests: Vec<RequestRecord>,
    frames: Vec<WsFrameRecord>,
    dropped: u64,
}

/// Drivers push events as they arrive; the probe drains once per phase.
///
/// Events beyond `capacity` are dropped and counted, so an overflowing phase
/// is flagged instead of exhausting memory.
#[derive(Debug)]
pub struct NetworkLog {
    capacity: usize,
    pending: Mutex<Pending>,
    request_bytes: AtomicU64,
    frame_bytes: AtomicU64,
}

impl Default for NetworkLog {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }
}

impl NetworkLog {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity,
            pending: Mutex::new(Pending::default()),
            request_bytes: AtomicU64::new(0),
            frame_bytes: AtomicU64::new(0),
        }
    }

    pub fn push_request(&self, r: RequestRecord) {
        let mut p = self.pending.lock().unwrap();
        if p.requests.len() + p.frames.len() >= self.capacity {
            p.dropped += 1;
            return;
        }
        self.request_bytes.fetch_add(r.transferred_bytes, Ordering::Relaxed);
        p.requests.push(r);
    }

    pub fn push_frame(&self, f: WsFrameRecord) {
        let mut p = self.pending.lock().unwrap();
        if p.requests.len() + p.frames.len() >= self.capacity {
            p.dropped += 1;
            return;
        }
        self.frame_bytes.fetch_add(f.payload_bytes, Ordering::Relaxed);
        p.frames.push(f);
    }

    /// Running byte totals (requests, frames) since the log was created.
    pub fn byte_totals(&self) -> (u64, u64) {
        (
            self.request_bytes.load(Ordering::Relaxed),
            self.frame_bytes.load(Ordering::Relaxed),
        )
    }

    pub fn drain(&self) -> NetworkCapture {
        let mut p = self.pending.lock().unwrap();
        let mut out = NetworkCapture {
            requests: std::mem::take(&mut p.requests),
            frames: std::mem::take(&mut p.frames),
            dropped: std::mem::take(&mut p.dropped),
        };
        out.requests.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        out.frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pagecost_core::record::FrameDirection;

    fn frame(t: f64) -> WsFrameRecord {
        WsFrameRecord {
            timestamp: t,
            direction: FrameDirection::Sent,
            payload_bytes: 10,
            endpoint_url: "ws://x/".into(),
        }
    }

    #[test]
    fn overflow_is_counted() {
        let log = NetworkLog::with_capacity(2);
        for t in 0..5 {
            log.push_frame(frame(t as f64));
        }
        let cap = log.drain();
        assert_eq!(cap.frames.len(), 2);
        assert_eq!(cap.dropped, 3);
        assert_eq!(log.drain(), NetworkCapture::default());
    }

    #[test]
    fn drain_orders_by_time() {
        let log = NetworkLog::default();
        log.push_frame(frame(2.0));
        log.push_frame(frame(1.0));
        let cap = log.drain();
        assert_eq!(cap.frames[0].timestamp, 1.0);
        assert_eq!(log.byte_totals(), (0, 20));
    }
}
