//! Share accounting for PoW stub sessions.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use pagecost_core::pow::{LedgerSnapshot, SessionLedger};

#[derive(Debug, Default)]
pub struct Ledger {
    next_id: AtomicU64,
    sessions: Mutex<BTreeMap<u64, SessionLedger>>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&self) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        self.sessions.lock().expect("ledger lock").insert(
            id,
            SessionLedger {
                session_id: id,
                open: true,
                ..Default::default()
            },
        );
        id
    }

    /// Applies `f` to one session's entry under the ledger lock.
    pub fn update(&self, id: u64, f: impl FnOnce(&mut SessionLedger)) {
        if let Some(entry) = self.sessions.lock().expect("ledger lock").get_mut(&id) {
            f(entry);
        }
    }

    pub fn close(&self, id: u64) {
        self.update(id, |s| s.open = false);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let sessions = self
            .sessions
            .lock()
            .expect("ledger lock")
            .values()
            .cloned()
            .collect();
        LedgerSnapshot::from_sessions(sessions)
    }

    /// Drops closed sessions and zeroes the counters of open ones.
    pub fn reset(&self) {
        let mut sessions = self.sessions.lock().expect("ledger lock");
        sessions.retain(|_, s| s.open);
        for s in sessions.values_mut() {
            *s = SessionLedger {
                session_id: s.session_id,
                open: true,
                ..Default::default()
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sessions_aggregate() {
        let ledger = Ledger::new();
        let a = ledger.open();
        let b = ledger.open();
        ledger.update(a, |s| s.accepted += 2);
        ledger.update(b, |s| {
            s.accepted += 1;
            s.rejected_unknown_job += 1;
        });
        ledger.close(a);
        let snap = ledger.snapshot();
        assert_eq!(snap.totals.sessions, 2);
        assert_eq!(snap.totals.accepted, 3);
        assert_eq!(snap.totals.received, 4);
        assert!(!snap.sessions[0].open);
        ledger.reset();
        let snap = ledger.snapshot();
        assert_eq!(snap.totals.sessions, 1);
        assert_eq!(snap.totals.received, 0);
    }
}
