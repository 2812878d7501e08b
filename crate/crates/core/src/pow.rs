//! Proof-of-work stub protocol shared by the fixture service and miner clients.
//!
//! Every frame is one JSON object tagged by `"type"`. Frames may carry a
//! `padding` string so that their payload has an exact configured size.

use serde::{Deserialize, Serialize};

use crate::profit::{MiningRateModel, HASHES_PER_PAYOUT_UNIT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowJob {
    pub job_id: String,
    /// Opaque work blob, hex encoded.
    pub blob: String,
    pub difficulty_target: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowShare {
    pub job_id: String,
    pub nonce: u64,
    pub hash_count_claimed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Malformed,
    UnknownJob,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PowMessage {
    Job {
        #[serde(flatten)]
        job: PowJob,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        padding: String,
    },
    Share {
        #[serde(flatten)]
        share: PowShare,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        padding: String,
    },
    Rejected {
        reason: RejectReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        job_id: Option<String>,
    },
}

impl PowMessage {
    pub fn job(job: PowJob) -> Self {
        Self::Job {
            job,
            padding: String::new(),
        }
    }

    pub fn share(share: PowShare) -> Self {
        Self::Share {
            share,
            padding: String::new(),
        }
    }

    /// Serializes the message, padding it to exactly `frame_size` bytes when
    /// the unpadded encoding is small enough. Returns the unpadded encoding
    /// otherwise.
    pub fn encode_padded(&self, frame_size: usize) -> String {
        let mut msg = self.clone();
        let pad_slot = match &mut msg {
            Self::Job { padding, .. } | Self::Share { padding, .. } => padding,
            Self::Rejected { .. } => return serde_json::to_string(self).expect("serializable"),
        };
        pad_slot.clear();
        let bare = serde_json::to_string(&msg).expect("serializable");
        // a non-empty padding adds `,"padding":"..."` (13 bytes + content)
        const OVERHEAD: usize = r#","padding":"""#.len();
        if frame_size < bare.len() + OVERHEAD + 1 {
            return bare;
        }
        let fill = frame_size - bare.len() - OVERHEAD;
        if let Self::Job { padding, .. } | Self::Share { padding, .. } = &mut msg {
            *padding = "0".repeat(fill);
        }
        serde_json::to_string(&msg).expect("serializable")
    }

    pub fn decode(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Per-connection accounting kept by the stub server.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionLedger {
    pub session_id: u64,
    pub accepted: u64,
    pub rejected_malformed: u64,
    pub rejected_unknown_job: u64,
    pub claimed_hashes: u64,
    /// Payload bytes received from the client.
    pub bytes_in: u64,
    /// Payload bytes sent to the client.
    pub bytes_out: u64,
    pub jobs_sent: u64,
    pub open: bool,
}

impl SessionLedger {
    pub fn rejected(&self) -> u64 {
        self.rejected_malformed + self.rejected_unknown_job
    }

    pub fn received(&self) -> u64 {
        self.accepted + self.rejected()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub sessions: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub received: u64,
    pub claimed_hashes: u64,
    /// Payload bytes in both directions.
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub totals: LedgerTotals,
    pub sessions: Vec<SessionLedger>,
}

impl LedgerSnapshot {
    pub fn from_sessions(mut sessions: Vec<SessionLedger>) -> Self {
        sessions.sort_by_key(|s| s.session_id);
        let totals = sessions.iter().fold(
            LedgerTotals {
                sessions: sessions.len() as u64,
                ..Default::default()
            },
            |mut t, s| {
                t.accepted += s.accepted;
                t.rejected += s.rejected();
                t.received += s.received();
                t.claimed_hashes += s.claimed_hashes;
                t.payload_bytes += s.bytes_in + s.bytes_out;
                t
            },
        );
        Self { totals, sessions }
    }
}

/// Revenue implied by the stub ledger when every accepted share stands for
/// `hashes_per_share` hashes.
pub fn revenue_crosscheck(
    ledger: &LedgerTotals,
    rates: &MiningRateModel,
    hashes_per_share: u64,
) -> f64 {
    ledger.accepted as f64 * hashes_per_share as f64 / HASHES_PER_PAYOUT_UNIT
        * rates.payout_per_mhash
        * rates.coin_price
}
