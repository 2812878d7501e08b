//! WebSocket side of the PoW stub: hand out jobs, count shares.

use std::collections::HashSet;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket};
use pagecost_core::pow::{PowJob, PowMessage, RejectReason};
use tracing::debug;

use crate::ledger::Ledger;

/// Nominal hashes per share advertised in jobs.
pub const DEFAULT_DIFFICULTY: u64 = 5000;

struct JobIssuer {
    session: u64,
    seq: u64,
    difficulty: u64,
}

impl JobIssuer {
    fn next(&mut self) -> PowJob {
        self.seq += 1;
        // 32-byte seed keeps a job inside the default 186-byte frame
        let mut blob = [0u8; 32];
        blob[..8].copy_from_slice(&self.session.to_le_bytes());
        blob[8..16].copy_from_slice(&self.seq.to_le_bytes());
        PowJob {
            job_id: format!("{}-{}", self.session, self.seq),
            blob: hex::encode(blob),
            difficulty_target: self.difficulty,
        }
    }
}

/// Runs one miner connection until the client goes away.
///
/// Every accepted share is answered with a fresh job; rejected shares get a
/// `rejected` frame and leave the outstanding job in place. The ledger is
/// updated before each reply is sent.
pub async fn pow_session(
    mut socket: WebSocket,
    ledger: Arc<Ledger>,
    frame_size: usize,
    difficulty: u64,
) {
    let id = ledger.open();
    let mut issuer = JobIssuer {
        session: id,
        seq: 0,
        difficulty,
    };
    let mut outstanding: HashSet<String> = HashSet::new();

    let job = issuer.next();
    outstanding.insert(job.job_id.clone());
    if send(&mut socket, &ledger, id, PowMessage::job(job), frame_size)
        .await
        .is_err()
    {
        ledger.close(id);
        return;
    }

    while let Some(msg) = socket.recv().await {
        let text = match msg {
            Ok(Message::Text(t)) => t.to_string(),
            Ok(Message::Binary(b)) => {
                ledger.update(id, |s| {
                    s.bytes_in += b.len() as u64;
                    s.rejected_malformed += 1;
                });
                let reply = PowMessage::Rejected {
                    reason: RejectReason::Malformed,
                    job_id: None,
                };
                if send(&mut socket, &ledger, id, reply, 0).await.is_err() {
                    break;
                }
                continue;
            }
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        let len = text.len() as u64;
        let reply = match PowMessage::decode(&text) {
            Ok(PowMessage::Share { share, .. }) if outstanding.remove(&share.job_id) => {
                ledger.update(id, |s| {
                    s.bytes_in += len;
                    s.accepted += 1;
                    s.claimed_hashes += share.hash_count_claimed;
                });
                let job = issuer.next();
                outstanding.insert(job.job_id.clone());
                PowMessage::job(job)
            }
            Ok(PowMessage::Share { share, .. }) => {
                ledger.update(id, |s| {
                    s.bytes_in += len;
                    s.rejected_unknown_job += 1;
                });
                PowMessage::Rejected {
                    reason: RejectReason::UnknownJob,
                    job_id: Some(share.job_id),
                }
            }
            Ok(_) | Err(_) => {
                ledger.update(id, |s| {
                    s.bytes_in += len;
                    s.rejected_malformed += 1;
                });
                PowMessage::Rejected {
                    reason: RejectReason::Malformed,
                    job_id: None,
                }
            }
        };
        if send(&mut socket, &ledger, id, reply, frame_size).await.is_err() {
            break;
        }
    }
    debug!(session = id, "pow session closed");
    ledger.close(id);
}

async fn send(
    socket: &mut WebSocket,
    ledger: &Ledger,
    id: u64,
    msg: PowMessage,
    frame_size: usize,
) -> Result<(), axum::Error> {
    let text = msg.encode_padded(frame_size);
    let len = text.len() as u64;
    let is_job = matches!(msg, PowMessage::Job { .. });
    ledger.update(id, |s| {
        s.bytes_out += len;
        if is_job {
            s.jobs_sent += 1;
        }
    });
    socket.send(Message::Text(text.into())).await
}
