//! Length-prefixed frames for leader/worker messages. All integers and
//! floats are little-endian.
//!
//! ```text
//! u32  length of everything after this field
//! u8   message type (1 snapshot, 2 ack, 3 collect, 4 batch, 5 failed, 6 shutdown)
//! u64  snapshot version
//! u32  worker id
//! ..   payload
//! ```
//!
//! Snapshot payloads are checkpoint bytes. Batch payloads are
//!
//! ```text
//! u32 fragments, then per fragment:
//!   u32 index, u64 version, f64 bootstrap value, u32 steps, then per step:
//!     u64 day index, u32 n, f64 * n previous weights, u32 n, f64 * n action,
//!     f64 log-probability, f64 reward, f64 value, u8 done
//!   u32 completed episodes, then per episode: f64 total reward, u64 length, u8 reason
//! ```
//!
//! Failure payloads are UTF-8 text; other messages carry none.

use sigfolio_core::env::DoneReason;
use sigfolio_core::math::PortfolioVector;
use sigfolio_core::orchestrator::{RoundMessage, WorkerBatch};
use sigfolio_core::ppo::{EpisodeStat, Fragment, RolloutStep};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};

pub const HEADER_LEN: usize = 4 + 1 + 8 + 4;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("frame length field says {declared} bytes, found {found}")]
    Length { declared: usize, found: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("invalid payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

const SNAPSHOT: u8 = 1;
const ACK: u8 = 2;
const COLLECT: u8 = 3;
const BATCH: u8 = 4;
const FAILED: u8 = 5;
const SHUTDOWN: u8 = 6;

fn frame(kind: u8, version: u64, worker_id: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&((HEADER_LEN - 4 + payload.len()) as u32).to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&worker_id.to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Encodes a message. `worker_id` is the addressee for leader messages.
pub fn encode(msg: &RoundMessage, worker_id: u32) -> Vec<u8> {
    match msg {
        RoundMessage::Snapshot(s) => frame(SNAPSHOT, s.version(), worker_id, &checkpoint::encode(s)),
        RoundMessage::Ack { worker_id, version } => frame(ACK, *version, *worker_id, &[]),
        RoundMessage::Collect { version } => frame(COLLECT, *version, worker_id, &[]),
        RoundMessage::Batch(b) => frame(BATCH, b.version, b.worker_id, &encode_fragments(&b.fragments)),
        RoundMessage::Failed { worker_id, reason } => frame(FAILED, 0, *worker_id, reason.as_bytes()),
        RoundMessage::Shutdown => frame(SHUTDOWN, 0, worker_id, &[]),
    }
}

/// Decodes one complete frame into the message and the header worker id.
pub fn decode(bytes: &[u8]) -> Result<(RoundMessage, u32), WireError> {
    let mut r = Reader { bytes, pos: 0 };
    let declared = r.u32()? as usize;
    if bytes.len() - 4 != declared {
        return Err(WireError::Length { declared, found: bytes.len() - 4 });
    }
    let kind = r.u8()?;
    let version = r.u64()?;
    let worker_id = r.u32()?;
    let payload = &bytes[HEADER_LEN..];
    let msg = match kind {
        SNAPSHOT => {
            let s = checkpoint::decode(payload)?;
            if s.version() != version {
                return Err(WireError::Payload(format!("header version {version}, snapshot {}", s.version())));
            }
            RoundMessage::Snapshot(s)
        }
        ACK => RoundMessage::Ack { worker_id, version },
        COLLECT => RoundMessage::Collect { version },
        BATCH => RoundMessage::Batch(WorkerBatch { worker_id, version, fragments: decode_fragments(payload, worker_id)? }),
        FAILED => RoundMessage::Failed {
            worker_id,
            reason: String::from_utf8(payload.to_vec()).map_err(|e| WireError::Payload(e.to_string()))?,
        },
        SHUTDOWN => RoundMessage::Shutdown,
        other => return Err(WireError::UnknownType(other)),
    };
    Ok((msg, worker_id))
}

fn reason_code(r: DoneReason) -> u8 {
    match r {
        DoneReason::None => 0,
        DoneReason::DataExhausted => 1,
        DoneReason::MinProfitBreached => 2,
        DoneReason::DrawdownBreached => 3,
    }
}

fn reason_from(code: u8) -> Result<DoneReason, WireError> {
    Ok(match code {
        0 => DoneReason::None,
        1 => DoneReason::DataExhausted,
        2 => DoneReason::MinProfitBreached,
        3 => DoneReason::DrawdownBreached,
        c => return Err(WireError::Payload(format!("unknown done reason {c}"))),
    })
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend_from_slice(&(xs.len() as u32).to_le_bytes());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_fragments(fragments: &[Fragment]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(fragments.len() as u32).to_le_bytes());
    for f in fragments {
        out.extend_from_slice(&f.index.to_le_bytes());
        out.extend_from_slice(&f.version.to_le_bytes());
        out.extend_from_slice(&f.bootstrap_value.to_le_bytes());
        out.extend_from_slice(&(f.steps.len() as u32).to_le_bytes());
        for s in &f.steps {
            out.extend_from_slice(&(s.day_index as u64).to_le_bytes());
            put_f64s(&mut out, s.prev_weights.as_slice());
            put_f64s(&mut out, &s.action);
            for x in [s.log_prob, s.reward, s.value] {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.push(u8::from(s.done));
        }
        out.extend_from_slice(&(f.completed.len() as u32).to_le_bytes());
        for e in &f.completed {
            out.extend_from_slice(&e.total_reward.to_le_bytes());
            out.extend_from_slice(&(e.length as u64).to_le_bytes());
            out.push(reason_code(e.reason));
        }
    }
    out
}

pub fn decode_fragments(bytes: &[u8], worker_id: u32) -> Result<Vec<Fragment>, WireError> {
    let mut r = Reader { bytes, pos: 0 };
    let n = r.u32()?;
    let mut fragments = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let index = r.u32()?;
        let version = r.u64()?;
        let bootstrap_value = r.f64()?;
        let steps_len = r.u32()?;
        let mut steps = Vec::with_capacity(steps_len as usize);
        for _ in 0..steps_len {
            let day_index = r.u64()? as usize;
            let prev_weights = PortfolioVector::new(r.f64s()?).map_err(|e| WireError::Payload(e.to_string()))?;
            let action = r.f64s()?;
            let (log_prob, reward, value) = (r.f64()?, r.f64()?, r.f64()?);
            let done = match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(WireError::Payload(format!("bad done flag {b}"))),
            };
            steps.push(RolloutStep { day_index, prev_weights, action, log_prob, reward, value, done });
        }
        let completed_len = r.u32()?;
        let mut completed = Vec::with_capacity(completed_len as usize);
        for _ in 0..completed_len {
            let total_reward = r.f64()?;
            let length = r.u64()? as usize;
            completed.push(EpisodeStat { total_reward, length, reason: reason_from(r.u8()?)? });
        }
        fragments.push(Fragment { worker_id, index, version, steps, bootstrap_value, completed });
    }
    if r.pos != bytes.len() {
        return Err(WireError::Payload(format!("{} trailing byte(s)", bytes.len() - r.pos)));
    }
    Ok(fragments)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        let end = self.pos.checked_add(N).ok_or(WireError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s.try_into().expect("slice of length N"))
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self) -> Result<Vec<f64>, WireError> {
        let n = self.u32()? as usize;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(WireError::Truncated);
        }
        (0..n).map(|_| self.f64()).collect()
    }
}
