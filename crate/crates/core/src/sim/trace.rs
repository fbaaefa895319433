//! Simulation traces and their line-delimited JSON export.
//!
//! Line 1 is the header (format tag and the full [`SimConfig`]), then one event per
//! line, then an outcome line. The trace digest is SHA-256 over the exported bytes.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SimConfig;
use crate::acs::{block_log_line, DeliveredBlock};
use crate::crypto::Digest;
use crate::message::MessageKind;
use crate::params::PartyId;
use crate::DropReason;

pub const TRACE_FORMAT: &str = "slim-hbbft-trace/1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("trace malformed at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

fn malformed(line: usize, reason: impl ToString) -> TraceError {
    TraceError::Malformed {
        line,
        reason: reason.to_string(),
    }
}

/// A delivered block as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub epoch: u32,
    pub decided_set: Vec<u16>,
    pub q: usize,
    /// Digests of the delivered requests, in block order.
    pub requests: Vec<Digest>,
    pub byte_total: u64,
}

impl BlockRecord {
    /// One line of the per-party block log.
    pub fn log_line(&self) -> String {
        block_log_line(self.epoch, &self.decided_set, self.q, &self.requests)
    }
}

impl From<&DeliveredBlock> for BlockRecord {
    fn from(b: &DeliveredBlock) -> Self {
        BlockRecord {
            epoch: b.epoch,
            decided_set: b.decided_set.clone(),
            q: b.q,
            requests: b.request_digests(),
            byte_total: b.byte_total,
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    /// `party` handed a message to the network.
    Send {
        id: u64,
        to: PartyId,
        msg: Option<MessageKind>,
        epoch: Option<u32>,
        bytes: u64,
        digest: Digest,
        #[serde(default, skip_serializing_if = "is_false")]
        tampered: bool,
    },
    /// The network delivered message `id` to `party`.
    Deliver {
        id: u64,
        from: PartyId,
        msg: Option<MessageKind>,
        epoch: Option<u32>,
        bytes: u64,
    },
    /// `party` rejected a message. `msg_id` is set when the rejection happened while
    /// handling that delivery.
    Drop {
        msg_id: Option<u64>,
        from: PartyId,
        msg: Option<MessageKind>,
        epoch: Option<u32>,
        reason: DropReason,
    },
    Crash,
    Committee {
        epoch: u32,
        members: Vec<PartyId>,
    },
    /// `party` signed `digest` for the proposer's P-PB step.
    Ack {
        epoch: u32,
        proposer: PartyId,
        step: u16,
        digest: Digest,
    },
    /// `party`'s own P-PB step produced a delivery proof.
    Proof {
        epoch: u32,
        step: u16,
        digest: Digest,
        signers: Vec<PartyId>,
        sig: String,
    },
    /// `party` now stores the verified full proposal of slot `j`.
    Hold {
        epoch: u32,
        j: u16,
        digest: Digest,
        via: MessageKind,
    },
    /// `party` heard from `count = n - f` distinct suggesters.
    Suggesters {
        epoch: u32,
        count: usize,
    },
    AbaInput {
        epoch: u32,
        j: u16,
        bit: bool,
        upgrade: bool,
    },
    Decide {
        epoch: u32,
        j: u16,
        bit: bool,
        round: u16,
    },
    DecShareRelease {
        epoch: u32,
        j: u16,
    },
    DeliverBlock(BlockRecord),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Delivery step at which the event happened (0 = start-up).
    pub t: u64,
    pub party: PartyId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub steps: u64,
    /// Every honest party delivered every epoch.
    pub completed: bool,
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct OutcomeLine {
    outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub config: SimConfig,
    pub events: Vec<Event>,
    pub outcome: Outcome,
}

impl Trace {
    pub fn is_honest(&self, party: PartyId) -> bool {
        !self.config.byzantine.contains_key(&party)
    }

    pub fn honest_parties(&self) -> Vec<PartyId> {
        self.config
            .params
            .parties()
            .filter(|p| self.is_honest(*p))
            .collect()
    }

    /// Blocks delivered by `party`, in order.
    pub fn blocks(&self, party: PartyId) -> Vec<&BlockRecord> {
        self.events
            .iter()
            .filter(|e| e.party == party)
            .filter_map(|e| match &e.kind {
                EventKind::DeliverBlock(b) => Some(b),
                _ => None,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = TraceHeader {
            format: TRACE_FORMAT.to_string(),
            config: self.config.clone(),
        };
        push_line(&mut out, &header);
        for e in &self.events {
            push_line(&mut out, e);
        }
        push_line(
            &mut out,
            &OutcomeLine {
                outcome: self.outcome.clone(),
            },
        );
        out
    }

    pub fn digest(&self) -> Digest {
        Digest::of(self.to_jsonl().as_bytes())
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 {
            return Err(malformed(lines.len(), "missing header or outcome line"));
        }
        let header: TraceHeader = serde_json::from_str(lines[0]).map_err(|e| malformed(1, e))?;
        if header.format != TRACE_FORMAT {
            return Err(malformed(1, format!("unknown format {:?}", header.format)));
        }
        header.config.validate().map_err(|e| malformed(1, e))?;
        let last = lines.len() - 1;
        let outcome: OutcomeLine =
            serde_json::from_str(lines[last]).map_err(|e| malformed(last + 1, e))?;
        let events = lines[1..last]
            .iter()
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| malformed(i + 2, e)))
            .collect::<Result<Vec<Event>, _>>()?;
        Ok(Trace {
            config: header.config,
            events,
            outcome: outcome.outcome,
        })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> io::Result<()> {
        fs::write(path, self.to_jsonl())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
        Trace::from_jsonl(&fs::read_to_string(path)?)
    }

    /// Writes `party-<i>.blocks` into `dir`, one line per delivered block.
    pub fn write_block_logs(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for p in self.config.params.parties() {
            let mut text = String::new();
            for b in self.blocks(p) {
                text.push_str(&b.log_line());
                text.push('\n');
            }
            fs::write(dir.join(format!("party-{}.blocks", p.0)), text)?;
        }
        Ok(())
    }
}

fn push_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("trace types serialize"));
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_lines_are_flat() {
        let e = Event {
            t: 3,
            party: PartyId(1),
            kind: EventKind::Decide {
                epoch: 0,
                j: 1,
                bit: true,
                round: 2,
            },
        };
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(
            s,
            r#"{"t":3,"party":1,"event":"decide","epoch":0,"j":1,"bit":true,"round":2}"#
        );
        assert_eq!(serde_json::from_str::<Event>(&s).unwrap(), e);

        let send = Event {
            t: 0,
            party: PartyId(0),
            kind: EventKind::Send {
                id: 7,
                to: PartyId(2),
                msg: Some(MessageKind::PpbSend),
                epoch: Some(0),
                bytes: 100,
                digest: Digest::of(b"x"),
                tampered: false,
            },
        };
        let s = serde_json::to_string(&send).unwrap();
        assert!(s.contains(r#""msg":"PPB_SEND""#) && !s.contains("tampered"));
        assert_eq!(serde_json::from_str::<Event>(&s).unwrap(), send);
    }

    #[test]
    fn block_line_format() {
        let b = BlockRecord {
            epoch: 2,
            decided_set: vec![0, 2],
            q: 2,
            requests: vec![Digest::of(b"a")],
            byte_total: 10,
        };
        assert_eq!(
            b.log_line(),
            format!(
                "epoch=2 S=[0,2] q=2 requests=[{}]",
                Digest::of(b"a").short_hex()
            )
        );
    }
}
