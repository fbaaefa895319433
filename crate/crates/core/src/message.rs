//! Canonical message encoding.
//!
//! Every message is a fixed 16-byte header followed by a kind-specific body:
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 1    | kind                       |
//! | 1      | 4    | epoch                      |
//! | 5      | 2    | sender                     |
//! | 7      | 4    | instance / step tag        |
//! | 11     | 4    | body length                |
//! | 15     | 1    | reserved (zero)            |
//!
//! Body sizes depend only on the security parameter `K` and payload lengths, which
//! keeps byte accounting exact and reproducible.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::PartyId;

pub const HEADER_LEN: usize = 16;

/// Flag on `ABA_EST`: the value is the sender's own input (not a relay).
pub const ABA_FLAG_INPUT: u8 = 0b01;
/// Flag on `ABA_EST`/`ABA_AUX`: the sender has decided and halted.
pub const ABA_FLAG_TERM: u8 = 0b10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("body length {declared} does not match {actual} remaining bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("reserved header byte is nonzero")]
    Reserved,
    #[error("body has wrong size for {0}")]
    BadBodySize(MessageKind),
    #[error("invalid field in {0}")]
    BadField(MessageKind),
    #[error("malformed request batch")]
    BadBatch,
    #[error("trailing bytes")]
    TrailingBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum MessageKind {
    CoinShare = 1,
    PpbSend = 2,
    PpbAck = 3,
    Propose = 4,
    Suggest = 5,
    AbaEst = 6,
    AbaAux = 7,
    AbaCoinShare = 8,
    DecShare = 9,
    ProposalEcho = 10,
}

impl MessageKind {
    pub const ALL: [MessageKind; 10] = [
        MessageKind::CoinShare,
        MessageKind::PpbSend,
        MessageKind::PpbAck,
        MessageKind::Propose,
        MessageKind::Suggest,
        MessageKind::AbaEst,
        MessageKind::AbaAux,
        MessageKind::AbaCoinShare,
        MessageKind::DecShare,
        MessageKind::ProposalEcho,
    ];

    pub fn from_u8(v: u8) -> Result<Self, WireError> {
        MessageKind::ALL
            .iter()
            .copied()
            .find(|k| *k as u8 == v)
            .ok_or(WireError::UnknownKind(v))
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::CoinShare => "COIN_SHARE",
            MessageKind::PpbSend => "PPB_SEND",
            MessageKind::PpbAck => "PPB_ACK",
            MessageKind::Propose => "PROPOSE",
            MessageKind::Suggest => "SUGGEST",
            MessageKind::AbaEst => "ABA_EST",
            MessageKind::AbaAux => "ABA_AUX",
            MessageKind::AbaCoinShare => "ABA_COIN_SHARE",
            MessageKind::DecShare => "DEC_SHARE",
            MessageKind::ProposalEcho => "PROPOSAL_ECHO",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        MessageKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which coin a `COIN_SHARE` contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoinScope {
    Committee,
    Leader,
}

impl CoinScope {
    fn tag(self) -> u32 {
        match self {
            CoinScope::Committee => 0,
            CoinScope::Leader => 1,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(CoinScope::Committee),
            1 => Some(CoinScope::Leader),
            _ => None,
        }
    }
}

/// Kind-specific message contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    CoinShare {
        scope: CoinScope,
        share: Vec<u8>,
    },
    /// Sent by the proposer (the header sender). `sender_share` is the proposer's own
    /// sign-share on the value; `proof` is the previous step's delivery proof and is
    /// present exactly when `step >= 2`.
    PpbSend {
        step: u16,
        value: Vec<u8>,
        sender_share: Vec<u8>,
        proof: Option<Vec<u8>>,
    },
    PpbAck {
        proposer: PartyId,
        step: u16,
        share: Vec<u8>,
    },
    Propose {
        j: u16,
        step: u16,
        ciphertext: Vec<u8>,
        proof: Vec<u8>,
    },
    Suggest {
        j: u16,
        step: u16,
        proposer: PartyId,
        ciphertext: Vec<u8>,
        proof: Vec<u8>,
    },
    AbaEst {
        j: u16,
        round: u16,
        value: bool,
        flags: u8,
    },
    AbaAux {
        j: u16,
        round: u16,
        value: bool,
        flags: u8,
    },
    AbaCoinShare {
        j: u16,
        round: u16,
        share: Vec<u8>,
    },
    DecShare {
        j: u16,
        ct_ref: [u8; 4],
        share: Vec<u8>,
    },
    ProposalEcho {
        j: u16,
        step: u16,
        ciphertext: Vec<u8>,
        proof: Vec<u8>,
    },
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::CoinShare { .. } => MessageKind::CoinShare,
            Body::PpbSend { .. } => MessageKind::PpbSend,
            Body::PpbAck { .. } => MessageKind::PpbAck,
            Body::Propose { .. } => MessageKind::Propose,
            Body::Suggest { .. } => MessageKind::Suggest,
            Body::AbaEst { .. } => MessageKind::AbaEst,
            Body::AbaAux { .. } => MessageKind::AbaAux,
            Body::AbaCoinShare { .. } => MessageKind::AbaCoinShare,
            Body::DecShare { .. } => MessageKind::DecShare,
            Body::ProposalEcho { .. } => MessageKind::ProposalEcho,
        }
    }

    fn tag(&self) -> u32 {
        let pair = |hi: u16, lo: u16| (u32::from(hi) << 16) | u32::from(lo);
        match self {
            Body::CoinShare { scope, .. } => scope.tag(),
            Body::PpbSend { step, .. } => u32::from(*step),
            Body::PpbAck { proposer, step, .. } => pair(proposer.0, *step),
            Body::Propose { j, step, .. }
            | Body::Suggest { j, step, .. }
            | Body::ProposalEcho { j, step, .. } => pair(*j, *step),
            Body::AbaEst { j, round, .. }
            | Body::AbaAux { j, round, .. }
            | Body::AbaCoinShare { j, round, .. } => pair(*j, *round),
            Body::DecShare { j, .. } => u32::from(*j),
        }
    }

    fn body_len(&self) -> usize {
        match self {
            Body::CoinShare { share, .. }
            | Body::PpbAck { share, .. }
            | Body::AbaCoinShare { share, .. } => share.len(),
            Body::PpbSend {
                value,
                sender_share,
                proof,
                ..
            } => value.len() + sender_share.len() + proof.as_ref().map_or(0, Vec::len),
            Body::Propose {
                ciphertext, proof, ..
            }
            | Body::ProposalEcho {
                ciphertext, proof, ..
            } => ciphertext.len() + proof.len(),
            Body::Suggest {
                ciphertext, proof, ..
            } => ciphertext.len() + proof.len() + 2,
            Body::AbaEst { .. } | Body::AbaAux { .. } => 2,
            Body::DecShare { share, .. } => 4 + share.len(),
        }
    }

    fn write_body(&self, out: &mut Vec<u8>) {
        match self {
            Body::CoinShare { share, .. }
            | Body::PpbAck { share, .. }
            | Body::AbaCoinShare { share, .. } => out.extend_from_slice(share),
            Body::PpbSend {
                value,
                sender_share,
                proof,
                ..
            } => {
                out.extend_from_slice(value);
                out.extend_from_slice(sender_share);
                if let Some(p) = proof {
                    out.extend_from_slice(p);
                }
            }
            Body::Propose {
                ciphertext, proof, ..
            }
            | Body::ProposalEcho {
                ciphertext, proof, ..
            } => {
                out.extend_from_slice(ciphertext);
                out.extend_from_slice(proof);
            }
            Body::Suggest {
                proposer,
                ciphertext,
                proof,
                ..
            } => {
                out.extend_from_slice(ciphertext);
                out.extend_from_slice(proof);
                out.extend_from_slice(&proposer.0.to_be_bytes());
            }
            Body::AbaEst { value, flags, .. } | Body::AbaAux { value, flags, .. } => {
                out.push(u8::from(*value));
                out.push(*flags);
            }
            Body::DecShare { ct_ref, share, .. } => {
                out.extend_from_slice(ct_ref);
                out.extend_from_slice(share);
            }
        }
    }
}

/// A protocol message. The recipient is not part of the message; the transport
/// authenticates the sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub epoch: u32,
    pub sender: PartyId,
    pub body: Body,
}

impl Message {
    pub fn new(epoch: u32, sender: PartyId, body: Body) -> Self {
        Message {
            epoch,
            sender,
            body,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn tag(&self) -> u32 {
        self.body.tag()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.body.body_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let body_len = self.body.body_len();
        let mut out = Vec::with_capacity(HEADER_LEN + body_len);
        out.push(self.kind() as u8);
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&self.sender.0.to_be_bytes());
        out.extend_from_slice(&self.tag().to_be_bytes());
        out.extend_from_slice(&(body_len as u32).to_be_bytes());
        out.push(0);
        self.body.write_body(&mut out);
        debug_assert_eq!(out.len(), HEADER_LEN + body_len);
        out
    }

    /// Decodes a message. `sec_param` is `K`, the byte size of shares and signatures,
    /// which fixes the layout of every body.
    pub fn decode(bytes: &[u8], sec_param: usize) -> Result<Message, WireError> {
        let header = Header::parse(bytes)?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != header.body_len {
            return Err(WireError::LengthMismatch {
                declared: header.body_len,
                actual: body.len(),
            });
        }
        let k = sec_param;
        let kind = header.kind;
        let hi = (header.tag >> 16) as u16;
        let lo = (header.tag & 0xffff) as u16;
        let exact = |len: usize| {
            if body.len() == len {
                Ok(())
            } else {
                Err(WireError::BadBodySize(kind))
            }
        };
        let body = match kind {
            MessageKind::CoinShare => {
                exact(k)?;
                let scope = CoinScope::from_tag(header.tag).ok_or(WireError::BadField(kind))?;
                Body::CoinShare {
                    scope,
                    share: body.to_vec(),
                }
            }
            MessageKind::PpbSend => {
                if hi != 0 || lo == 0 {
                    return Err(WireError::BadField(kind));
                }
                let step = lo;
                let fixed = if step >= 2 { 2 * k } else { k };
                if body.len() < fixed {
                    return Err(WireError::BadBodySize(kind));
                }
                let value_len = body.len() - fixed;
                let (value, rest) = body.split_at(value_len);
                let (sender_share, proof) = rest.split_at(k);
                Body::PpbSend {
                    step,
                    value: value.to_vec(),
                    sender_share: sender_share.to_vec(),
                    proof: (step >= 2).then(|| proof.to_vec()),
                }
            }
            MessageKind::PpbAck => {
                exact(k)?;
                if lo == 0 {
                    return Err(WireError::BadField(kind));
                }
                Body::PpbAck {
                    proposer: PartyId(hi),
                    step: lo,
                    share: body.to_vec(),
                }
            }
            MessageKind::Propose | MessageKind::ProposalEcho => {
                if body.len() < k || lo == 0 {
                    return Err(WireError::BadBodySize(kind));
                }
                let (ciphertext, proof) = body.split_at(body.len() - k);
                let (ciphertext, proof) = (ciphertext.to_vec(), proof.to_vec());
                if kind == MessageKind::Propose {
                    Body::Propose {
                        j: hi,
                        step: lo,
                        ciphertext,
                        proof,
                    }
                } else {
                    Body::ProposalEcho {
                        j: hi,
                        step: lo,
                        ciphertext,
                        proof,
                    }
                }
            }
            MessageKind::Suggest => {
                if body.len() < k + 2 || lo == 0 {
                    return Err(WireError::BadBodySize(kind));
                }
                let (rest, proposer) = body.split_at(body.len() - 2);
                let (ciphertext, proof) = rest.split_at(rest.len() - k);
                Body::Suggest {
                    j: hi,
                    step: lo,
                    proposer: PartyId(u16::from_be_bytes([proposer[0], proposer[1]])),
                    ciphertext: ciphertext.to_vec(),
                    proof: proof.to_vec(),
                }
            }
            MessageKind::AbaEst | MessageKind::AbaAux => {
                exact(2)?;
                let value = match body[0] {
                    0 => false,
                    1 => true,
                    _ => return Err(WireError::BadField(kind)),
                };
                let flags = body[1];
                if lo == 0 || flags & !(ABA_FLAG_INPUT | ABA_FLAG_TERM) != 0 {
                    return Err(WireError::BadField(kind));
                }
                if kind == MessageKind::AbaEst {
                    Body::AbaEst {
                        j: hi,
                        round: lo,
                        value,
                        flags,
                    }
                } else {
                    Body::AbaAux {
                        j: hi,
                        round: lo,
                        value,
                        flags,
                    }
                }
            }
            MessageKind::AbaCoinShare => {
                exact(k)?;
                if lo == 0 {
                    return Err(WireError::BadField(kind));
                }
                Body::AbaCoinShare {
                    j: hi,
                    round: lo,
                    share: body.to_vec(),
                }
            }
            MessageKind::DecShare => {
                exact(k + 4)?;
                if hi != 0 {
                    return Err(WireError::BadField(kind));
                }
                let mut ct_ref = [0u8; 4];
                ct_ref.copy_from_slice(&body[..4]);
                Body::DecShare {
                    j: lo,
                    ct_ref,
                    share: body[4..].to_vec(),
                }
            }
        };
        Ok(Message {
            epoch: header.epoch,
            sender: header.sender,
            body,
        })
    }
}

/// The fixed header, parsed without interpreting the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub kind: MessageKind,
    pub epoch: u32,
    pub sender: PartyId,
    pub tag: u32,
    pub body_len: usize,
}

impl Header {
    pub fn parse(bytes: &[u8]) -> Result<Header, WireError> {
        let mut cur = Cursor::new(bytes);
        let kind = MessageKind::from_u8(cur.u8()?)?;
        let epoch = cur.u32()?;
        let sender = PartyId(cur.u16()?);
        let tag = cur.u32()?;
        let body_len = cur.u32()? as usize;
        if cur.u8()? != 0 {
            return Err(WireError::Reserved);
        }
        Ok(Header {
            kind,
            epoch,
            sender,
            tag,
            body_len,
        })
    }
}

/// Where an outgoing message goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Every party, including the sender.
    All,
    Party(PartyId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub target: Target,
    pub message: Message,
}

impl Outgoing {
    pub fn all(message: Message) -> Self {
        Outgoing {
            target: Target::All,
            message,
        }
    }

    pub fn to(party: PartyId, message: Message) -> Self {
        Outgoing {
            target: Target::Party(party),
            message,
        }
    }
}

/// Minimal big-endian reader.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_be_bytes(a))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}
