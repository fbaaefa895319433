//! Protocol parameters, party identifiers and client requests.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::WireError;

/// Upper bound on a single request payload.
pub const MAX_REQUEST_PAYLOAD: usize = 1 << 20;

/// Upper bound on a client tag.
pub const MAX_CLIENT_TAG: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamsError {
    #[error("n = {n} is not 3f + 1 for f = {f}")]
    NotThreeFPlusOne { n: usize, f: usize },
    #[error("committee size {kappa} outside [1, {n}]")]
    KappaOutOfRange { kappa: usize, n: usize },
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("security parameter must be at least 1 byte")]
    ZeroSecParam,
    #[error("party count {0} does not fit the 16-bit wire identifier")]
    TooManyParties(usize),
}

/// A party index in `[0, n)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct PartyId(pub u16);

impl PartyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl From<u16> for PartyId {
    fn from(v: u16) -> Self {
        PartyId(v)
    }
}

/// Validated protocol parameters. Construct with [`ProtocolParams::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    n: usize,
    f: usize,
    kappa: usize,
    batch_size: usize,
    sec_param: usize,
    seed: u64,
}

impl ProtocolParams {
    pub fn new(
        n: usize,
        f: usize,
        kappa: usize,
        batch_size: usize,
        sec_param: usize,
        seed: u64,
    ) -> Result<Self, ParamsError> {
        if n != 3 * f + 1 {
            return Err(ParamsError::NotThreeFPlusOne { n, f });
        }
        if n > u16::MAX as usize {
            return Err(ParamsError::TooManyParties(n));
        }
        if kappa == 0 || kappa > n {
            return Err(ParamsError::KappaOutOfRange { kappa, n });
        }
        if batch_size == 0 {
            return Err(ParamsError::ZeroBatchSize);
        }
        if sec_param == 0 {
            return Err(ParamsError::ZeroSecParam);
        }
        Ok(ProtocolParams {
            n,
            f,
            kappa,
            batch_size,
            sec_param,
            seed,
        })
    }

    /// Parameters for `n = 3f + 1` with the default committee size `f + 1`.
    pub fn with_fault_bound(
        f: usize,
        batch_size: usize,
        sec_param: usize,
        seed: u64,
    ) -> Result<Self, ParamsError> {
        Self::new(3 * f + 1, f, f + 1, batch_size, sec_param, seed)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Size in bytes of every share, signature and coin value (`K`).
    pub fn sec_param(&self) -> usize {
        self.sec_param
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds::derive(self)
    }

    /// Number of parties an honest party waits for: `n - f`.
    pub fn quorum(&self) -> usize {
        self.n - self.f
    }

    pub fn parties(&self) -> impl Iterator<Item = PartyId> {
        (0..self.n as u16).map(PartyId)
    }

    pub fn contains(&self, party: PartyId) -> bool {
        party.index() < self.n
    }
}

/// Share counts needed by the threshold primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Sign-shares in a P-PB delivery proof: `2f + 1`.
    pub sig_t: usize,
    /// Coin shares needed for a toss: `f + 1`.
    pub coin_t: usize,
    /// Decryption shares needed to open a ciphertext: `f + 1`.
    pub dec_t: usize,
}

impl Thresholds {
    pub fn derive(params: &ProtocolParams) -> Self {
        let f = params.f();
        Thresholds {
            sig_t: 2 * f + 1,
            coin_t: f + 1,
            dec_t: f + 1,
        }
    }
}

/// A client request. `client_tag` identifies the request for deduplication.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Request {
    pub client_tag: Vec<u8>,
    pub payload: Vec<u8>,
}

impl Request {
    pub fn new(client_tag: impl Into<Vec<u8>>, payload: impl Into<Vec<u8>>) -> Self {
        Request {
            client_tag: client_tag.into(),
            payload: payload.into(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        2 + self.client_tag.len() + 4 + self.payload.len()
    }
}

/// Encoded size of a batch holding `requests`.
pub fn batch_encoded_len(requests: &[Request]) -> usize {
    4 + requests.iter().map(Request::encoded_len).sum::<usize>()
}

/// Serializes a batch: `u32` count, then per request a `u16` tag length, the tag,
/// a `u32` payload length and the payload. All integers big-endian.
pub fn encode_batch(requests: &[Request]) -> Vec<u8> {
    let mut out = Vec::with_capacity(batch_encoded_len(requests));
    out.extend_from_slice(&(requests.len() as u32).to_be_bytes());
    for r in requests {
        assert!(r.client_tag.len() <= MAX_CLIENT_TAG, "client tag too long");
        out.extend_from_slice(&(r.client_tag.len() as u16).to_be_bytes());
        out.extend_from_slice(&r.client_tag);
        out.extend_from_slice(&(r.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&r.payload);
    }
    out
}

pub fn decode_batch(bytes: &[u8]) -> Result<Vec<Request>, WireError> {
    let mut cur = crate::message::Cursor::new(bytes);
    let count = cur.u32()? as usize;
    // Every request takes at least 6 bytes; reject absurd counts before allocating.
    if count > bytes.len() / 6 + 1 {
        return Err(WireError::BadBatch);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let tag_len = cur.u16()? as usize;
        let client_tag = cur.take(tag_len)?.to_vec();
        let payload_len = cur.u32()? as usize;
        if payload_len > MAX_REQUEST_PAYLOAD {
            return Err(WireError::BadBatch);
        }
        let payload = cur.take(payload_len)?.to_vec();
        out.push(Request {
            client_tag,
            payload,
        });
    }
    if !cur.is_empty() {
        return Err(WireError::TrailingBytes);
    }
    Ok(out)
}
