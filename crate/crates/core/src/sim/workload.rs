//! Client request workloads preloaded into each party's buffer.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::params::{PartyId, Request};

/// Bytes of a request's framing inside an encoded batch (tag and payload lengths).
const REQUEST_FRAMING: usize = 6;
/// Bytes of a batch's request count.
const BATCH_FRAMING: usize = 4;
/// Client tags are `"c" + party (5 digits) + "-" + index (8 digits)`.
const TAG_LEN: usize = 15;

/// Every party starts with `requests_per_party` requests of `payload_len` bytes.
/// Client tags are unique across parties, so every request is distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub requests_per_party: usize,
    pub payload_len: usize,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            requests_per_party: 8,
            payload_len: 32,
        }
    }
}

impl Workload {
    /// A workload whose full batches of `batch_size` requests encode to exactly
    /// `batch_bytes` plaintext bytes, with enough requests for `epochs` full batches.
    /// Returns `None` if `batch_bytes` cannot be split evenly into such requests.
    pub fn fixed_batch_bytes(batch_bytes: usize, batch_size: usize, epochs: u32) -> Option<Self> {
        let per_request = batch_bytes.checked_sub(BATCH_FRAMING)?;
        if batch_size == 0 || per_request % batch_size != 0 {
            return None;
        }
        let payload_len = (per_request / batch_size).checked_sub(REQUEST_FRAMING + TAG_LEN)?;
        Some(Workload {
            requests_per_party: batch_size * epochs as usize,
            payload_len,
        })
    }

    /// Encoded size of a batch holding `count` of this workload's requests.
    pub fn batch_bytes(&self, count: usize) -> usize {
        BATCH_FRAMING + count * (REQUEST_FRAMING + TAG_LEN + self.payload_len)
    }

    /// The deterministic initial buffer of `party`.
    pub fn requests_for(&self, party: PartyId, seed: u64) -> Vec<Request> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(party.0) << 48) ^ 0x5eed);
        (0..self.requests_per_party)
            .map(|i| {
                let tag = format!("c{:05}-{:08}", party.0, i);
                debug_assert_eq!(tag.len(), TAG_LEN);
                let mut payload = vec![0u8; self.payload_len];
                rng.fill_bytes(&mut payload);
                Request::new(tag.into_bytes(), payload)
            })
            .collect()
    }
}
