//! Slim-HBBFT: asynchronous atomic broadcast where only a randomly sampled committee
//! of `f + 1` parties proposes in each epoch.
//!
//! An epoch runs as a pipeline of per-party state machines:
//!
//! 1. [`committee`]: every party releases a coin share; `f + 1` shares fix the committee.
//! 2. [`ppb`]: each committee member threshold-encrypts its batch and runs prioritized
//!    provable broadcast, collecting `2f + 1` sign-shares into a delivery proof.
//! 3. [`acs`]: members propose `(ciphertext, proof)`; receivers suggest what they see
//!    and, after hearing from `n - f` suggesters, feed one [`aba`] instance per
//!    committee slot. Decided ciphertexts are then jointly decrypted.
//!
//! [`sim`] runs all parties in a deterministic adversarial network and records a
//! [`sim::Trace`]; [`harness`] checks traces and measures communication.

pub mod aba;
pub mod acs;
pub mod committee;
pub mod crypto;
pub mod harness;
pub mod message;
pub mod params;
pub mod ppb;
pub mod sim;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use crate::crypto::{DealerCrypto, Digest, ThresholdCrypto};
pub use crate::params::{PartyId, ProtocolParams, Request, Thresholds};

/// What a party knows about itself and the system.
#[derive(Clone)]
pub struct PartyContext {
    pub me: PartyId,
    pub params: ProtocolParams,
    pub thresholds: Thresholds,
    pub crypto: Arc<dyn ThresholdCrypto>,
}

impl PartyContext {
    pub fn new(me: PartyId, params: ProtocolParams, crypto: Arc<dyn ThresholdCrypto>) -> Self {
        PartyContext {
            me,
            params,
            thresholds: params.thresholds(),
            crypto,
        }
    }
}

impl fmt::Debug for PartyContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartyContext")
            .field("me", &self.me)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

/// Why a delivered message was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Malformed,
    SpoofedSender,
    EpochOutOfRange,
    BadCoinShare,
    NotCommitteeMember,
    BadSenderShare,
    BadCarriedProof,
    Equivocation,
    Abandoned,
    BadAckShare,
    BadProposal,
    BadDecShare,
    BadAbaCoinShare,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Malformed => "malformed",
            DropReason::SpoofedSender => "spoofed_sender",
            DropReason::EpochOutOfRange => "epoch_out_of_range",
            DropReason::BadCoinShare => "bad_coin_share",
            DropReason::NotCommitteeMember => "not_committee_member",
            DropReason::BadSenderShare => "bad_sender_share",
            DropReason::BadCarriedProof => "bad_carried_proof",
            DropReason::Equivocation => "equivocation",
            DropReason::Abandoned => "abandoned",
            DropReason::BadAckShare => "bad_ack_share",
            DropReason::BadProposal => "bad_proposal",
            DropReason::BadDecShare => "bad_dec_share",
            DropReason::BadAbaCoinShare => "bad_aba_coin_share",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
