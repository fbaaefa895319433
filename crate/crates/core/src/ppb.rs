//! Prioritized provable broadcast (P-PB) and multi-step proposal promotion.
//!
//! A committee member multicasts `PPB_SEND(value)`; a receiver answers with a sign-share
//! over `(epoch, proposer, step, digest(value))` only if the sender is on the epoch's
//! committee, this is the first value it sees for the instance, and (for steps after
//! the first) the send carries a valid proof of the previous step on the same value.
//! `2f + 1` distinct valid shares combine into a [`DeliveryProof`].
//!
//! Promotion chains P-PB steps, threading each step's proof into the next. Receivers
//! keep the value and incoming proof of steps 2, 3 and 4 as prepare, lock and commit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, SigShare, ThresholdCrypto, ThresholdSig};
use crate::message::{Body, Message, Outgoing};
use crate::params::PartyId;
use crate::{DropReason, PartyContext};

/// Longest supported promotion chain.
pub const MAX_PROMOTION_STEPS: u16 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PpbError {
    #[error("{me} is not the proposer of this instance")]
    NotProposer { me: PartyId },
    #[error("step {0} must carry the previous step's proof")]
    MissingProof(u16),
    #[error("step 1 carries no proof")]
    UnexpectedProof,
    #[error("promotion abandoned")]
    Abandoned,
    #[error("unsupported promotion length {0}")]
    UnsupportedSteps(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PpbInstanceId {
    pub epoch: u32,
    pub proposer: PartyId,
    pub step: u16,
}

impl PpbInstanceId {
    pub fn new(epoch: u32, proposer: PartyId, step: u16) -> Self {
        PpbInstanceId {
            epoch,
            proposer,
            step,
        }
    }

    /// The bytes sign-shares and proofs cover.
    pub fn statement(&self, value_digest: &Digest) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 + 2 + 2 + 32);
        out.extend_from_slice(b"ppb/");
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&self.proposer.0.to_be_bytes());
        out.extend_from_slice(&self.step.to_be_bytes());
        out.extend_from_slice(&value_digest.0);
        out
    }

    pub fn previous(&self) -> Option<PpbInstanceId> {
        (self.step > 1).then(|| PpbInstanceId {
            step: self.step - 1,
            ..*self
        })
    }

    pub fn next(&self) -> PpbInstanceId {
        PpbInstanceId {
            step: self.step + 1,
            ..*self
        }
    }
}

/// Proof that `2f + 1` parties acknowledged `value_digest` for `instance`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryProof {
    pub instance: PpbInstanceId,
    pub value_digest: Digest,
    pub sig: ThresholdSig,
}

impl DeliveryProof {
    /// Rebuilds a proof from the signature bytes carried in a message.
    pub fn from_wire(instance: PpbInstanceId, value_digest: Digest, sig_bytes: Vec<u8>) -> Self {
        let msg_digest = Digest::of(&instance.statement(&value_digest));
        DeliveryProof {
            instance,
            value_digest,
            sig: ThresholdSig::from_wire(msg_digest, sig_bytes),
        }
    }

    pub fn verify(&self, crypto: &dyn ThresholdCrypto) -> bool {
        crypto.verify_threshold_sig(&self.instance.statement(&self.value_digest), &self.sig)
    }
}

fn send_message(
    ctx: &PartyContext,
    instance: PpbInstanceId,
    value: &[u8],
    carried: Option<&ThresholdSig>,
) -> Result<(Outgoing, SigShare), PpbError> {
    if instance.proposer != ctx.me {
        return Err(PpbError::NotProposer { me: ctx.me });
    }
    match (instance.step, carried) {
        (1, Some(_)) => return Err(PpbError::UnexpectedProof),
        (s, None) if s >= 2 => return Err(PpbError::MissingProof(s)),
        _ => {}
    }
    let own = ctx
        .crypto
        .sign_share(ctx.me, &instance.statement(&Digest::of(value)));
    let msg = Message::new(
        instance.epoch,
        ctx.me,
        Body::PpbSend {
            step: instance.step,
            value: value.to_vec(),
            sender_share: own.share_bytes.clone(),
            proof: carried.map(|p| p.sig_bytes.clone()),
        },
    );
    Ok((Outgoing::all(msg), own))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AckOutcome {
    Counted,
    Duplicate,
    /// Late ack after the proof formed.
    AlreadyDone,
    Rejected(DropReason),
    /// Threshold reached; returned once.
    Proof(DeliveryProof),
}

/// Sender side of one P-PB instance.
#[derive(Debug, Clone)]
pub struct PpbSender {
    instance: PpbInstanceId,
    value_digest: Digest,
    statement: Vec<u8>,
    shares: BTreeMap<PartyId, SigShare>,
    done: bool,
}

impl PpbSender {
    /// Starts the instance and returns the `PPB_SEND` multicast. The proposer's own
    /// share travels in the send and counts toward the proof.
    pub fn start(
        ctx: &PartyContext,
        instance: PpbInstanceId,
        value: &[u8],
        carried: Option<&ThresholdSig>,
    ) -> Result<(Self, Vec<Outgoing>), PpbError> {
        let (out, own) = send_message(ctx, instance, value, carried)?;
        let value_digest = Digest::of(value);
        let mut shares = BTreeMap::new();
        shares.insert(ctx.me, own);
        Ok((
            PpbSender {
                instance,
                value_digest,
                statement: instance.statement(&value_digest),
                shares,
                done: false,
            },
            vec![out],
        ))
    }

    pub fn instance(&self) -> PpbInstanceId {
        self.instance
    }

    pub fn value_digest(&self) -> Digest {
        self.value_digest
    }

    pub fn ack_count(&self) -> usize {
        self.shares.len()
    }

    pub fn handle_ack(&mut self, ctx: &PartyContext, from: PartyId, share: &[u8]) -> AckOutcome {
        if self.shares.contains_key(&from) {
            return AckOutcome::Duplicate;
        }
        let share = SigShare {
            signer: from,
            msg_digest: Digest::of(&self.statement),
            share_bytes: share.to_vec(),
        };
        if !ctx.crypto.verify_sig_share(&share) {
            return AckOutcome::Rejected(DropReason::BadAckShare);
        }
        if self.done {
            return AckOutcome::AlreadyDone;
        }
        self.shares.insert(from, share);
        if self.shares.len() < ctx.thresholds.sig_t {
            return AckOutcome::Counted;
        }
        let shares: Vec<SigShare> = self.shares.values().cloned().collect();
        match ctx
            .crypto
            .combine_signature(&self.statement, &shares, ctx.thresholds.sig_t)
        {
            Ok(sig) => {
                self.done = true;
                AckOutcome::Proof(DeliveryProof {
                    instance: self.instance,
                    value_digest: self.value_digest,
                    sig,
                })
            }
            Err(_) => AckOutcome::Rejected(DropReason::BadAckShare),
        }
    }
}

/// Receiver-side record of a promotion: the value and incoming proof stored at steps
/// 2, 3 and 4.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromotionState {
    prepare: Option<(Vec<u8>, ThresholdSig)>,
    lock: Option<(Vec<u8>, ThresholdSig)>,
    commit: Option<(Vec<u8>, ThresholdSig)>,
}

impl PromotionState {
    pub fn prepare(&self) -> Option<&(Vec<u8>, ThresholdSig)> {
        self.prepare.as_ref()
    }

    pub fn lock(&self) -> Option<&(Vec<u8>, ThresholdSig)> {
        self.lock.as_ref()
    }

    pub fn commit(&self) -> Option<&(Vec<u8>, ThresholdSig)> {
        self.commit.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SendOutcome {
    /// Send accepted; `share` is our ack, `outgoing` carries it to the proposer.
    Ack {
        share: SigShare,
        outgoing: Outgoing,
    },
    /// Same value re-sent for an instance we already acked.
    Duplicate,
    Rejected(DropReason),
}

/// Receiver side of all P-PB steps from one proposer in one epoch.
#[derive(Debug, Clone)]
pub struct PpbReceiver {
    epoch: u32,
    proposer: PartyId,
    acked: BTreeMap<u16, Digest>,
    state: PromotionState,
    abandoned: bool,
}

impl PpbReceiver {
    pub fn new(epoch: u32, proposer: PartyId) -> Self {
        PpbReceiver {
            epoch,
            proposer,
            acked: BTreeMap::new(),
            state: PromotionState::default(),
            abandoned: false,
        }
    }

    pub fn promotion(&self) -> &PromotionState {
        &self.state
    }

    pub fn acked(&self, step: u16) -> Option<Digest> {
        self.acked.get(&step).copied()
    }

    pub fn is_abandoned(&self) -> bool {
        self.abandoned
    }

    /// Ignore every current and future send from this proposer. Idempotent.
    pub fn abandon(&mut self) {
        self.abandoned = true;
    }

    pub fn handle_send(
        &mut self,
        ctx: &PartyContext,
        step: u16,
        value: &[u8],
        sender_share: &[u8],
        carried_proof: Option<&[u8]>,
        committee: &[PartyId],
    ) -> SendOutcome {
        if self.abandoned {
            return SendOutcome::Rejected(DropReason::Abandoned);
        }
        if !committee.contains(&self.proposer) {
            return SendOutcome::Rejected(DropReason::NotCommitteeMember);
        }
        let instance = PpbInstanceId::new(self.epoch, self.proposer, step);
        let value_digest = Digest::of(value);
        let statement = instance.statement(&value_digest);
        let sender_sig = SigShare {
            signer: self.proposer,
            msg_digest: Digest::of(&statement),
            share_bytes: sender_share.to_vec(),
        };
        if !ctx.crypto.verify_sig_share(&sender_sig) {
            return SendOutcome::Rejected(DropReason::BadSenderShare);
        }
        if let Some(prev) = self.acked.get(&step) {
            return if *prev == value_digest {
                SendOutcome::Duplicate
            } else {
                SendOutcome::Rejected(DropReason::Equivocation)
            };
        }
        let carried = match (instance.previous(), carried_proof) {
            (None, None) => None,
            (Some(prev), Some(bytes)) => {
                let proof = DeliveryProof::from_wire(prev, value_digest, bytes.to_vec());
                if !proof.verify(ctx.crypto.as_ref()) {
                    return SendOutcome::Rejected(DropReason::BadCarriedProof);
                }
                Some(proof.sig)
            }
            _ => return SendOutcome::Rejected(DropReason::BadCarriedProof),
        };
        self.acked.insert(step, value_digest);
        if let Some(t_in) = carried {
            let slot = match step {
                2 => Some(&mut self.state.prepare),
                3 => Some(&mut self.state.lock),
                4 => Some(&mut self.state.commit),
                _ => None,
            };
            if let Some(slot) = slot {
                *slot = Some((value.to_vec(), t_in));
            }
        }
        let share = ctx.crypto.sign_share(ctx.me, &statement);
        let outgoing = Outgoing::to(
            self.proposer,
            Message::new(
                self.epoch,
                ctx.me,
                Body::PpbAck {
                    proposer: self.proposer,
                    step,
                    share: share.share_bytes.clone(),
                },
            ),
        );
        SendOutcome::Ack { share, outgoing }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromotionProgress {
    Pending,
    Ignored,
    Rejected(DropReason),
    /// An intermediate step finished; `next` starts the following step.
    StepComplete {
        proof: DeliveryProof,
        next: Vec<Outgoing>,
    },
    /// The final step's proof.
    Complete(DeliveryProof),
}

/// Sender-side promotion: `steps` sequential P-PB instances on one value.
#[derive(Debug, Clone)]
pub struct Promotion {
    steps: u16,
    value: Vec<u8>,
    /// One sender per started step; the last is current.
    senders: Vec<PpbSender>,
    proofs: Vec<DeliveryProof>,
    abandoned: bool,
}

impl Promotion {
    pub fn start(
        ctx: &PartyContext,
        epoch: u32,
        value: Vec<u8>,
        steps: u16,
    ) -> Result<(Self, Vec<Outgoing>), PpbError> {
        if steps == 0 || steps > MAX_PROMOTION_STEPS {
            return Err(PpbError::UnsupportedSteps(steps));
        }
        let (first, out) =
            PpbSender::start(ctx, PpbInstanceId::new(epoch, ctx.me, 1), &value, None)?;
        Ok((
            Promotion {
                steps,
                value,
                senders: vec![first],
                proofs: Vec::new(),
                abandoned: false,
            },
            out,
        ))
    }

    pub fn current_step(&self) -> u16 {
        self.current().instance().step
    }

    fn current(&self) -> &PpbSender {
        self.senders.last().expect("promotion has a first step")
    }

    pub fn value(&self) -> &[u8] {
        &self.value
    }

    /// Proofs of completed steps, in order.
    pub fn proofs(&self) -> &[DeliveryProof] {
        &self.proofs
    }

    pub fn is_complete(&self) -> bool {
        self.proofs.len() == self.steps as usize
    }

    pub fn abandon(&mut self) {
        self.abandoned = true;
    }

    pub fn handle_ack(
        &mut self,
        ctx: &PartyContext,
        from: PartyId,
        step: u16,
        share: &[u8],
    ) -> Result<PromotionProgress, PpbError> {
        if self.abandoned {
            return Err(PpbError::Abandoned);
        }
        // Acks for steps not yet started cannot come from honest parties.
        let Some(sender) = (step as usize)
            .checked_sub(1)
            .and_then(|i| self.senders.get_mut(i))
        else {
            return Ok(PromotionProgress::Rejected(DropReason::BadAckShare));
        };
        let proof = match sender.handle_ack(ctx, from, share) {
            AckOutcome::Proof(p) => p,
            AckOutcome::Rejected(r) => return Ok(PromotionProgress::Rejected(r)),
            AckOutcome::Counted => return Ok(PromotionProgress::Pending),
            AckOutcome::Duplicate | AckOutcome::AlreadyDone => {
                return Ok(PromotionProgress::Ignored)
            }
        };
        self.proofs.push(proof.clone());
        if self.is_complete() {
            return Ok(PromotionProgress::Complete(proof));
        }
        let (next, out) =
            PpbSender::start(ctx, proof.instance.next(), &self.value, Some(&proof.sig))?;
        self.senders.push(next);
        Ok(PromotionProgress::StepComplete { proof, next: out })
    }
}
