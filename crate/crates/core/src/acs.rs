//! The per-party Slim-HBBFT state machine.
//!
//! Each epoch: committee selection, then every committee member threshold-encrypts
//! its batch and promotes it through P-PB. A finished promotion becomes a `PROPOSE`;
//! receivers `SUGGEST` what they were proposed, and after `n - f` distinct suggesters
//! input 0 to the binary agreement of every slot they have not seen. Slots decided 1
//! are echoed to parties not known to hold them and, once every slot is decided and
//! every 1-slot is held, decrypted jointly. The decrypted requests form the block.
//!
//! A [`Party`] is a pure state machine: one inbound message at a time in, outgoing
//! messages and [`Note`]s out.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aba::{Aba, AbaConfig, AbaStep};
use crate::committee::{CommitteeState, ShareOutcome};
use crate::crypto::{Ciphertext, DecShare, Digest};
use crate::message::{Body, CoinScope, Header, Message, MessageKind, Outgoing, ABA_FLAG_INPUT};
use crate::params::{decode_batch, encode_batch, PartyId, Request};
use crate::ppb::{
    DeliveryProof, PpbInstanceId, PpbReceiver, Promotion, PromotionProgress, SendOutcome,
};
use crate::{DropReason, PartyContext};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AcsError {
    #[error("epoch {0} already active")]
    EpochAlreadyActive(u32),
    #[error("epoch {got} cannot start before epoch {expected}")]
    EpochOutOfOrder { expected: u32, got: u32 },
    #[error("epoch {epoch} is beyond the configured {limit} epochs")]
    EpochBeyondLimit { epoch: u32, limit: u32 },
}

/// Which received proposals a party suggests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestMode {
    /// Suggest proposals received by `PROPOSE` until `n - f` suggesters have been
    /// seen; a party that has suggested nothing yet still suggests its first one.
    #[default]
    UntilQuorum,
    /// Suggest every distinct proposal received by `PROPOSE`.
    EveryProposal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyConfig {
    /// Number of epochs to run; messages for later epochs are dropped.
    pub epochs: u32,
    /// P-PB steps per proposal: 1 or 4.
    pub promotion_steps: u16,
    pub suggest_mode: SuggestMode,
    pub aba: AbaConfig,
}

impl Default for PartyConfig {
    fn default() -> Self {
        PartyConfig {
            epochs: 1,
            promotion_steps: 1,
            suggest_mode: SuggestMode::default(),
            aba: AbaConfig::default(),
        }
    }
}

/// One epoch's output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveredBlock {
    pub epoch: u32,
    /// Committee indices whose agreement decided 1.
    pub decided_set: Vec<u16>,
    pub q: usize,
    pub requests: Vec<Request>,
    /// Total decrypted batch bytes.
    pub byte_total: u64,
}

impl DeliveredBlock {
    /// Digests of the delivered requests, in block order.
    pub fn request_digests(&self) -> Vec<Digest> {
        self.requests.iter().map(request_digest).collect()
    }

    /// One line of the per-party block log.
    pub fn log_line(&self) -> String {
        block_log_line(
            self.epoch,
            &self.decided_set,
            self.q,
            &self.request_digests(),
        )
    }
}

/// `epoch=E S=[j,..] q=Q requests=[digest,..]`, with digests shortened.
pub fn block_log_line(epoch: u32, decided_set: &[u16], q: usize, requests: &[Digest]) -> String {
    let set: Vec<String> = decided_set.iter().map(u16::to_string).collect();
    let digests: Vec<String> = requests.iter().map(Digest::short_hex).collect();
    format!(
        "epoch={epoch} S=[{}] q={q} requests=[{}]",
        set.join(","),
        digests.join(",")
    )
}

/// Digest of a request's canonical encoding (tag and payload, length-prefixed).
pub fn request_digest(r: &Request) -> Digest {
    let mut buf = Vec::with_capacity(r.encoded_len());
    buf.extend_from_slice(&(r.client_tag.len() as u16).to_be_bytes());
    buf.extend_from_slice(&r.client_tag);
    buf.extend_from_slice(&(r.payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(&r.payload);
    Digest::of(&buf)
}

/// Observable events, for tracing and checking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Note {
    Dropped {
        from: PartyId,
        kind: Option<MessageKind>,
        epoch: Option<u32>,
        reason: DropReason,
    },
    Committee {
        epoch: u32,
        members: Vec<PartyId>,
    },
    /// This party signed `digest` for the proposer's P-PB step.
    Acked {
        epoch: u32,
        proposer: PartyId,
        step: u16,
        digest: Digest,
    },
    /// This party's P-PB step produced a proof.
    ProofFormed {
        epoch: u32,
        step: u16,
        digest: Digest,
        signers: Vec<PartyId>,
        sig: Vec<u8>,
    },
    /// This party now stores the full proposal for slot `j`.
    Held {
        epoch: u32,
        j: u16,
        digest: Digest,
        via: MessageKind,
    },
    /// The distinct-suggester count reached `n - f`.
    SuggesterQuorum {
        epoch: u32,
        count: usize,
    },
    AbaInput {
        epoch: u32,
        j: u16,
        bit: bool,
        upgrade: bool,
    },
    Decided {
        epoch: u32,
        j: u16,
        bit: bool,
        round: u16,
    },
    DecShareRelease {
        epoch: u32,
        j: u16,
    },
    Delivered(DeliveredBlock),
}

/// Output of one call into a [`Party`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Step {
    pub out: Vec<Outgoing>,
    pub notes: Vec<Note>,
}

impl Step {
    fn extend(&mut self, other: Step) {
        self.out.extend(other.out);
        self.notes.extend(other.notes);
    }
}

/// First `batch_size` pending requests in arrival order.
pub fn select_batch(buffer: &VecDeque<Request>, batch_size: usize) -> Vec<Request> {
    buffer.iter().take(batch_size).cloned().collect()
}

#[derive(Debug, Clone)]
struct HeldProposal {
    ciphertext: Vec<u8>,
    step: u16,
    proof: Vec<u8>,
}

#[derive(Debug)]
struct EpochState {
    coin: CommitteeState,
    committee: Option<Vec<PartyId>>,
    backlog: Vec<(PartyId, Message)>,
    batch: Vec<Request>,
    promotion: Option<Promotion>,
    proposed: bool,
    receivers: BTreeMap<PartyId, PpbReceiver>,
    proposals: BTreeMap<u16, HeldProposal>,
    suggesters: BTreeSet<PartyId>,
    suggested_for: BTreeMap<u16, BTreeSet<PartyId>>,
    my_suggestions: BTreeSet<u16>,
    zero_inputs_sent: bool,
    known_holders: BTreeMap<u16, BTreeSet<PartyId>>,
    abas: Vec<Aba>,
    decisions: BTreeMap<u16, bool>,
    echoed: BTreeSet<u16>,
    dec_released: bool,
    /// Decryption shares not yet checked because the ciphertext is not held.
    raw_dec_shares: BTreeMap<u16, BTreeMap<PartyId, ([u8; 4], Vec<u8>)>>,
    dec_shares: BTreeMap<u16, BTreeMap<PartyId, DecShare>>,
    plaintexts: BTreeMap<u16, Vec<u8>>,
    delivered: bool,
}

impl EpochState {
    fn new(epoch: u32, kappa: usize, batch: Vec<Request>) -> Self {
        EpochState {
            coin: CommitteeState::new(epoch, kappa),
            committee: None,
            backlog: Vec::new(),
            batch,
            promotion: None,
            proposed: false,
            receivers: BTreeMap::new(),
            proposals: BTreeMap::new(),
            suggesters: BTreeSet::new(),
            suggested_for: BTreeMap::new(),
            my_suggestions: BTreeSet::new(),
            zero_inputs_sent: false,
            known_holders: BTreeMap::new(),
            abas: Vec::new(),
            decisions: BTreeMap::new(),
            echoed: BTreeSet::new(),
            dec_released: false,
            raw_dec_shares: BTreeMap::new(),
            dec_shares: BTreeMap::new(),
            plaintexts: BTreeMap::new(),
            delivered: false,
        }
    }

    fn kappa(&self) -> usize {
        self.committee.as_ref().map_or(0, Vec::len)
    }

    fn proposer(&self, j: u16) -> Option<PartyId> {
        self.committee.as_ref()?.get(j as usize).copied()
    }

    fn decided_set(&self) -> Vec<u16> {
        self.decisions
            .iter()
            .filter(|(_, b)| **b)
            .map(|(j, _)| *j)
            .collect()
    }
}

/// One protocol participant.
#[derive(Debug)]
pub struct Party {
    ctx: PartyContext,
    config: PartyConfig,
    pending: VecDeque<Request>,
    delivered_tags: BTreeSet<Vec<u8>>,
    current: Option<u32>,
    epochs: BTreeMap<u32, EpochState>,
    future: BTreeMap<u32, Vec<(PartyId, Message)>>,
    blocks: Vec<DeliveredBlock>,
}

fn drop_note(from: PartyId, msg: &Message, reason: DropReason) -> Note {
    Note::Dropped {
        from,
        kind: Some(msg.kind()),
        epoch: Some(msg.epoch),
        reason,
    }
}

impl Party {
    pub fn new(ctx: PartyContext, config: PartyConfig, requests: Vec<Request>) -> Self {
        Party {
            ctx,
            config,
            pending: requests.into(),
            delivered_tags: BTreeSet::new(),
            current: None,
            epochs: BTreeMap::new(),
            future: BTreeMap::new(),
            blocks: Vec::new(),
        }
    }

    pub fn id(&self) -> PartyId {
        self.ctx.me
    }

    pub fn context(&self) -> &PartyContext {
        &self.ctx
    }

    pub fn config(&self) -> &PartyConfig {
        &self.config
    }

    pub fn delivered(&self) -> &[DeliveredBlock] {
        &self.blocks
    }

    pub fn pending(&self) -> &VecDeque<Request> {
        &self.pending
    }

    pub fn current_epoch(&self) -> Option<u32> {
        self.current
    }

    /// Adds a client request to the pending buffer, unless already delivered.
    pub fn submit(&mut self, request: Request) {
        if !self.delivered_tags.contains(&request.client_tag) {
            self.pending.push_back(request);
        }
    }

    /// Committee for `epoch`, once known.
    pub fn committee(&self, epoch: u32) -> Option<&[PartyId]> {
        self.epochs.get(&epoch)?.committee.as_deref()
    }

    /// Decision of slot `j` in `epoch`.
    pub fn decision(&self, epoch: u32, j: u16) -> Option<bool> {
        self.epochs.get(&epoch)?.decisions.get(&j).copied()
    }

    /// Round in which slot `j`'s agreement decided.
    pub fn decision_round(&self, epoch: u32, j: u16) -> Option<u16> {
        self.epochs
            .get(&epoch)?
            .abas
            .get(j as usize)?
            .decision_round()
    }

    /// Starts the first epoch.
    pub fn start(&mut self) -> Result<Step, AcsError> {
        self.start_epoch(0)
    }

    /// Starts `epoch`, which must directly follow the last delivered epoch.
    pub fn start_epoch(&mut self, epoch: u32) -> Result<Step, AcsError> {
        if epoch >= self.config.epochs {
            return Err(AcsError::EpochBeyondLimit {
                epoch,
                limit: self.config.epochs,
            });
        }
        if self.epochs.contains_key(&epoch) {
            return Err(AcsError::EpochAlreadyActive(epoch));
        }
        let expected = self.current.map_or(0, |c| c + 1);
        let prev_done = self
            .current
            .is_none_or(|c| self.epochs.get(&c).is_some_and(|es| es.delivered));
        if epoch != expected || !prev_done {
            return Err(AcsError::EpochOutOfOrder {
                expected,
                got: epoch,
            });
        }
        self.current = Some(epoch);
        let batch = select_batch(&self.pending, self.ctx.params.batch_size());
        let mut es = EpochState::new(epoch, self.ctx.params.kappa(), batch);
        let mut step = Step::default();
        step.out
            .extend(es.coin.start(&self.ctx).expect("fresh committee state"));
        self.epochs.insert(epoch, es);
        for (from, msg) in self.future.remove(&epoch).unwrap_or_default() {
            let s = self.handle_decoded(from, msg);
            step.extend(s);
        }
        Ok(step)
    }

    /// Handles raw bytes received from `from`.
    pub fn handle_message(&mut self, from: PartyId, bytes: &[u8]) -> Step {
        match Message::decode(bytes, self.ctx.params.sec_param()) {
            Ok(msg) => self.handle_decoded(from, msg),
            Err(_) => {
                let header = Header::parse(bytes).ok();
                Step {
                    out: Vec::new(),
                    notes: vec![Note::Dropped {
                        from,
                        kind: header.map(|h| h.kind),
                        epoch: header.map(|h| h.epoch),
                        reason: DropReason::Malformed,
                    }],
                }
            }
        }
    }

    /// Handles an already-decoded message from `from`.
    pub fn handle_decoded(&mut self, from: PartyId, msg: Message) -> Step {
        let mut step = Step::default();
        if msg.sender != from {
            step.notes
                .push(drop_note(from, &msg, DropReason::SpoofedSender));
            return step;
        }
        if msg.epoch >= self.config.epochs {
            step.notes
                .push(drop_note(from, &msg, DropReason::EpochOutOfRange));
            return step;
        }
        if !self.epochs.contains_key(&msg.epoch) {
            self.future.entry(msg.epoch).or_default().push((from, msg));
            return step;
        }
        let epoch = msg.epoch;
        if let Body::CoinShare { scope, ref share } = msg.body {
            if scope != CoinScope::Committee {
                step.notes
                    .push(drop_note(from, &msg, DropReason::Malformed));
                return step;
            }
            let es = self.epochs.get_mut(&epoch).expect("epoch exists");
            match es.coin.handle_coin_share(&self.ctx, from, share) {
                ShareOutcome::Decided(members) => self.on_committee(epoch, members, &mut step),
                ShareOutcome::Rejected(reason) => step.notes.push(drop_note(from, &msg, reason)),
                ShareOutcome::Pending | ShareOutcome::Ignored => {}
            }
            return step;
        }
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        if es.committee.is_none() {
            es.backlog.push((from, msg));
            return step;
        }
        self.dispatch(from, msg, &mut step);
        step
    }

    fn on_committee(&mut self, epoch: u32, members: Vec<PartyId>, step: &mut Step) {
        let ctx = &self.ctx;
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        step.notes.push(Note::Committee {
            epoch,
            members: members.clone(),
        });
        es.abas = (0..members.len())
            .map(|j| Aba::new(epoch, j as u16, self.config.aba))
            .collect();
        if members.contains(&ctx.me) {
            let plaintext = encode_batch(&es.batch);
            let ct = ctx.crypto.encrypt(epoch, ctx.me, &plaintext);
            let (promotion, out) =
                Promotion::start(ctx, epoch, ct.bytes, self.config.promotion_steps)
                    .expect("member promotes its own value");
            es.promotion = Some(promotion);
            step.out.extend(out);
        }
        es.committee = Some(members);
        let backlog = std::mem::take(&mut es.backlog);
        for (from, msg) in backlog {
            self.dispatch(from, msg, step);
        }
    }

    fn dispatch(&mut self, from: PartyId, msg: Message, step: &mut Step) {
        let epoch = msg.epoch;
        let kappa = self.epochs[&epoch].kappa();
        let slot_ok = |j: u16| (j as usize) < kappa;
        match &msg.body {
            Body::CoinShare { .. } => unreachable!("handled before dispatch"),
            Body::PpbSend {
                step: s,
                value,
                sender_share,
                proof,
            } => {
                let ctx = &self.ctx;
                let es = self.epochs.get_mut(&epoch).expect("epoch exists");
                let committee = es.committee.clone().expect("committee known");
                let rx = es
                    .receivers
                    .entry(from)
                    .or_insert_with(|| PpbReceiver::new(epoch, from));
                match rx.handle_send(ctx, *s, value, sender_share, proof.as_deref(), &committee) {
                    SendOutcome::Ack { outgoing, .. } => {
                        step.out.push(outgoing);
                        step.notes.push(Note::Acked {
                            epoch,
                            proposer: from,
                            step: *s,
                            digest: Digest::of(value),
                        });
                    }
                    SendOutcome::Duplicate => {}
                    SendOutcome::Rejected(reason) => step.notes.push(drop_note(from, &msg, reason)),
                }
            }
            Body::PpbAck {
                proposer,
                step: s,
                share,
            } => {
                if *proposer != self.ctx.me {
                    step.notes
                        .push(drop_note(from, &msg, DropReason::Malformed));
                    return;
                }
                self.on_ppb_ack(epoch, from, *s, share, &msg, step);
            }
            Body::Propose {
                j,
                step: s,
                ciphertext,
                proof,
            } => {
                let valid = slot_ok(*j)
                    && self.epochs[&epoch].proposer(*j) == Some(from)
                    && self.verify_proposal(epoch, *j, *s, ciphertext, proof);
                if !valid {
                    step.notes
                        .push(drop_note(from, &msg, DropReason::BadProposal));
                    return;
                }
                self.store_proposal(epoch, *j, *s, ciphertext, proof, MessageKind::Propose, step);
                self.known_holder(epoch, *j, from);
                self.maybe_suggest(epoch, *j, step);
            }
            Body::Suggest {
                j,
                step: s,
                proposer,
                ciphertext,
                proof,
            } => {
                let valid = slot_ok(*j)
                    && self.epochs[&epoch].proposer(*j) == Some(*proposer)
                    && self.verify_proposal(epoch, *j, *s, ciphertext, proof);
                if !valid {
                    step.notes
                        .push(drop_note(from, &msg, DropReason::BadProposal));
                    return;
                }
                self.store_proposal(epoch, *j, *s, ciphertext, proof, MessageKind::Suggest, step);
                self.known_holder(epoch, *j, from);
                self.count_suggester(epoch, *j, from, step);
            }
            Body::ProposalEcho {
                j,
                step: s,
                ciphertext,
                proof,
            } => {
                let valid = slot_ok(*j) && self.verify_proposal(epoch, *j, *s, ciphertext, proof);
                if !valid {
                    step.notes
                        .push(drop_note(from, &msg, DropReason::BadProposal));
                    return;
                }
                self.store_proposal(
                    epoch,
                    *j,
                    *s,
                    ciphertext,
                    proof,
                    MessageKind::ProposalEcho,
                    step,
                );
                self.known_holder(epoch, *j, from);
            }
            Body::AbaEst { j, .. } | Body::AbaAux { j, .. } | Body::AbaCoinShare { j, .. } => {
                if !slot_ok(*j) {
                    step.notes
                        .push(drop_note(from, &msg, DropReason::Malformed));
                    return;
                }
                if let Body::AbaEst {
                    value: true, flags, ..
                } = msg.body
                {
                    if flags & ABA_FLAG_INPUT != 0 {
                        self.known_holder(epoch, *j, from);
                    }
                }
                let ctx = &self.ctx;
                let es = self.epochs.get_mut(&epoch).expect("epoch exists");
                let aba_step = es.abas[*j as usize].handle_message(ctx, from, &msg.body);
                if let Some(reason) = aba_step.dropped {
                    step.notes.push(drop_note(from, &msg, reason));
                }
                self.apply_aba(epoch, *j, aba_step, step);
            }
            Body::DecShare { j, ct_ref, share } => {
                if !slot_ok(*j) {
                    step.notes
                        .push(drop_note(from, &msg, DropReason::Malformed));
                    return;
                }
                let es = self.epochs.get_mut(&epoch).expect("epoch exists");
                let seen = es.dec_shares.get(j).is_some_and(|m| m.contains_key(&from));
                if !seen {
                    es.raw_dec_shares
                        .entry(*j)
                        .or_default()
                        .insert(from, (*ct_ref, share.clone()));
                }
                self.verify_dec_shares(epoch, *j, step);
                self.try_deliver(epoch, step);
            }
        }
    }

    fn on_ppb_ack(
        &mut self,
        epoch: u32,
        from: PartyId,
        s: u16,
        share: &[u8],
        msg: &Message,
        step: &mut Step,
    ) {
        let ctx = &self.ctx;
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        let Some(promotion) = es.promotion.as_mut() else {
            step.notes
                .push(drop_note(from, msg, DropReason::NotCommitteeMember));
            return;
        };
        let progress = match promotion.handle_ack(ctx, from, s, share) {
            Ok(p) => p,
            Err(_) => {
                step.notes.push(drop_note(from, msg, DropReason::Abandoned));
                return;
            }
        };
        let proof_note = |proof: &DeliveryProof| Note::ProofFormed {
            epoch,
            step: proof.instance.step,
            digest: proof.value_digest,
            signers: proof.sig.signer_set.iter().copied().collect(),
            sig: proof.sig.sig_bytes.clone(),
        };
        match progress {
            PromotionProgress::Pending | PromotionProgress::Ignored => {}
            PromotionProgress::Rejected(reason) => step.notes.push(drop_note(from, msg, reason)),
            PromotionProgress::StepComplete { proof, next } => {
                step.notes.push(proof_note(&proof));
                step.out.extend(next);
            }
            PromotionProgress::Complete(proof) => {
                step.notes.push(proof_note(&proof));
                if es.proposed {
                    return;
                }
                es.proposed = true;
                let j = es
                    .committee
                    .as_ref()
                    .and_then(|c| c.iter().position(|p| *p == ctx.me))
                    .expect("proposer is a member") as u16;
                let body = Body::Propose {
                    j,
                    step: proof.instance.step,
                    ciphertext: promotion.value().to_vec(),
                    proof: proof.sig.sig_bytes,
                };
                step.out
                    .push(Outgoing::all(Message::new(epoch, ctx.me, body)));
            }
        }
    }

    fn verify_proposal(&self, epoch: u32, j: u16, s: u16, ciphertext: &[u8], proof: &[u8]) -> bool {
        if s != self.config.promotion_steps {
            return false;
        }
        let Some(proposer) = self.epochs[&epoch].proposer(j) else {
            return false;
        };
        DeliveryProof::from_wire(
            PpbInstanceId::new(epoch, proposer, s),
            Digest::of(ciphertext),
            proof.to_vec(),
        )
        .verify(self.ctx.crypto.as_ref())
    }

    #[allow(clippy::too_many_arguments)]
    fn store_proposal(
        &mut self,
        epoch: u32,
        j: u16,
        s: u16,
        ciphertext: &[u8],
        proof: &[u8],
        via: MessageKind,
        step: &mut Step,
    ) {
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        if es.proposals.contains_key(&j) {
            return;
        }
        es.proposals.insert(
            j,
            HeldProposal {
                ciphertext: ciphertext.to_vec(),
                step: s,
                proof: proof.to_vec(),
            },
        );
        step.notes.push(Note::Held {
            epoch,
            j,
            digest: Digest::of(ciphertext),
            via,
        });
        self.verify_dec_shares(epoch, j, step);
        self.aba_input(epoch, j, true, step);
        // A slot may already be decided 1 and waiting for exactly this proposal.
        self.check_release(epoch, step);
    }

    fn held_ciphertext(&self, epoch: u32, j: u16) -> Option<Ciphertext> {
        let es = &self.epochs[&epoch];
        Some(Ciphertext {
            epoch,
            proposer: es.proposer(j)?,
            bytes: es.proposals.get(&j)?.ciphertext.clone(),
        })
    }

    /// Checks buffered decryption shares for slot `j` once its ciphertext is held.
    fn verify_dec_shares(&mut self, epoch: u32, j: u16, step: &mut Step) {
        let Some(ct) = self.held_ciphertext(epoch, j) else {
            return;
        };
        let ct_ref = ct.digest();
        let ctx = &self.ctx;
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        let Some(raw) = es.raw_dec_shares.remove(&j) else {
            return;
        };
        let verified = es.dec_shares.entry(j).or_default();
        for (party, (prefix, bytes)) in raw {
            let share = DecShare {
                party,
                ct_ref,
                share_bytes: bytes,
            };
            if prefix == ct_ref.prefix4() && ctx.crypto.verify_dec_share(&ct, &share) {
                verified.insert(party, share);
            } else {
                step.notes.push(Note::Dropped {
                    from: party,
                    kind: Some(MessageKind::DecShare),
                    epoch: Some(epoch),
                    reason: DropReason::BadDecShare,
                });
            }
        }
    }

    fn known_holder(&mut self, epoch: u32, j: u16, party: PartyId) {
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        es.known_holders.entry(j).or_default().insert(party);
    }

    fn maybe_suggest(&mut self, epoch: u32, j: u16, step: &mut Step) {
        let ctx = &self.ctx;
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        if es.my_suggestions.contains(&j) {
            return;
        }
        let allowed = match self.config.suggest_mode {
            SuggestMode::EveryProposal => true,
            SuggestMode::UntilQuorum => !es.zero_inputs_sent || es.my_suggestions.is_empty(),
        };
        if !allowed {
            return;
        }
        let proposer = es.proposer(j).expect("valid slot");
        let held = &es.proposals[&j];
        es.my_suggestions.insert(j);
        let body = Body::Suggest {
            j,
            step: held.step,
            proposer,
            ciphertext: held.ciphertext.clone(),
            proof: held.proof.clone(),
        };
        step.out
            .push(Outgoing::all(Message::new(epoch, ctx.me, body)));
    }

    fn count_suggester(&mut self, epoch: u32, j: u16, from: PartyId, step: &mut Step) {
        let quorum = self.ctx.params.quorum();
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        es.suggested_for.entry(j).or_default().insert(from);
        es.suggesters.insert(from);
        if es.zero_inputs_sent || es.suggesters.len() < quorum {
            return;
        }
        es.zero_inputs_sent = true;
        step.notes.push(Note::SuggesterQuorum {
            epoch,
            count: es.suggesters.len(),
        });
        let unseen: Vec<u16> = (0..es.kappa() as u16)
            .filter(|j| {
                !es.proposals.contains_key(j)
                    && es.suggested_for.get(j).is_none_or(BTreeSet::is_empty)
            })
            .collect();
        for j in unseen {
            self.aba_input(epoch, j, false, step);
        }
    }

    fn aba_input(&mut self, epoch: u32, j: u16, bit: bool, step: &mut Step) {
        let ctx = &self.ctx;
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        let aba = &mut es.abas[j as usize];
        let had_input = aba.input_taken().is_some();
        match aba.input(ctx, bit) {
            Ok(Some(aba_step)) => {
                step.notes.push(Note::AbaInput {
                    epoch,
                    j,
                    bit,
                    upgrade: had_input,
                });
                self.apply_aba(epoch, j, aba_step, step);
            }
            // No effect, or a 0 after a 1: the earlier 1 stands.
            Ok(None) | Err(_) => {}
        }
    }

    fn apply_aba(&mut self, epoch: u32, j: u16, aba_step: AbaStep, step: &mut Step) {
        step.out.extend(aba_step.out);
        let Some(bit) = aba_step.decided else {
            return;
        };
        let ctx = &self.ctx;
        let n = ctx.params.n();
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        es.decisions.insert(j, bit);
        step.notes.push(Note::Decided {
            epoch,
            j,
            bit,
            round: es.abas[j as usize].decision_round().unwrap_or(0),
        });
        if bit && !es.echoed.contains(&j) {
            if let Some(held) = es.proposals.get(&j) {
                es.echoed.insert(j);
                let holders = es.known_holders.get(&j);
                let body = Body::ProposalEcho {
                    j,
                    step: held.step,
                    ciphertext: held.ciphertext.clone(),
                    proof: held.proof.clone(),
                };
                for p in (0..n as u16).map(PartyId) {
                    if p == ctx.me || holders.is_some_and(|h| h.contains(&p)) {
                        continue;
                    }
                    step.out
                        .push(Outgoing::to(p, Message::new(epoch, ctx.me, body.clone())));
                }
            }
        }
        self.check_release(epoch, step);
    }

    /// Releases decryption shares once every slot is decided and every 1-slot held.
    fn check_release(&mut self, epoch: u32, step: &mut Step) {
        let ctx = &self.ctx;
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        if es.dec_released || es.decisions.len() < es.kappa() {
            return;
        }
        let set = es.decided_set();
        if !set.iter().all(|j| es.proposals.contains_key(j)) {
            return;
        }
        es.dec_released = true;
        for j in set {
            let ct = Ciphertext {
                epoch,
                proposer: es.proposer(j).expect("valid slot"),
                bytes: es.proposals[&j].ciphertext.clone(),
            };
            let share = ctx.crypto.decryption_share(ctx.me, &ct);
            step.notes.push(Note::DecShareRelease { epoch, j });
            step.out.push(Outgoing::all(Message::new(
                epoch,
                ctx.me,
                Body::DecShare {
                    j,
                    ct_ref: share.ct_ref.prefix4(),
                    share: share.share_bytes,
                },
            )));
        }
        self.try_deliver(epoch, step);
    }

    fn try_deliver(&mut self, epoch: u32, step: &mut Step) {
        let ctx = &self.ctx;
        let es = self.epochs.get_mut(&epoch).expect("epoch exists");
        if !es.dec_released || es.delivered {
            return;
        }
        let set = es.decided_set();
        for &j in &set {
            if es.plaintexts.contains_key(&j) {
                continue;
            }
            let ct = Ciphertext {
                epoch,
                proposer: es.proposer(j).expect("valid slot"),
                bytes: es.proposals[&j].ciphertext.clone(),
            };
            let valid: Vec<DecShare> = es
                .dec_shares
                .get(&j)
                .map(|m| m.values().cloned().collect())
                .unwrap_or_default();
            if valid.len() < ctx.thresholds.dec_t {
                continue;
            }
            if let Ok(pt) = ctx.crypto.combine_decryption(&ct, &valid) {
                es.plaintexts.insert(j, pt);
            }
        }
        if !set.iter().all(|j| es.plaintexts.contains_key(j)) {
            return;
        }
        es.delivered = true;
        let mut requests: Vec<Request> = Vec::new();
        let mut byte_total = 0u64;
        for j in &set {
            let pt = &es.plaintexts[j];
            byte_total += pt.len() as u64;
            // An undecodable batch can only come from a Byzantine proposer; every
            // honest party sees the same bytes and skips them alike.
            requests.extend(decode_batch(pt).unwrap_or_default());
        }
        requests.sort_by_cached_key(|r| (r.client_tag.clone(), Digest::of(&r.payload)));
        let mut seen = BTreeSet::new();
        requests.retain(|r| {
            !self.delivered_tags.contains(&r.client_tag) && seen.insert(r.client_tag.clone())
        });
        let block = DeliveredBlock {
            epoch,
            q: set.len(),
            decided_set: set,
            requests,
            byte_total,
        };
        self.delivered_tags.extend(seen);
        let tags = &self.delivered_tags;
        self.pending.retain(|r| !tags.contains(&r.client_tag));
        self.blocks.push(block.clone());
        step.notes.push(Note::Delivered(block));
        if epoch + 1 < self.config.epochs && self.current == Some(epoch) {
            let next = self
                .start_epoch(epoch + 1)
                .expect("next epoch follows a delivered one");
            step.extend(next);
        }
    }
}
