//! Property checks over a finished [`Trace`].
//!
//! Each property is a [`Flag`]; a failed flag carries the index (into
//! `trace.events`) of the first event found to contradict it.
//!
//! The two proposal-reach lemmas are evaluated at fixed instants of each epoch:
//!
//! * **lemma 1**, at the first event after which every honest party stores at least
//!   one full proposal: some proposal is stored by at least two parties;
//! * **lemma 2**, at the first event at which an honest party has heard `n - f`
//!   distinct suggesters: some proposal has *reached* `2f + 1` parties, where a party
//!   has been reached by a value once it acknowledged it in P-PB, stores it as a full
//!   proposal, or is its proposer.
//!
//! `lemma2_full` is the stricter diagnostic that only counts stored full proposals.
//! It is reported but not part of [`LemmaReport::all_hold`]: schedules exist where
//! it fails (see the crate README).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::acs::request_digest;
use crate::crypto::{DealerCrypto, Digest};
use crate::message::MessageKind;
use crate::params::PartyId;
use crate::ppb::{DeliveryProof, PpbInstanceId};
use crate::sim::{Behavior, BlockRecord, EventKind, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("trace malformed at event {index}: {reason}")]
    TraceMalformed { index: usize, reason: String },
}

fn malformed(index: usize, reason: impl Into<String>) -> CheckError {
    CheckError::TraceMalformed {
        index,
        reason: reason.into(),
    }
}

/// Outcome of one property check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Flag {
    pub holds: bool,
    /// Index into `trace.events` of the first counterexample found.
    pub counterexample: Option<usize>,
    pub detail: Option<String>,
}

impl Flag {
    fn new() -> Self {
        Flag {
            holds: true,
            counterexample: None,
            detail: None,
        }
    }

    /// Records a violation; only the first one is kept.
    fn fail(&mut self, index: usize, detail: impl Into<String>) {
        if self.holds {
            self.holds = false;
            self.counterexample = Some(index);
            self.detail = Some(detail.into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub agreement: Flag,
    pub totality: Flag,
    pub validity: Flag,
    /// `1 <= q <= kappa` for every delivered block.
    pub q_bound: Flag,
    /// Included proposals carry verifying proofs with `2f + 1` signers, `f + 1` of
    /// them honest and backed by their own acknowledgement events.
    pub proof_quorum: Flag,
    /// No two different values are proven, stored or acknowledged for one P-PB
    /// instance.
    pub ppb_uniqueness: Flag,
    pub aba_agreement: Flag,
    pub aba_validity: Flag,
    pub lemma1: Flag,
    pub lemma2: Flag,
    /// No decryption share leaves an honest party before all its decisions.
    pub censorship: Flag,
    /// Every send is delivered; honest messages are never dropped; every message of
    /// a garbage-sending party is dropped by its honest recipients.
    pub network: Flag,
    /// Diagnostic only: lemma 2 counting stored full proposals alone.
    pub lemma2_full: Flag,
    /// Diagnostic only: no slot decided 0 although some honest party input 1.
    /// Standard binary agreement does not promise this.
    pub biased_validity: Flag,
    /// Mean decision round over honest decisions.
    pub mean_aba_rounds: f64,
}

impl LemmaReport {
    /// The enforced flags, by name.
    pub fn flags(&self) -> [(&'static str, &Flag); 12] {
        [
            ("agreement", &self.agreement),
            ("totality", &self.totality),
            ("validity", &self.validity),
            ("q_bound", &self.q_bound),
            ("proof_quorum", &self.proof_quorum),
            ("ppb_uniqueness", &self.ppb_uniqueness),
            ("aba_agreement", &self.aba_agreement),
            ("aba_validity", &self.aba_validity),
            ("lemma1", &self.lemma1),
            ("lemma2", &self.lemma2),
            ("censorship", &self.censorship),
            ("network", &self.network),
        ]
    }

    pub fn all_hold(&self) -> bool {
        self.flags().iter().all(|(_, f)| f.holds)
    }

    pub fn violations(&self) -> Vec<(&'static str, &Flag)> {
        self.flags().into_iter().filter(|(_, f)| !f.holds).collect()
    }
}

/// Per-epoch view of who had been reached by which value, by event index.
#[derive(Default)]
struct Reach {
    /// (index, party, slot, digest) of full-proposal storage.
    holds: Vec<(usize, PartyId, u16, Digest)>,
    /// (index, party, proposer, digest) of P-PB acknowledgements.
    acks: Vec<(usize, PartyId, PartyId, Digest)>,
    /// (index, proposer, digest) of delivery proofs formed.
    proofs: Vec<(usize, PartyId, Digest)>,
}

/// Honest blocks by party, then epoch, with their event index.
type BlocksByParty<'a> = BTreeMap<PartyId, BTreeMap<u32, (usize, &'a BlockRecord)>>;

pub fn check_lemmas(trace: &Trace) -> Result<LemmaReport, CheckError> {
    Checker::new(trace)?.run()
}

struct Checker<'a> {
    trace: &'a Trace,
    n: usize,
    f: usize,
    kappa: usize,
    epochs: u32,
    honest: BTreeSet<PartyId>,
    committees: BTreeMap<u32, Vec<PartyId>>,
    last: usize,
}

impl<'a> Checker<'a> {
    fn new(trace: &'a Trace) -> Result<Self, CheckError> {
        let params = trace.config.params;
        let n = params.n();
        let mut committees: BTreeMap<u32, Vec<PartyId>> = BTreeMap::new();
        for (i, e) in trace.events.iter().enumerate() {
            if e.party.index() >= n {
                return Err(malformed(i, format!("party {} out of range", e.party)));
            }
            if let EventKind::Committee { epoch, members } = &e.kind {
                if !trace.is_honest(e.party) {
                    continue;
                }
                if members.len() != params.kappa() {
                    return Err(malformed(i, "committee of the wrong size"));
                }
                if let Some(prev) = committees.get(epoch) {
                    if prev != members {
                        return Err(malformed(
                            i,
                            format!("honest committees differ in epoch {epoch}"),
                        ));
                    }
                } else {
                    committees.insert(*epoch, members.clone());
                }
            }
        }
        Ok(Checker {
            trace,
            n,
            f: params.f(),
            kappa: params.kappa(),
            epochs: trace.config.epochs,
            honest: trace.honest_parties().into_iter().collect(),
            committees,
            last: trace.events.len().saturating_sub(1),
        })
    }

    fn run(&self) -> Result<LemmaReport, CheckError> {
        let blocks = self.honest_blocks()?;
        let mut report = LemmaReport {
            agreement: Flag::new(),
            totality: Flag::new(),
            validity: Flag::new(),
            q_bound: Flag::new(),
            proof_quorum: Flag::new(),
            ppb_uniqueness: Flag::new(),
            aba_agreement: Flag::new(),
            aba_validity: Flag::new(),
            lemma1: Flag::new(),
            lemma2: Flag::new(),
            censorship: Flag::new(),
            network: Flag::new(),
            lemma2_full: Flag::new(),
            biased_validity: Flag::new(),
            mean_aba_rounds: 0.0,
        };
        self.agreement_and_totality(&blocks, &mut report);
        self.validity(&blocks, &mut report);
        self.proof_quorum(&blocks, &mut report.proof_quorum);
        self.uniqueness(&mut report.ppb_uniqueness);
        self.aba(&mut report);
        self.lemmas(&mut report);
        self.censorship(&mut report.censorship);
        self.network(&mut report.network)?;
        Ok(report)
    }

    fn honest_blocks(&self) -> Result<BlocksByParty<'a>, CheckError> {
        let mut out: BlocksByParty<'_> =
            self.honest.iter().map(|p| (*p, BTreeMap::new())).collect();
        for (i, e) in self.trace.events.iter().enumerate() {
            if let EventKind::DeliverBlock(b) = &e.kind {
                if !self.honest.contains(&e.party) {
                    continue;
                }
                let mine = out.get_mut(&e.party).expect("honest party");
                if mine.insert(b.epoch, (i, b)).is_some() {
                    return Err(malformed(
                        i,
                        format!("{} delivered epoch {} twice", e.party, b.epoch),
                    ));
                }
            }
        }
        Ok(out)
    }

    fn agreement_and_totality(&self, blocks: &BlocksByParty<'_>, report: &mut LemmaReport) {
        // Compare in event order so the reported index is the first disagreeing block.
        let mut in_order: Vec<(usize, PartyId, u32, &BlockRecord)> = blocks
            .iter()
            .flat_map(|(p, mine)| mine.iter().map(|(e, (i, b))| (*i, *p, *e, *b)))
            .collect();
        in_order.sort_by_key(|x| x.0);
        let mut reference: BTreeMap<u32, (PartyId, &BlockRecord)> = BTreeMap::new();
        for (i, p, epoch, b) in in_order {
            match reference.get(&epoch) {
                Some((q, r)) if *r != b => report.agreement.fail(
                    i,
                    format!("{p} and {q} delivered different blocks in epoch {epoch}"),
                ),
                Some(_) => {}
                None => {
                    reference.insert(epoch, (p, b));
                }
            }
        }
        let expected: BTreeSet<u32> = (0..self.epochs).collect();
        for (p, mine) in blocks {
            let got: BTreeSet<u32> = mine.keys().copied().collect();
            if got != expected {
                report.totality.fail(
                    self.last,
                    format!("{p} delivered {} of {} epochs", got.len(), self.epochs),
                );
            }
        }
        if !self.trace.outcome.completed {
            report.totality.fail(self.last, "run did not complete");
        }
    }

    fn validity(&self, blocks: &BlocksByParty<'_>, report: &mut LemmaReport) {
        let cfg = &self.trace.config;
        let known: HashSet<Digest> = cfg
            .params
            .parties()
            .flat_map(|p| cfg.workload.requests_for(p, cfg.params.seed()))
            .map(|r| request_digest(&r))
            .collect();
        let decided_ones = self.decided_ones();
        for (p, mine) in blocks {
            let mut seen: HashSet<Digest> = HashSet::new();
            for (epoch, (i, b)) in mine {
                if b.q < 1 || b.q > self.kappa {
                    report
                        .q_bound
                        .fail(*i, format!("q = {} outside [1, {}]", b.q, self.kappa));
                }
                if b.q != b.decided_set.len()
                    || !b.decided_set.windows(2).all(|w| w[0] < w[1])
                    || b.decided_set.iter().any(|j| *j as usize >= self.kappa)
                {
                    report.validity.fail(*i, "inconsistent decided set");
                }
                let ones = decided_ones.get(&(*p, *epoch)).cloned().unwrap_or_default();
                if ones != b.decided_set.iter().copied().collect::<BTreeSet<u16>>() {
                    report.validity.fail(
                        *i,
                        format!("{p}'s block differs from its agreement outputs"),
                    );
                }
                for d in &b.requests {
                    if !known.contains(d) {
                        report
                            .validity
                            .fail(*i, format!("request {} was never submitted", d.short_hex()));
                    }
                    if !seen.insert(*d) {
                        report
                            .validity
                            .fail(*i, format!("request {} delivered twice", d.short_hex()));
                    }
                }
            }
        }
    }

    /// Slots each honest party decided 1, by (party, epoch).
    fn decided_ones(&self) -> HashMap<(PartyId, u32), BTreeSet<u16>> {
        let mut out: HashMap<(PartyId, u32), BTreeSet<u16>> = HashMap::new();
        for e in &self.trace.events {
            if let EventKind::Decide {
                epoch,
                j,
                bit: true,
                ..
            } = e.kind
            {
                if self.honest.contains(&e.party) {
                    out.entry((e.party, epoch)).or_default().insert(j);
                }
            }
        }
        out
    }

    fn proof_quorum(&self, blocks: &BlocksByParty<'_>, flag: &mut Flag) {
        let steps = self.trace.config.promotion_steps;
        let crypto = DealerCrypto::deal(&self.trace.config.params);
        let mut held: HashMap<(u32, u16), Digest> = HashMap::new();
        let mut acks: HashMap<(PartyId, u32, PartyId, u16, Digest), usize> = HashMap::new();
        type ProofRef<'b> = (usize, &'b Vec<PartyId>, &'b String);
        let mut proofs: HashMap<(PartyId, u32, u16, Digest), ProofRef<'_>> = HashMap::new();
        for (i, e) in self.trace.events.iter().enumerate() {
            match &e.kind {
                EventKind::Hold {
                    epoch, j, digest, ..
                } if self.honest.contains(&e.party) => {
                    held.entry((*epoch, *j)).or_insert(*digest);
                }
                EventKind::Ack {
                    epoch,
                    proposer,
                    step,
                    digest,
                } => {
                    acks.entry((e.party, *epoch, *proposer, *step, *digest))
                        .or_insert(i);
                }
                EventKind::Proof {
                    epoch,
                    step,
                    digest,
                    signers,
                    sig,
                } => {
                    proofs
                        .entry((e.party, *epoch, *step, *digest))
                        .or_insert((i, signers, sig));
                }
                _ => {}
            }
        }
        let mut checked: HashSet<(u32, u16)> = HashSet::new();
        for mine in blocks.values() {
            for (epoch, (i, b)) in mine {
                for &j in &b.decided_set {
                    if !checked.insert((*epoch, j)) {
                        continue;
                    }
                    let Some(proposer) = self.committees.get(epoch).and_then(|c| c.get(j as usize))
                    else {
                        flag.fail(*i, format!("no committee known for epoch {epoch}"));
                        continue;
                    };
                    let Some(digest) = held.get(&(*epoch, j)) else {
                        flag.fail(
                            *i,
                            format!("slot {j} of epoch {epoch} included but never held"),
                        );
                        continue;
                    };
                    let Some((pi, signers, sig)) = proofs.get(&(*proposer, *epoch, steps, *digest))
                    else {
                        flag.fail(*i, format!("no proof formed for slot {j} of epoch {epoch}"));
                        continue;
                    };
                    let distinct: BTreeSet<PartyId> = signers.iter().copied().collect();
                    if distinct.len() < 2 * self.f + 1 || distinct.len() != signers.len() {
                        flag.fail(*pi, format!("{} distinct signers", distinct.len()));
                    }
                    let verifies = hex::decode(sig).is_ok_and(|sig| {
                        DeliveryProof::from_wire(
                            PpbInstanceId::new(*epoch, *proposer, steps),
                            *digest,
                            sig,
                        )
                        .verify(&crypto)
                    });
                    if !verifies {
                        flag.fail(*pi, "delivery proof does not verify");
                    }
                    let backed = distinct
                        .iter()
                        .filter(|s| self.honest.contains(s))
                        .filter(|s| {
                            **s == *proposer
                                || acks
                                    .get(&(**s, *epoch, *proposer, steps, *digest))
                                    .is_some_and(|ai| ai < pi)
                        })
                        .count();
                    if backed < self.f + 1 {
                        flag.fail(
                            *pi,
                            format!("only {backed} honest signers with acknowledgements"),
                        );
                    }
                }
            }
        }
    }

    fn uniqueness(&self, flag: &mut Flag) {
        let mut proofs: HashMap<(u32, PartyId, u16), Digest> = HashMap::new();
        let mut holds: HashMap<(u32, u16), Digest> = HashMap::new();
        let mut acks: HashMap<(PartyId, u32, PartyId, u16), Digest> = HashMap::new();
        for (i, e) in self.trace.events.iter().enumerate() {
            match &e.kind {
                EventKind::Proof {
                    epoch,
                    step,
                    digest,
                    ..
                } => {
                    let d = proofs.entry((*epoch, e.party, *step)).or_insert(*digest);
                    if d != digest {
                        flag.fail(i, format!("two proofs for {}'s step {step}", e.party));
                    }
                }
                EventKind::Hold {
                    epoch, j, digest, ..
                } if self.honest.contains(&e.party) => {
                    let d = holds.entry((*epoch, *j)).or_insert(*digest);
                    if d != digest {
                        flag.fail(i, format!("two proven values stored for slot {j}"));
                    }
                }
                EventKind::Ack {
                    epoch,
                    proposer,
                    step,
                    digest,
                } if self.honest.contains(&e.party) => {
                    let d = acks
                        .entry((e.party, *epoch, *proposer, *step))
                        .or_insert(*digest);
                    if d != digest {
                        flag.fail(i, format!("{} acknowledged two values", e.party));
                    }
                }
                _ => {}
            }
        }
    }

    fn aba(&self, report: &mut LemmaReport) {
        let mut decisions: HashMap<(u32, u16), bool> = HashMap::new();
        let mut decided_by: HashSet<(PartyId, u32, u16)> = HashSet::new();
        let mut inputs: HashMap<(u32, u16), [bool; 2]> = HashMap::new();
        let mut rounds = Vec::new();
        for (i, e) in self.trace.events.iter().enumerate() {
            if !self.honest.contains(&e.party) {
                continue;
            }
            match e.kind {
                EventKind::AbaInput { epoch, j, bit, .. } => {
                    inputs.entry((epoch, j)).or_default()[usize::from(bit)] = true;
                }
                EventKind::Decide {
                    epoch,
                    j,
                    bit,
                    round,
                } => {
                    rounds.push(f64::from(round));
                    if !decided_by.insert((e.party, epoch, j)) {
                        report
                            .aba_agreement
                            .fail(i, format!("{} decided slot {j} twice", e.party));
                    }
                    let first = *decisions.entry((epoch, j)).or_insert(bit);
                    if first != bit {
                        report
                            .aba_agreement
                            .fail(i, format!("slot {j} of epoch {epoch} decided both ways"));
                    }
                }
                _ => {}
            }
        }
        // Unanimous honest inputs must be decided.
        for (i, e) in self.trace.events.iter().enumerate() {
            if let EventKind::Decide { epoch, j, bit, .. } = e.kind {
                if !self.honest.contains(&e.party) {
                    continue;
                }
                if let Some(seen) = inputs.get(&(epoch, j)) {
                    if !bit && seen[1] {
                        report.biased_validity.fail(
                            i,
                            format!("slot {j} of epoch {epoch} decided 0 despite an honest 1"),
                        );
                    }
                    if !seen[usize::from(bit)] {
                        report.aba_validity.fail(
                            i,
                            format!("slot {j} decided {bit} against unanimous honest input"),
                        );
                    }
                }
            }
        }
        if !rounds.is_empty() {
            report.mean_aba_rounds = rounds.iter().sum::<f64>() / rounds.len() as f64;
        }
    }

    fn lemmas(&self, report: &mut LemmaReport) {
        let mut reach: BTreeMap<u32, Reach> = BTreeMap::new();
        let mut first_quorum: BTreeMap<u32, usize> = BTreeMap::new();
        let mut all_hold_at: BTreeMap<u32, usize> = BTreeMap::new();
        let mut holding: BTreeMap<u32, BTreeSet<PartyId>> = BTreeMap::new();
        for (i, e) in self.trace.events.iter().enumerate() {
            match &e.kind {
                EventKind::Hold {
                    epoch, j, digest, ..
                } => {
                    reach
                        .entry(*epoch)
                        .or_default()
                        .holds
                        .push((i, e.party, *j, *digest));
                    if self.honest.contains(&e.party) {
                        let set = holding.entry(*epoch).or_default();
                        set.insert(e.party);
                        if set.len() == self.honest.len() {
                            all_hold_at.entry(*epoch).or_insert(i);
                        }
                    }
                }
                EventKind::Ack {
                    epoch,
                    proposer,
                    digest,
                    ..
                } => reach
                    .entry(*epoch)
                    .or_default()
                    .acks
                    .push((i, e.party, *proposer, *digest)),
                EventKind::Proof { epoch, digest, .. } => reach
                    .entry(*epoch)
                    .or_default()
                    .proofs
                    .push((i, e.party, *digest)),
                EventKind::Suggesters { epoch, .. } if self.honest.contains(&e.party) => {
                    first_quorum.entry(*epoch).or_insert(i);
                }
                _ => {}
            }
        }
        let empty = Reach::default();
        for epoch in 0..self.epochs {
            let r = reach.get(&epoch).unwrap_or(&empty);
            match all_hold_at.get(&epoch) {
                None => report.lemma1.fail(
                    self.last,
                    format!("epoch {epoch}: some honest party never stored a proposal"),
                ),
                Some(&at) => {
                    let best = self.max_holders(r, at, false, epoch);
                    if best < 2 {
                        report.lemma1.fail(
                            at,
                            format!("epoch {epoch}: no proposal stored by two parties"),
                        );
                    }
                }
            }
            match first_quorum.get(&epoch) {
                None => {
                    let detail = format!("epoch {epoch}: no honest party reached n - f suggesters");
                    report.lemma2.fail(self.last, detail.clone());
                    report.lemma2_full.fail(self.last, detail);
                }
                Some(&at) => {
                    let need = 2 * self.f + 1;
                    let best = self.max_holders(r, at, true, epoch);
                    if best < need {
                        report.lemma2.fail(
                            at,
                            format!("epoch {epoch}: best proposal reached {best} < {need} parties"),
                        );
                    }
                    let full = self.max_holders(r, at, false, epoch);
                    if full < need {
                        report.lemma2_full.fail(
                            at,
                            format!(
                                "epoch {epoch}: best proposal stored by {full} < {need} parties"
                            ),
                        );
                    }
                }
            }
        }
    }

    /// Largest number of parties reached by a single (slot, value) strictly before
    /// event `at` (and including it). With `received` false only stored full
    /// proposals count.
    fn max_holders(&self, r: &Reach, at: usize, received: bool, epoch: u32) -> usize {
        let committee = self.committees.get(&epoch);
        let slot_of = |proposer: PartyId| {
            committee.and_then(|c| c.iter().position(|p| *p == proposer).map(|j| j as u16))
        };
        let mut reached: HashMap<(u16, Digest), BTreeSet<PartyId>> = HashMap::new();
        for (i, party, j, d) in &r.holds {
            if *i <= at {
                reached.entry((*j, *d)).or_default().insert(*party);
            }
        }
        if received {
            for (i, party, proposer, d) in &r.acks {
                if *i <= at {
                    if let Some(j) = slot_of(*proposer) {
                        reached.entry((j, *d)).or_default().insert(*party);
                    }
                }
            }
            for (i, proposer, d) in &r.proofs {
                if *i <= at {
                    if let Some(j) = slot_of(*proposer) {
                        reached.entry((j, *d)).or_default().insert(*proposer);
                    }
                }
            }
        }
        reached.values().map(BTreeSet::len).max().unwrap_or(0)
    }

    fn censorship(&self, flag: &mut Flag) {
        let mut decided: HashMap<(PartyId, u32), BTreeSet<u16>> = HashMap::new();
        for (i, e) in self.trace.events.iter().enumerate() {
            if !self.honest.contains(&e.party) {
                continue;
            }
            let released_epoch = match e.kind {
                EventKind::Decide { epoch, j, .. } => {
                    decided.entry((e.party, epoch)).or_default().insert(j);
                    None
                }
                EventKind::DecShareRelease { epoch, .. } => Some(epoch),
                EventKind::Send {
                    msg: Some(MessageKind::DecShare),
                    epoch: Some(epoch),
                    ..
                } => Some(epoch),
                _ => None,
            };
            if let Some(epoch) = released_epoch {
                let count = decided.get(&(e.party, epoch)).map_or(0, BTreeSet::len);
                if count < self.kappa {
                    flag.fail(
                        i,
                        format!(
                            "{} released a decryption share in epoch {epoch} after {count} of {} decisions",
                            e.party, self.kappa
                        ),
                    );
                }
            }
        }
    }

    fn network(&self, flag: &mut Flag) -> Result<(), CheckError> {
        struct Sent {
            index: usize,
            from: PartyId,
            to: PartyId,
            tampered: bool,
        }
        let cfg = &self.trace.config;
        let mut sent: HashMap<u64, Sent> = HashMap::new();
        let mut delivered: HashSet<u64> = HashSet::new();
        // (receiver, sender, kind, epoch) -> (deliveries minus drops, first index),
        // garbage senders only
        type Stream = (PartyId, PartyId, Option<MessageKind>, Option<u32>);
        let mut garbage: BTreeMap<Stream, (i64, usize)> = BTreeMap::new();
        let is_garbage = |p: &PartyId| matches!(cfg.byzantine.get(p), Some(Behavior::Garbage));
        for (i, e) in self.trace.events.iter().enumerate() {
            match &e.kind {
                EventKind::Send {
                    id, to, tampered, ..
                } => {
                    if to.index() >= self.n {
                        return Err(malformed(i, "send to unknown party"));
                    }
                    if sent
                        .insert(
                            *id,
                            Sent {
                                index: i,
                                from: e.party,
                                to: *to,
                                tampered: *tampered,
                            },
                        )
                        .is_some()
                    {
                        return Err(malformed(i, format!("message id {id} reused")));
                    }
                }
                EventKind::Deliver {
                    id,
                    from,
                    msg,
                    epoch,
                    ..
                } => {
                    let Some(s) = sent.get(id) else {
                        return Err(malformed(i, format!("delivery of unsent message {id}")));
                    };
                    if s.to != e.party || s.from != *from || !delivered.insert(*id) {
                        return Err(malformed(
                            i,
                            format!("delivery of message {id} does not match its send"),
                        ));
                    }
                    if self.honest.contains(&e.party) && is_garbage(from) && *from != e.party {
                        let c = garbage
                            .entry((e.party, *from, *msg, *epoch))
                            .or_insert((0, i));
                        c.0 += 1;
                    }
                }
                EventKind::Drop {
                    msg_id,
                    from,
                    msg,
                    epoch,
                    ..
                } if self.honest.contains(&e.party) => {
                    if let Some(s) = msg_id.and_then(|id| sent.get(&id)) {
                        if self.honest.contains(&s.from) && !s.tampered {
                            flag.fail(i, format!("honest message {} dropped", msg_id.unwrap_or(0)));
                        }
                    }
                    if is_garbage(from) {
                        let c = garbage
                            .entry((e.party, *from, *msg, *epoch))
                            .or_insert((0, i));
                        c.0 -= 1;
                    }
                }
                _ => {}
            }
        }
        for (id, s) in &sent {
            if !delivered.contains(id) {
                flag.fail(s.index, format!("message {id} never delivered"));
            }
        }
        for ((to, from, kind, epoch), (balance, index)) in garbage {
            if balance > 0 {
                let kind = kind.map_or("?".to_string(), |k| k.to_string());
                flag.fail(
                    index,
                    format!("{balance} garbage {kind} from {from} to {to} in epoch {epoch:?} not dropped"),
                );
            }
        }
        Ok(())
    }
}
