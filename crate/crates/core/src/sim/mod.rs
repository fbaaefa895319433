//! Deterministic discrete-event network simulation.
//!
//! All parties run in one thread. Every point-to-point transmission is a pending
//! [`Envelope`]; each step the [`Scheduler`] picks one to deliver, the recipient's
//! state machine handles it, and whatever it sends joins the pool. Time is the
//! delivery count. The run drains the pool completely, so every send has a matching
//! delivery, and the full history is returned as a [`Trace`]. Identical configs give
//! byte-identical traces.

pub mod byzantine;
pub mod scheduler;
pub mod trace;
pub mod workload;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::byzantine::{apply_byzantine, AdversaryProfile, Behavior};
pub use self::scheduler::{Envelope, Scheduler, SchedulerPolicy};
pub use self::trace::{BlockRecord, Event, EventKind, Outcome, Trace, TraceError};
pub use self::workload::Workload;

use crate::aba::AbaConfig;
use crate::acs::{Note, Party, PartyConfig, SuggestMode};
use crate::crypto::{DealerCrypto, Digest, ThresholdCrypto};
use crate::message::{Header, Outgoing};
use crate::params::{PartyId, ProtocolParams};
use crate::ppb::MAX_PROMOTION_STEPS;
use crate::PartyContext;

/// Default liveness cap per party and epoch.
pub const STEPS_PER_PARTY_EPOCH: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ProtocolParams,
    pub epochs: u32,
    pub scheduler: SchedulerPolicy,
    /// Faulty parties and what they do; at most `f` entries.
    pub byzantine: BTreeMap<PartyId, Behavior>,
    /// Deliveries after which the run counts as a liveness failure.
    pub max_steps: u64,
    pub promotion_steps: u16,
    pub suggest_mode: SuggestMode,
    pub aba: AbaConfig,
    pub workload: Workload,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("liveness timeout after {steps} steps: {reason}")]
    LivenessTimeout {
        steps: u64,
        reason: String,
        trace: Box<Trace>,
    },
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
}

impl SimConfig {
    /// Honest-only, fair scheduling, single-step P-PB and the default workload, with
    /// the liveness cap at `10_000 * n * epochs`.
    pub fn new(params: ProtocolParams, epochs: u32) -> Self {
        SimConfig {
            params,
            epochs,
            scheduler: SchedulerPolicy::Fair,
            byzantine: BTreeMap::new(),
            max_steps: default_max_steps(&params, epochs),
            promotion_steps: 1,
            suggest_mode: SuggestMode::default(),
            aba: AbaConfig::default(),
            workload: Workload::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let p = &self.params;
        let invalid = |s: String| Err(SimError::ConfigInvalid(s));
        let revalidated = ProtocolParams::new(
            p.n(),
            p.f(),
            p.kappa(),
            p.batch_size(),
            p.sec_param(),
            p.seed(),
        );
        if let Err(e) = revalidated {
            return invalid(e.to_string());
        }
        if self.byzantine.len() > p.f() {
            return invalid(format!(
                "{} Byzantine parties exceed f = {}",
                self.byzantine.len(),
                p.f()
            ));
        }
        if let Some(bad) = self.byzantine.keys().find(|q| !p.contains(**q)) {
            return invalid(format!("Byzantine party {bad} is not in [0, {})", p.n()));
        }
        if self.max_steps == 0 {
            return invalid("max_steps must be positive".into());
        }
        if self.epochs == 0 {
            return invalid("at least one epoch is required".into());
        }
        if self.promotion_steps == 0 || self.promotion_steps > MAX_PROMOTION_STEPS {
            return invalid(format!(
                "promotion_steps must be in [1, {MAX_PROMOTION_STEPS}]"
            ));
        }
        if let SchedulerPolicy::TargetedDelay { target, .. } = self.scheduler {
            if !p.contains(target) {
                return invalid(format!(
                    "scheduler target {target} is not in [0, {})",
                    p.n()
                ));
            }
        }
        Ok(())
    }

    pub fn is_honest(&self, party: PartyId) -> bool {
        !self.byzantine.contains_key(&party)
    }

    fn party_config(&self) -> PartyConfig {
        PartyConfig {
            epochs: self.epochs,
            promotion_steps: self.promotion_steps,
            suggest_mode: self.suggest_mode,
            aba: self.aba,
        }
    }
}

pub fn default_max_steps(params: &ProtocolParams, epochs: u32) -> u64 {
    STEPS_PER_PARTY_EPOCH * params.n() as u64 * u64::from(epochs)
}

/// Runs the configuration with a freshly dealt key set.
pub fn run_simulation(config: &SimConfig) -> Result<Trace, SimError> {
    config.validate()?;
    let crypto: Arc<dyn ThresholdCrypto> = Arc::new(DealerCrypto::deal(&config.params));
    run_with_crypto(config, crypto)
}

/// Runs the configuration with the given crypto provider (for example a dealer key
/// set loaded from a key file).
pub fn run_with_crypto(
    config: &SimConfig,
    crypto: Arc<dyn ThresholdCrypto>,
) -> Result<Trace, SimError> {
    config.validate()?;
    if crypto.n() != config.params.n() || crypto.sec_param() != config.params.sec_param() {
        return Err(SimError::ConfigInvalid(
            "crypto provider does not match n and K".into(),
        ));
    }
    Simulation::new(config, crypto).run()
}

struct Simulation<'a> {
    config: &'a SimConfig,
    crypto: Arc<dyn ThresholdCrypto>,
    parties: Vec<Party>,
    crashed: Vec<bool>,
    scheduler: Scheduler,
    adversary_rng: ChaCha8Rng,
    events: Vec<Event>,
    next_id: u64,
    t: u64,
    messages: u64,
    bytes: u64,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a SimConfig, crypto: Arc<dyn ThresholdCrypto>) -> Self {
        let params = config.params;
        let seed = params.seed();
        let parties = params
            .parties()
            .map(|me| {
                let ctx = PartyContext::new(me, params, crypto.clone());
                let requests = config.workload.requests_for(me, seed);
                Party::new(ctx, config.party_config(), requests)
            })
            .collect();
        Simulation {
            config,
            crypto,
            parties,
            crashed: vec![false; params.n()],
            scheduler: Scheduler::new(
                config.scheduler,
                ChaCha8Rng::seed_from_u64(seed ^ 0x5c4e_d000_0000_0001),
            ),
            adversary_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xad7e_0000_0000_0002),
            events: Vec::new(),
            next_id: 0,
            t: 0,
            messages: 0,
            bytes: 0,
        }
    }

    fn push(&mut self, party: PartyId, kind: EventKind) {
        self.events.push(Event {
            t: self.t,
            party,
            kind,
        });
    }

    /// Whether `party` is (now) crashed; records the crash the first time.
    fn check_crash(&mut self, party: PartyId) -> bool {
        let i = party.index();
        if self.crashed[i] {
            return true;
        }
        if let Some(Behavior::Crash { at_step }) = self.config.byzantine.get(&party) {
            if self.t >= *at_step {
                self.crashed[i] = true;
                self.push(party, EventKind::Crash);
                return true;
            }
        }
        false
    }

    fn emit(&mut self, from: PartyId, out: Vec<Outgoing>) {
        let n = self.config.params.n();
        let wires = match self.config.byzantine.get(&from) {
            Some(b) => apply_byzantine(
                b,
                from,
                n,
                self.crypto.as_ref(),
                &mut self.adversary_rng,
                out,
            ),
            None => byzantine::expand(n, out),
        };
        for w in wires {
            let header = Header::parse(&w.bytes).ok();
            let id = self.next_id;
            self.next_id += 1;
            self.messages += 1;
            self.bytes += w.bytes.len() as u64;
            self.push(
                from,
                EventKind::Send {
                    id,
                    to: w.to,
                    msg: header.map(|h| h.kind),
                    epoch: header.map(|h| h.epoch),
                    bytes: w.bytes.len() as u64,
                    digest: Digest::of(&w.bytes),
                    tampered: w.tampered,
                },
            );
            self.scheduler.push(Envelope {
                id,
                from,
                to: w.to,
                kind: header.map(|h| h.kind),
                epoch: header.map(|h| h.epoch),
                bytes: w.bytes,
            });
        }
    }

    fn record(&mut self, party: PartyId, notes: Vec<Note>, current: Option<&Envelope>) {
        for note in notes {
            let kind = match note {
                Note::Dropped {
                    from,
                    kind,
                    epoch,
                    reason,
                } => {
                    let msg_id = current
                        .filter(|e| e.from == from && e.kind == kind && e.epoch == epoch)
                        .map(|e| e.id);
                    EventKind::Drop {
                        msg_id,
                        from,
                        msg: kind,
                        epoch,
                        reason,
                    }
                }
                Note::Committee { epoch, members } => EventKind::Committee { epoch, members },
                Note::Acked {
                    epoch,
                    proposer,
                    step,
                    digest,
                } => EventKind::Ack {
                    epoch,
                    proposer,
                    step,
                    digest,
                },
                Note::ProofFormed {
                    epoch,
                    step,
                    digest,
                    signers,
                    sig,
                } => EventKind::Proof {
                    epoch,
                    step,
                    digest,
                    signers,
                    sig: hex::encode(sig),
                },
                Note::Held {
                    epoch,
                    j,
                    digest,
                    via,
                } => EventKind::Hold {
                    epoch,
                    j,
                    digest,
                    via,
                },
                Note::SuggesterQuorum { epoch, count } => EventKind::Suggesters { epoch, count },
                Note::AbaInput {
                    epoch,
                    j,
                    bit,
                    upgrade,
                } => EventKind::AbaInput {
                    epoch,
                    j,
                    bit,
                    upgrade,
                },
                Note::Decided {
                    epoch,
                    j,
                    bit,
                    round,
                } => EventKind::Decide {
                    epoch,
                    j,
                    bit,
                    round,
                },
                Note::DecShareRelease { epoch, j } => EventKind::DecShareRelease { epoch, j },
                Note::Delivered(block) => EventKind::DeliverBlock(BlockRecord::from(&block)),
            };
            self.push(party, kind);
        }
    }

    fn run(mut self) -> Result<Trace, SimError> {
        let parties: Vec<PartyId> = self.config.params.parties().collect();
        for &p in &parties {
            if self.check_crash(p) {
                continue;
            }
            let step = self.parties[p.index()]
                .start()
                .expect("first epoch starts once");
            self.record(p, step.notes, None);
            self.emit(p, step.out);
        }
        while let Some(envelope) = self.scheduler.next_delivery() {
            self.t += 1;
            if self.t > self.config.max_steps {
                let steps = self.config.max_steps;
                return Err(SimError::LivenessTimeout {
                    steps,
                    reason: format!("{} messages still pending", self.scheduler.len() + 1),
                    trace: Box::new(self.finish()),
                });
            }
            let to = envelope.to;
            self.push(
                to,
                EventKind::Deliver {
                    id: envelope.id,
                    from: envelope.from,
                    msg: envelope.kind,
                    epoch: envelope.epoch,
                    bytes: envelope.bytes.len() as u64,
                },
            );
            if self.check_crash(to) {
                continue;
            }
            let step = self.parties[to.index()].handle_message(envelope.from, &envelope.bytes);
            self.record(to, step.notes, Some(&envelope));
            self.emit(to, step.out);
        }
        let stalled: Vec<String> = parties
            .iter()
            .filter(|p| self.config.is_honest(**p))
            .filter(|p| self.parties[p.index()].delivered().len() < self.config.epochs as usize)
            .map(|p| p.to_string())
            .collect();
        let trace = self.finish();
        if stalled.is_empty() {
            Ok(trace)
        } else {
            Err(SimError::LivenessTimeout {
                steps: trace.outcome.steps,
                reason: format!("network quiescent but {} did not finish", stalled.join(",")),
                trace: Box::new(trace),
            })
        }
    }

    fn finish(self) -> Trace {
        let completed = self
            .config
            .params
            .parties()
            .filter(|p| self.config.is_honest(*p))
            .all(|p| self.parties[p.index()].delivered().len() == self.config.epochs as usize);
        Trace {
            config: self.config.clone(),
            events: self.events,
            outcome: Outcome {
                steps: self.t,
                completed,
                messages: self.messages,
                bytes: self.bytes,
            },
        }
    }
}
