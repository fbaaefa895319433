//! Stand-alone runs of a single agreement instance under a scheduler policy.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aba::{Aba, AbaConfig};
use crate::crypto::{DealerCrypto, ThresholdCrypto};
use crate::message::{Message, Outgoing, Target};
use crate::params::{PartyId, ProtocolParams};
use crate::sim::{Envelope, Scheduler, SchedulerPolicy};
use crate::PartyContext;

/// Deliveries after which a trial is abandoned as non-terminating.
const TRIAL_STEP_CAP: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AbaTrial {
    /// Per party: decision and decision round; `None` for silent parties or when
    /// the instance never decided.
    pub decisions: Vec<Option<(bool, u16)>>,
    pub inputs: Vec<Option<bool>>,
    /// The network drained before the step cap.
    pub quiescent: bool,
}

impl AbaTrial {
    fn live(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.inputs
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.map(|b| (i, b)))
    }

    /// Every live party decided.
    pub fn terminated(&self) -> bool {
        self.quiescent && self.live().all(|(i, _)| self.decisions[i].is_some())
    }

    /// No two live parties decided differently.
    pub fn agreement(&self) -> bool {
        let mut bits = self
            .live()
            .filter_map(|(i, _)| self.decisions[i].map(|d| d.0));
        match bits.next() {
            Some(first) => bits.all(|b| b == first),
            None => true,
        }
    }

    /// When all live inputs agree, that value is the only decision.
    pub fn validity(&self) -> bool {
        let mut inputs = self.live().map(|(_, b)| b);
        let Some(first) = inputs.next() else {
            return true;
        };
        if !inputs.all(|b| b == first) {
            return true;
        }
        self.live()
            .filter_map(|(i, _)| self.decisions[i])
            .all(|(b, _)| b == first)
    }

    /// Largest decision round among live parties.
    pub fn max_round(&self) -> Option<u16> {
        self.live()
            .filter_map(|(i, _)| self.decisions[i].map(|d| d.1))
            .max()
    }

    pub fn mean_round(&self) -> Option<f64> {
        let rounds: Vec<f64> = self
            .live()
            .filter_map(|(i, _)| self.decisions[i].map(|d| f64::from(d.1)))
            .collect();
        (!rounds.is_empty()).then(|| rounds.iter().sum::<f64>() / rounds.len() as f64)
    }
}

/// Runs one instance among `3f + 1` parties. `inputs[i] = None` makes party `i`
/// silent for the whole run (it receives but never sends). Messages travel encoded
/// and are decoded on delivery.
pub fn run_aba_trial(
    f: usize,
    inputs: &[Option<bool>],
    policy: SchedulerPolicy,
    config: AbaConfig,
    seed: u64,
) -> AbaTrial {
    let params = ProtocolParams::with_fault_bound(f, 1, 32, seed).expect("valid f");
    let n = params.n();
    assert_eq!(inputs.len(), n, "one input slot per party");
    let crypto: Arc<dyn ThresholdCrypto> = Arc::new(DealerCrypto::deal(&params));
    let ctxs: Vec<PartyContext> = params
        .parties()
        .map(|me| PartyContext::new(me, params, crypto.clone()))
        .collect();
    let mut abas: Vec<Aba> = (0..n).map(|_| Aba::new(0, 0, config)).collect();
    let mut sched = Scheduler::new(
        policy,
        ChaCha8Rng::seed_from_u64(seed ^ 0xaba0_0000_0000_0003),
    );
    let mut next_id = 0u64;
    let mut push = |sched: &mut Scheduler, from: usize, out: Vec<Outgoing>| {
        for o in out {
            let targets: Vec<PartyId> = match o.target {
                Target::All => params.parties().collect(),
                Target::Party(p) => vec![p],
            };
            let bytes = o.message.encode();
            for to in targets {
                sched.push(Envelope {
                    id: next_id,
                    from: PartyId(from as u16),
                    to,
                    kind: Some(o.message.kind()),
                    epoch: Some(0),
                    bytes: bytes.clone(),
                });
                next_id += 1;
            }
        }
    };
    for (i, input) in inputs.iter().enumerate() {
        if let Some(b) = input {
            if let Ok(Some(step)) = abas[i].input(&ctxs[i], *b) {
                push(&mut sched, i, step.out);
            }
        }
    }
    let mut steps = 0u64;
    while let Some(env) = sched.next_delivery() {
        steps += 1;
        if steps > TRIAL_STEP_CAP {
            break;
        }
        let to = env.to.index();
        if inputs[to].is_none() {
            continue;
        }
        let Ok(msg) = Message::decode(&env.bytes, params.sec_param()) else {
            continue;
        };
        let step = abas[to].handle_message(&ctxs[to], env.from, &msg.body);
        push(&mut sched, to, step.out);
    }
    AbaTrial {
        decisions: abas
            .iter()
            .map(|a| a.decided().zip(a.decision_round()))
            .collect(),
        inputs: inputs.to_vec(),
        quiescent: sched.is_empty(),
    }
}
