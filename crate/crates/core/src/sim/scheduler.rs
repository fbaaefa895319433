//! Delivery-order policies for in-flight messages.
//!
//! Age is counted in overtakes: the number of messages sent *after* a message that
//! were delivered while it was still pending. A policy with an age bound forces the
//! oldest pending message out as soon as its age reaches the bound, so no message
//! is ever overtaken more than `age_bound` times. The oldest pending message always
//! has the largest age, which makes the check O(1).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::message::MessageKind;
use crate::params::PartyId;

/// Default age bound for adversarial policies.
pub const DEFAULT_AGE_BOUND: u64 = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SchedulerPolicy {
    /// Uniformly random choice among pending messages.
    Fair,
    /// Starves messages addressed to `target` (optionally only of one kind) while
    /// anything else is pending, up to the age bound.
    TargetedDelay {
        target: PartyId,
        kind: Option<MessageKind>,
        age_bound: u64,
    },
    /// Newest message first, up to the age bound.
    SendOrderAdversarial { age_bound: u64 },
}

impl SchedulerPolicy {
    pub fn age_bound(&self) -> Option<u64> {
        match self {
            SchedulerPolicy::Fair => None,
            SchedulerPolicy::TargetedDelay { age_bound, .. }
            | SchedulerPolicy::SendOrderAdversarial { age_bound } => Some(*age_bound),
        }
    }

    fn delays(&self, to: PartyId, kind: Option<MessageKind>) -> bool {
        match self {
            SchedulerPolicy::TargetedDelay {
                target, kind: k, ..
            } => *target == to && k.is_none_or(|k| Some(k) == kind),
            _ => false,
        }
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerPolicy::Fair => f.write_str("fair"),
            SchedulerPolicy::TargetedDelay {
                target,
                kind,
                age_bound,
            } => {
                write!(f, "targeted-delay:{}", target.0)?;
                match kind {
                    Some(k) => write!(f, ":{k}")?,
                    None => f.write_str(":ANY")?,
                }
                write!(f, ":{age_bound}")
            }
            SchedulerPolicy::SendOrderAdversarial { age_bound } => {
                write!(f, "send-order:{age_bound}")
            }
        }
    }
}

impl FromStr for SchedulerPolicy {
    type Err = String;

    /// Accepts `fair`, `targeted-delay[:PARTY[:KIND|ANY[:AGE]]]` and `send-order[:AGE]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let num = |p: Option<&str>, default: u64| -> Result<u64, String> {
            p.map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| format!("bad number {v:?} in scheduler {s:?}"))
            })
        };
        let policy = match name {
            "fair" => SchedulerPolicy::Fair,
            "targeted-delay" => {
                let target = num(parts.next(), 0)?;
                let target = u16::try_from(target).map_err(|_| format!("bad party in {s:?}"))?;
                let kind = match parts.next() {
                    None | Some("ANY") | Some("any") => None,
                    Some(k) => Some(
                        MessageKind::parse(k)
                            .ok_or_else(|| format!("unknown message kind {k:?}"))?,
                    ),
                };
                SchedulerPolicy::TargetedDelay {
                    target: PartyId(target),
                    kind,
                    age_bound: num(parts.next(), DEFAULT_AGE_BOUND)?,
                }
            }
            "send-order" => SchedulerPolicy::SendOrderAdversarial {
                age_bound: num(parts.next(), DEFAULT_AGE_BOUND)?,
            },
            _ => return Err(format!("unknown scheduler {s:?}")),
        };
        if parts.next().is_some() {
            return Err(format!("trailing fields in scheduler {s:?}"));
        }
        Ok(policy)
    }
}

/// A message in flight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub id: u64,
    pub from: PartyId,
    pub to: PartyId,
    pub kind: Option<MessageKind>,
    pub epoch: Option<u32>,
    pub bytes: Vec<u8>,
}

/// Ids with O(1) insert, removal and uniform sampling.
#[derive(Debug, Default)]
struct Pool {
    ids: Vec<u64>,
    pos: HashMap<u64, usize>,
}

impl Pool {
    fn insert(&mut self, id: u64) {
        self.pos.insert(id, self.ids.len());
        self.ids.push(id);
    }

    fn remove(&mut self, id: u64) -> bool {
        let Some(i) = self.pos.remove(&id) else {
            return false;
        };
        self.ids.swap_remove(i);
        if let Some(&moved) = self.ids.get(i) {
            self.pos.insert(moved, i);
        }
        true
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Option<u64> {
        if self.ids.is_empty() {
            None
        } else {
            Some(self.ids[rng.random_range(0..self.ids.len())])
        }
    }

    fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug)]
struct Pending {
    envelope: Envelope,
    age_base: u64,
}

/// Pending messages plus the policy that picks the next delivery.
#[derive(Debug)]
pub struct Scheduler {
    policy: SchedulerPolicy,
    rng: ChaCha8Rng,
    pending: HashMap<u64, Pending>,
    order: BTreeSet<u64>,
    normal: Pool,
    delayed: Pool,
    deliveries: u64,
}

impl Scheduler {
    pub fn new(policy: SchedulerPolicy, rng: ChaCha8Rng) -> Self {
        Scheduler {
            policy,
            rng,
            pending: HashMap::new(),
            order: BTreeSet::new(),
            normal: Pool::default(),
            delayed: Pool::default(),
            deliveries: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Adds a message. Ids must be increasing in send order.
    pub fn push(&mut self, envelope: Envelope) {
        let id = envelope.id;
        debug_assert!(self.order.last().is_none_or(|&last| last < id));
        if self.policy.delays(envelope.to, envelope.kind) {
            self.delayed.insert(id);
        } else {
            self.normal.insert(id);
        }
        let age_base = self.deliveries + self.order.len() as u64;
        self.order.insert(id);
        self.pending.insert(id, Pending { envelope, age_base });
    }

    /// Removes and returns the next message to deliver.
    pub fn next_delivery(&mut self) -> Option<Envelope> {
        let oldest = *self.order.first()?;
        let overdue = self
            .policy
            .age_bound()
            .is_some_and(|bound| self.deliveries - self.pending[&oldest].age_base >= bound);
        let id = if overdue {
            oldest
        } else {
            match self.policy {
                SchedulerPolicy::Fair => self.normal.sample(&mut self.rng).expect("nonempty"),
                SchedulerPolicy::TargetedDelay { .. } => {
                    if self.normal.is_empty() {
                        self.delayed.sample(&mut self.rng).expect("nonempty")
                    } else {
                        self.normal.sample(&mut self.rng).expect("nonempty")
                    }
                }
                SchedulerPolicy::SendOrderAdversarial { .. } => {
                    *self.order.last().expect("nonempty")
                }
            }
        };
        if !self.normal.remove(id) {
            self.delayed.remove(id);
        }
        self.order.remove(&id);
        self.deliveries += 1;
        self.pending.remove(&id).map(|p| p.envelope)
    }
}
