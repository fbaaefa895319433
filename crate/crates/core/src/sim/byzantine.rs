//! Byzantine behaviors: a closed set of transformations applied to a faulty party's
//! outgoing messages.
//!
//! A faulty party runs the honest state machine; its behavior rewrites what leaves
//! it. Messages a party addresses to itself stay internal and are not rewritten
//! (except for crash and mute, which silence the party entirely). New behaviors are
//! added as variants here and handled in [`apply_byzantine`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, ThresholdCrypto};
use crate::message::{Body, Message, MessageKind, Outgoing, Target, HEADER_LEN};
use crate::params::{encode_batch, PartyId, ProtocolParams, Request};
use crate::ppb::PpbInstanceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum Behavior {
    /// Honest until the given delivery step, then silent and unresponsive.
    Crash { at_step: u64 },
    /// Sends nothing at all.
    Mute,
    /// As a committee member, sends `PPB_SEND` and `PROPOSE` with one ciphertext to
    /// the lower half of the parties and a different one to the upper half.
    Equivocate,
    /// Completes P-PB but never sends `PROPOSE`.
    Withhold,
    /// Every message keeps a valid header but carries a random body.
    Garbage,
}

impl Behavior {
    pub fn name(&self) -> &'static str {
        match self {
            Behavior::Crash { .. } => "crash",
            Behavior::Mute => "mute",
            Behavior::Equivocate => "equivocate",
            Behavior::Withhold => "withhold",
            Behavior::Garbage => "garbage",
        }
    }
}

/// A named adversary: which behavior the faulty parties follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryProfile {
    None,
    Crash,
    Mute,
    Equivocate,
    Withhold,
    Garbage,
}

impl AdversaryProfile {
    pub const ALL: [AdversaryProfile; 6] = [
        AdversaryProfile::None,
        AdversaryProfile::Crash,
        AdversaryProfile::Mute,
        AdversaryProfile::Equivocate,
        AdversaryProfile::Withhold,
        AdversaryProfile::Garbage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdversaryProfile::None => "none",
            AdversaryProfile::Crash => "crash",
            AdversaryProfile::Mute => "mute",
            AdversaryProfile::Equivocate => "equivocate",
            AdversaryProfile::Withhold => "withhold",
            AdversaryProfile::Garbage => "garbage",
        }
    }

    /// Assigns the profile's behavior to `f` parties picked pseudo-randomly from `seed`.
    /// Crash steps are drawn from the first few thousand deliveries.
    pub fn assign(self, params: &ProtocolParams, seed: u64) -> BTreeMap<PartyId, Behavior> {
        if self == AdversaryProfile::None {
            return BTreeMap::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xad7e_5a21_0000_0000);
        let mut ids: Vec<PartyId> = params.parties().collect();
        ids.shuffle(&mut rng);
        let horizon = (20 * params.n() * params.n()) as u64;
        ids.into_iter()
            .take(params.f())
            .map(|p| {
                let behavior = match self {
                    AdversaryProfile::Crash => Behavior::Crash {
                        at_step: rng.random_range(0..horizon),
                    },
                    AdversaryProfile::Mute => Behavior::Mute,
                    AdversaryProfile::Equivocate => Behavior::Equivocate,
                    AdversaryProfile::Withhold => Behavior::Withhold,
                    AdversaryProfile::Garbage => Behavior::Garbage,
                    AdversaryProfile::None => unreachable!(),
                };
                (p, behavior)
            })
            .collect()
    }
}

impl fmt::Display for AdversaryProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdversaryProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AdversaryProfile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown adversary {s:?}"))
    }
}

/// One point-to-point transmission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wire {
    pub to: PartyId,
    pub bytes: Vec<u8>,
    /// Rewritten by a Byzantine behavior.
    pub tampered: bool,
}

/// Expands targets into point-to-point transmissions, as an honest party sends them.
pub fn expand(n: usize, out: Vec<Outgoing>) -> Vec<Wire> {
    let mut wires = Vec::new();
    for o in out {
        let bytes = o.message.encode();
        match o.target {
            Target::All => wires.extend((0..n as u16).map(|p| Wire {
                to: PartyId(p),
                bytes: bytes.clone(),
                tampered: false,
            })),
            Target::Party(p) => wires.push(Wire {
                to: p,
                bytes,
                tampered: false,
            }),
        }
    }
    wires
}

/// The alternative ciphertext an equivocating proposer shows the upper half.
fn alternative_value(crypto: &dyn ThresholdCrypto, epoch: u32, me: PartyId) -> Vec<u8> {
    let decoy = Request::new(format!("decoy-{}-{epoch}", me.0).into_bytes(), Vec::new());
    crypto.encrypt(epoch, me, &encode_batch(&[decoy])).bytes
}

fn equivocated(crypto: &dyn ThresholdCrypto, msg: &Message) -> Option<Message> {
    let me = msg.sender;
    let body = match &msg.body {
        Body::PpbSend {
            step: 1,
            proof: None,
            ..
        } => {
            let value = alternative_value(crypto, msg.epoch, me);
            let statement = PpbInstanceId::new(msg.epoch, me, 1).statement(&Digest::of(&value));
            Body::PpbSend {
                step: 1,
                sender_share: crypto.sign_share(me, &statement).share_bytes,
                value,
                proof: None,
            }
        }
        Body::Propose { j, step, proof, .. } => Body::Propose {
            j: *j,
            step: *step,
            ciphertext: alternative_value(crypto, msg.epoch, me),
            proof: proof.clone(),
        },
        _ => return None,
    };
    Some(Message::new(msg.epoch, me, body))
}

/// Replaces the body with random bytes of the same length, keeping the header.
/// Binary-agreement votes get an out-of-range value byte, since a random two-byte
/// body could otherwise be a well-formed vote.
fn garbled(bytes: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = bytes.to_vec();
    rng.fill_bytes(&mut out[HEADER_LEN..]);
    let kind = MessageKind::from_u8(out[0]).ok();
    if matches!(kind, Some(MessageKind::AbaEst | MessageKind::AbaAux)) {
        out[HEADER_LEN] = rng.random_range(2..=u8::MAX);
    }
    out
}

/// Rewrites `me`'s outgoing messages according to `behavior`.
pub fn apply_byzantine(
    behavior: &Behavior,
    me: PartyId,
    n: usize,
    crypto: &dyn ThresholdCrypto,
    rng: &mut ChaCha8Rng,
    out: Vec<Outgoing>,
) -> Vec<Wire> {
    match behavior {
        Behavior::Crash { .. } => expand(n, out),
        Behavior::Mute => Vec::new(),
        Behavior::Withhold => expand(
            n,
            out.into_iter()
                .filter(|o| o.message.kind() != MessageKind::Propose)
                .collect(),
        ),
        Behavior::Equivocate => {
            let mut wires = Vec::new();
            for o in out {
                let alt = equivocated(crypto, &o.message);
                for mut w in expand(n, vec![o]) {
                    if let Some(alt) = &alt {
                        if w.to.index() >= n / 2 && w.to != me {
                            w.bytes = alt.encode();
                            w.tampered = true;
                        }
                    }
                    wires.push(w);
                }
            }
            wires
        }
        Behavior::Garbage => expand(n, out)
            .into_iter()
            .map(|mut w| {
                if w.to != me {
                    w.bytes = garbled(&w.bytes, rng);
                    w.tampered = true;
                }
                w
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::DealerCrypto;

    fn setup() -> (ProtocolParams, DealerCrypto) {
        let params = ProtocolParams::with_fault_bound(1, 2, 32, 4).unwrap();
        let crypto = DealerCrypto::deal(&params);
        (params, crypto)
    }

    fn ppb_send(crypto: &DealerCrypto, me: PartyId) -> Outgoing {
        let value = crypto.encrypt(0, me, b"batch").bytes;
        let statement = PpbInstanceId::new(0, me, 1).statement(&Digest::of(&value));
        Outgoing::all(Message::new(
            0,
            me,
            Body::PpbSend {
                step: 1,
                sender_share: crypto.sign_share(me, &statement).share_bytes,
                value,
                proof: None,
            },
        ))
    }

    #[test]
    fn assignment_respects_fault_bound() {
        let params = ProtocolParams::with_fault_bound(3, 1, 32, 0).unwrap();
        for profile in AdversaryProfile::ALL {
            let byz = profile.assign(&params, 11);
            let expected = if profile == AdversaryProfile::None {
                0
            } else {
                3
            };
            assert_eq!(byz.len(), expected);
            assert_eq!(byz, profile.assign(&params, 11));
            assert!(byz.values().all(|b| b.name() == profile.name()));
        }
        assert_eq!("withhold".parse(), Ok(AdversaryProfile::Withhold));
        assert!("evil".parse::<AdversaryProfile>().is_err());
    }

    #[test]
    fn equivocation_splits_recipients() {
        let (params, crypto) = setup();
        let me = PartyId(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wires = apply_byzantine(
            &Behavior::Equivocate,
            me,
            params.n(),
            &crypto,
            &mut rng,
            vec![ppb_send(&crypto, me)],
        );
        assert_eq!(wires.len(), 4);
        let values: Vec<Vec<u8>> = wires
            .iter()
            .map(|w| match Message::decode(&w.bytes, 32).unwrap().body {
                Body::PpbSend { value, .. } => value,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(values[0], values[1]);
        assert_eq!(values[2], values[3]);
        assert_ne!(values[0], values[2]);
        assert_eq!(
            wires.iter().map(|w| w.tampered).collect::<Vec<_>>(),
            [false, false, true, true]
        );
    }

    #[test]
    fn garbage_keeps_headers_and_never_decodes_as_a_vote() {
        let (params, crypto) = setup();
        let me = PartyId(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vote = Outgoing::all(Message::new(
            0,
            me,
            Body::AbaEst {
                j: 0,
                round: 1,
                value: true,
                flags: 0,
            },
        ));
        let out = vec![vote, ppb_send(&crypto, me)];
        let honest = expand(params.n(), out.clone());
        for _ in 0..500 {
            let wires = apply_byzantine(
                &Behavior::Garbage,
                me,
                params.n(),
                &crypto,
                &mut rng,
                out.clone(),
            );
            for (w, h) in wires.iter().zip(&honest) {
                assert_eq!(w.bytes.len(), h.bytes.len());
                assert_eq!(w.bytes[..HEADER_LEN], h.bytes[..HEADER_LEN]);
                if w.to == me {
                    assert_eq!(w, h);
                    continue;
                }
                assert!(w.tampered);
                if w.bytes[0] == MessageKind::AbaEst as u8 {
                    assert!(Message::decode(&w.bytes, 32).is_err());
                }
            }
        }
    }

    #[test]
    fn withhold_and_mute_filter_output() {
        let (params, crypto) = setup();
        let me = PartyId(2);
        let propose = Outgoing::all(Message::new(
            0,
            me,
            Body::Propose {
                j: 0,
                step: 1,
                ciphertext: vec![1; 40],
                proof: vec![2; 32],
            },
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = vec![propose, ppb_send(&crypto, me)];
        let w = apply_byzantine(
            &Behavior::Withhold,
            me,
            params.n(),
            &crypto,
            &mut rng,
            out.clone(),
        );
        assert_eq!(w.len(), 4);
        assert!(w.iter().all(|w| w.bytes[0] == MessageKind::PpbSend as u8));
        assert!(apply_byzantine(&Behavior::Mute, me, 4, &crypto, &mut rng, out).is_empty());
    }
}
