//! Committee selection and leader election over the common coin.
//!
//! Every party multicasts its coin share for the epoch, collects verified shares from
//! distinct senders, and once `coin_t` of them are in hand tosses the coin to pick an
//! ordered committee of `kappa` parties. Leader election is the same procedure with a
//! committee of one.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{CoinShare, CryptoError};
use crate::message::{Body, CoinScope, Message, Outgoing};
use crate::params::PartyId;
use crate::{DropReason, PartyContext};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitteeError {
    #[error("coin for epoch {0} already started")]
    DuplicateStart(u32),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Coin id for a scope and epoch. The epoch number doubles as the view.
pub fn coin_id(scope: CoinScope, epoch: u32) -> Vec<u8> {
    let mut id = match scope {
        CoinScope::Committee => b"committee/".to_vec(),
        CoinScope::Leader => b"leader/".to_vec(),
    };
    id.extend_from_slice(&epoch.to_be_bytes());
    id
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShareOutcome {
    /// Share recorded; not enough yet.
    Pending,
    /// Share from a sender already counted, or after the decision.
    Ignored,
    Rejected(DropReason),
    /// The threshold was just reached. Returned exactly once.
    Decided(Vec<PartyId>),
}

/// Per-epoch share collection (the set of verified shares) and the resulting
/// ordered selection.
#[derive(Debug, Clone)]
pub struct CommitteeState {
    epoch: u32,
    scope: CoinScope,
    size: usize,
    started: bool,
    sigma: BTreeMap<PartyId, CoinShare>,
    committee: Option<Vec<PartyId>>,
}

impl CommitteeState {
    pub fn new(epoch: u32, size: usize) -> Self {
        Self::with_scope(epoch, CoinScope::Committee, size)
    }

    /// Single-winner coin for leader election.
    pub fn leader_election(epoch: u32) -> Self {
        Self::with_scope(epoch, CoinScope::Leader, 1)
    }

    fn with_scope(epoch: u32, scope: CoinScope, size: usize) -> Self {
        CommitteeState {
            epoch,
            scope,
            size,
            started: false,
            sigma: BTreeMap::new(),
            committee: None,
        }
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn committee(&self) -> Option<&[PartyId]> {
        self.committee.as_deref()
    }

    pub fn share_count(&self) -> usize {
        self.sigma.len()
    }

    fn coin_id(&self) -> Vec<u8> {
        coin_id(self.scope, self.epoch)
    }

    /// Multicasts our coin share.
    pub fn start(&mut self, ctx: &PartyContext) -> Result<Vec<Outgoing>, CommitteeError> {
        if self.started {
            return Err(CommitteeError::DuplicateStart(self.epoch));
        }
        self.started = true;
        let share = ctx.crypto.coin_share(ctx.me, &self.coin_id());
        Ok(vec![Outgoing::all(Message::new(
            self.epoch,
            ctx.me,
            Body::CoinShare {
                scope: self.scope,
                share: share.share_bytes,
            },
        ))])
    }

    /// Handles a `COIN_SHARE` from `sender`.
    pub fn handle_coin_share(
        &mut self,
        ctx: &PartyContext,
        sender: PartyId,
        share_bytes: &[u8],
    ) -> ShareOutcome {
        if self.sigma.contains_key(&sender) {
            return ShareOutcome::Ignored;
        }
        let share = CoinShare {
            party: sender,
            coin_id: self.coin_id(),
            share_bytes: share_bytes.to_vec(),
        };
        // Late shares are still verified so that forgeries are always reported.
        if !ctx.crypto.coin_verify(&share) {
            return ShareOutcome::Rejected(DropReason::BadCoinShare);
        }
        if self.committee.is_some() {
            return ShareOutcome::Ignored;
        }
        self.sigma.insert(sender, share);
        if self.sigma.len() < ctx.thresholds.coin_t {
            return ShareOutcome::Pending;
        }
        let shares: Vec<CoinShare> = self.sigma.values().cloned().collect();
        match ctx.crypto.coin_toss(&self.coin_id(), &shares, self.size) {
            Ok(committee) => {
                self.committee = Some(committee.clone());
                ShareOutcome::Decided(committee)
            }
            // Only reachable with a committee size outside [1, n].
            Err(_) => ShareOutcome::Rejected(DropReason::BadCoinShare),
        }
    }

    /// The elected leader: the head of the single-winner toss.
    pub fn elect_leader(&self, ctx: &PartyContext) -> Result<PartyId, CommitteeError> {
        let shares: Vec<CoinShare> = self.sigma.values().cloned().collect();
        let picked = ctx.crypto.coin_toss(&self.coin_id(), &shares, 1)?;
        Ok(picked[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{DealerCrypto, ThresholdCrypto};
    use crate::message::Target;
    use crate::params::ProtocolParams;
    use std::sync::Arc;

    fn ctxs(f: usize, kappa: usize, seed: u64) -> Vec<PartyContext> {
        let n = 3 * f + 1;
        let params = ProtocolParams::new(n, f, kappa, 1, 32, seed).unwrap();
        let crypto: Arc<dyn ThresholdCrypto> = Arc::new(DealerCrypto::deal(&params));
        params
            .parties()
            .map(|me| PartyContext::new(me, params, crypto.clone()))
            .collect()
    }

    fn share_of(ctx: &PartyContext, epoch: u32) -> Vec<u8> {
        ctx.crypto
            .coin_share(ctx.me, &coin_id(CoinScope::Committee, epoch))
            .share_bytes
    }

    #[test]
    fn start_multicasts_once() {
        let cs = ctxs(1, 2, 1);
        let mut st = CommitteeState::new(0, 2);
        let out = st.start(&cs[0]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].target, Target::All);
        // one multicast = n point-to-point messages of 16 + K bytes each
        assert_eq!(
            cs[0].params.n() * out[0].message.encoded_len(),
            4 * (16 + 32)
        );
        assert_eq!(st.start(&cs[0]), Err(CommitteeError::DuplicateStart(0)));
    }

    #[test]
    fn decides_after_coin_t_distinct_shares() {
        let cs = ctxs(1, 2, 3);
        let mut st = CommitteeState::new(5, 2);
        assert_eq!(
            st.handle_coin_share(&cs[0], PartyId(1), &share_of(&cs[1], 5)),
            ShareOutcome::Pending
        );
        assert_eq!(
            st.handle_coin_share(&cs[0], PartyId(1), &share_of(&cs[1], 5)),
            ShareOutcome::Ignored
        );
        let committee = match st.handle_coin_share(&cs[0], PartyId(2), &share_of(&cs[2], 5)) {
            ShareOutcome::Decided(c) => c,
            other => panic!("{other:?}"),
        };
        assert_eq!(committee.len(), 2);
        assert_ne!(committee[0], committee[1]);
        assert_eq!(
            st.handle_coin_share(&cs[0], PartyId(3), &share_of(&cs[3], 5)),
            ShareOutcome::Ignored
        );
        assert_eq!(st.committee(), Some(&committee[..]));
    }

    #[test]
    fn rejects_invalid_and_replayed_shares() {
        let cs = ctxs(1, 2, 3);
        let mut st = CommitteeState::new(5, 2);
        assert_eq!(
            st.handle_coin_share(&cs[0], PartyId(1), &[0u8; 32]),
            ShareOutcome::Rejected(DropReason::BadCoinShare)
        );
        // a share for another epoch
        assert_eq!(
            st.handle_coin_share(&cs[0], PartyId(1), &share_of(&cs[1], 4)),
            ShareOutcome::Rejected(DropReason::BadCoinShare)
        );
        // claimed sender differs from the share's owner
        assert_eq!(
            st.handle_coin_share(&cs[0], PartyId(2), &share_of(&cs[1], 5)),
            ShareOutcome::Rejected(DropReason::BadCoinShare)
        );
        assert_eq!(st.share_count(), 0);
    }

    #[test]
    fn arrival_order_does_not_change_committee() {
        let cs = ctxs(2, 3, 9);
        let orders: [[u16; 3]; 3] = [[0, 1, 2], [6, 4, 5], [3, 0, 6]];
        let mut seen = Vec::new();
        for (viewer, order) in orders.iter().enumerate() {
            let mut st = CommitteeState::new(2, 3);
            let mut out = None;
            for &p in order {
                if let ShareOutcome::Decided(c) =
                    st.handle_coin_share(&cs[viewer], PartyId(p), &share_of(&cs[p as usize], 2))
                {
                    out = Some(c);
                }
            }
            seen.push(out.unwrap());
        }
        assert!(seen.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn default_committee_always_has_an_honest_member() {
        // kappa = f + 1 > f, so no committee fits inside the Byzantine set.
        let cs = ctxs(2, 3, 21);
        for epoch in 0..500 {
            let mut st = CommitteeState::new(epoch, 3);
            let mut committee = None;
            for p in 0..3u16 {
                if let ShareOutcome::Decided(c) =
                    st.handle_coin_share(&cs[0], PartyId(p), &share_of(&cs[p as usize], epoch))
                {
                    committee = Some(c);
                }
            }
            let byzantine = [PartyId(5), PartyId(6)];
            assert!(committee.unwrap().iter().any(|p| !byzantine.contains(p)));
        }
    }

    #[test]
    fn leader_election_matches_toss_head() {
        let cs = ctxs(1, 2, 4);
        let id = coin_id(CoinScope::Leader, 8);
        let mut leaders = Vec::new();
        for viewer in 0..4 {
            let mut st = CommitteeState::leader_election(8);
            assert!(matches!(
                st.elect_leader(&cs[viewer]),
                Err(CommitteeError::Crypto(
                    CryptoError::InsufficientShares { .. }
                ))
            ));
            for p in [viewer, (viewer + 1) % 4] {
                let share = cs[p].crypto.coin_share(PartyId(p as u16), &id);
                st.handle_coin_share(&cs[viewer], PartyId(p as u16), &share.share_bytes);
            }
            let leader = st.elect_leader(&cs[viewer]).unwrap();
            assert_eq!(st.committee(), Some(&[leader][..]));
            leaders.push(leader);
        }
        assert!(leaders.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn leader_frequency_is_uniform() {
        let cs = ctxs(1, 2, 77);
        let trials = 10_000u32;
        let mut counts = [0u32; 4];
        for epoch in 0..trials {
            let mut st = CommitteeState::leader_election(epoch);
            let id = coin_id(CoinScope::Leader, epoch);
            for p in 0..2u16 {
                let share = cs[p as usize].crypto.coin_share(PartyId(p), &id);
                st.handle_coin_share(&cs[0], PartyId(p), &share.share_bytes);
            }
            counts[st.elect_leader(&cs[0]).unwrap().index()] += 1;
        }
        let p = 0.25;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
