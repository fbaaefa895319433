//! Threshold cryptography: sign-shares and threshold signatures, a common coin, and
//! threshold encryption.
//!
//! [`ThresholdCrypto`] is the contract the protocol is written against. The default
//! provider, [`DealerCrypto`], is a simulation-grade scheme: a trusted dealer derives a
//! master secret and one secret per party from a seed; every share is a keyed digest
//! of the party secret, and combining shares checks count, distinctness and validity
//! before re-deriving the group result from the master secret. It is deterministic and
//! fast, and offers no protection against anyone holding the dealer state.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::message::Cursor;
use crate::params::{PartyId, ProtocolParams, Thresholds};

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First 8 bytes as hex, used for compact trace records.
    pub fn short_hex(&self) -> String {
        hex::encode(&self.0[..8])
    }

    pub fn prefix4(&self) -> [u8; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("insufficient shares: {have} distinct valid, {need} required")]
    InsufficientShares { have: usize, need: usize },
    #[error("invalid share from {0}")]
    InvalidShare(PartyId),
    #[error("cannot select {k} of {n} parties")]
    InvalidCount { k: usize, n: usize },
    #[error("malformed ciphertext")]
    MalformedCiphertext,
}

#[derive(Debug, Error)]
pub enum KeyFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a key file")]
    BadMagic,
    #[error("corrupt key file")]
    Corrupt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigShare {
    pub signer: PartyId,
    pub msg_digest: Digest,
    pub share_bytes: Vec<u8>,
}

/// A combined threshold signature. `signer_set` records which shares the combiner
/// used; it is audit data and does not take part in verification, so a signature
/// rebuilt from wire bytes carries an empty set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdSig {
    pub msg_digest: Digest,
    pub sig_bytes: Vec<u8>,
    pub signer_set: BTreeSet<PartyId>,
}

impl ThresholdSig {
    pub fn from_wire(msg_digest: Digest, sig_bytes: Vec<u8>) -> Self {
        ThresholdSig {
            msg_digest,
            sig_bytes,
            signer_set: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoinShare {
    pub party: PartyId,
    pub coin_id: Vec<u8>,
    pub share_bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub epoch: u32,
    pub proposer: PartyId,
    pub bytes: Vec<u8>,
}

impl Ciphertext {
    pub fn digest(&self) -> Digest {
        Digest::of(&self.bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecShare {
    pub party: PartyId,
    pub ct_ref: Digest,
    pub share_bytes: Vec<u8>,
}

/// The threshold primitives the protocol relies on.
pub trait ThresholdCrypto: Send + Sync + fmt::Debug {
    fn n(&self) -> usize;

    /// Byte width of every share and signature.
    fn sec_param(&self) -> usize;

    fn thresholds(&self) -> Thresholds;

    fn sign_share(&self, party: PartyId, message: &[u8]) -> SigShare;

    /// Checks `share` against its own `msg_digest` and signer.
    fn verify_sig_share(&self, share: &SigShare) -> bool;

    fn combine_signature(
        &self,
        message: &[u8],
        shares: &[SigShare],
        t: usize,
    ) -> Result<ThresholdSig, CryptoError>;

    fn verify_threshold_sig(&self, message: &[u8], sig: &ThresholdSig) -> bool;

    fn coin_share(&self, party: PartyId, coin_id: &[u8]) -> CoinShare;

    fn coin_verify(&self, share: &CoinShare) -> bool;

    /// The coin value for `coin_id`, available once `coin_t` distinct valid shares
    /// are supplied.
    fn coin_value(&self, coin_id: &[u8], shares: &[CoinShare]) -> Result<Digest, CryptoError>;

    fn encrypt(&self, epoch: u32, proposer: PartyId, plaintext: &[u8]) -> Ciphertext;

    fn decryption_share(&self, party: PartyId, ct: &Ciphertext) -> DecShare;

    fn verify_dec_share(&self, ct: &Ciphertext, share: &DecShare) -> bool;

    fn combine_decryption(
        &self,
        ct: &Ciphertext,
        shares: &[DecShare],
    ) -> Result<Vec<u8>, CryptoError>;

    /// Selects `k` distinct parties: the first `k` entries of a permutation of
    /// `[0, n)` seeded by the coin value.
    fn coin_toss(
        &self,
        coin_id: &[u8],
        shares: &[CoinShare],
        k: usize,
    ) -> Result<Vec<PartyId>, CryptoError> {
        if k == 0 || k > self.n() {
            return Err(CryptoError::InvalidCount { k, n: self.n() });
        }
        let value = self.coin_value(coin_id, shares)?;
        Ok(select_parties(&value, self.n(), k))
    }
}

/// First `k` indices of the permutation of `[0, n)` derived from `seed`.
pub fn select_parties(seed: &Digest, n: usize, k: usize) -> Vec<PartyId> {
    // Partial Fisher-Yates: the draws for position i do not depend on k, so smaller
    // selections are prefixes of larger ones.
    let mut rng = ChaCha20Rng::from_seed(seed.0);
    let mut idx: Vec<u16> = (0..n as u16).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.into_iter().map(PartyId).collect()
}

/// A binary coin from a coin value.
pub fn coin_bit(value: &Digest) -> bool {
    value.0[0] & 1 == 1
}

/// Keyed, length-prefixed SHA-256 expanded in counter mode to `out_len` bytes.
fn prf(key: &[u8; 32], domain: &[u8], parts: &[&[u8]], out_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_len + 32);
    let mut counter = 0u32;
    while out.len() < out_len {
        let mut h = Sha256::new();
        h.update(key);
        h.update((domain.len() as u32).to_be_bytes());
        h.update(domain);
        for p in parts {
            h.update((p.len() as u32).to_be_bytes());
            h.update(p);
        }
        h.update(counter.to_be_bytes());
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out.truncate(out_len);
    out
}

/// One party's secret share of the dealer setup. Everything a party can compute on
/// its own goes through here, so an adversary can be modelled as a set of these.
#[derive(Clone, PartialEq, Eq)]
pub struct PartyKeyMaterial {
    party: PartyId,
    key: [u8; 32],
    sec_param: usize,
}

impl fmt::Debug for PartyKeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PartyKeyMaterial")
            .field("party", &self.party)
            .finish_non_exhaustive()
    }
}

impl PartyKeyMaterial {
    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn secret(&self) -> &[u8; 32] {
        &self.key
    }

    pub fn sign_share(&self, message: &[u8]) -> SigShare {
        let msg_digest = Digest::of(message);
        SigShare {
            signer: self.party,
            msg_digest,
            share_bytes: self.sig_share_bytes(&msg_digest),
        }
    }

    fn sig_share_bytes(&self, msg_digest: &Digest) -> Vec<u8> {
        prf(&self.key, b"sig-share", &[&msg_digest.0], self.sec_param)
    }

    pub fn coin_share(&self, coin_id: &[u8]) -> CoinShare {
        CoinShare {
            party: self.party,
            coin_id: coin_id.to_vec(),
            share_bytes: prf(&self.key, b"coin-share", &[coin_id], self.sec_param),
        }
    }

    pub fn decryption_share(&self, ct: &Ciphertext) -> DecShare {
        let ct_ref = ct.digest();
        DecShare {
            party: self.party,
            ct_ref,
            share_bytes: prf(&self.key, b"dec-share", &[&ct_ref.0], self.sec_param),
        }
    }
}

/// Dealer-based provider. Holds the master secret, so it doubles as the verifier.
#[derive(Clone, PartialEq, Eq)]
pub struct DealerCrypto {
    seed: u64,
    sec_param: usize,
    thresholds: Thresholds,
    master: [u8; 32],
    parties: Vec<PartyKeyMaterial>,
}

impl fmt::Debug for DealerCrypto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DealerCrypto")
            .field("seed", &self.seed)
            .field("n", &self.parties.len())
            .field("sec_param", &self.sec_param)
            .finish_non_exhaustive()
    }
}

const KEY_FILE_MAGIC: &[u8; 8] = b"SHBKEYS1";

impl DealerCrypto {
    /// Trusted setup for `params`, seeded by `params.seed()`.
    pub fn deal(params: &ProtocolParams) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(params.seed());
        let mut master = [0u8; 32];
        rng.fill_bytes(&mut master);
        let parties = params
            .parties()
            .map(|party| {
                let mut key = [0u8; 32];
                rng.fill_bytes(&mut key);
                PartyKeyMaterial {
                    party,
                    key,
                    sec_param: params.sec_param(),
                }
            })
            .collect();
        DealerCrypto {
            seed: params.seed(),
            sec_param: params.sec_param(),
            thresholds: params.thresholds(),
            master,
            parties,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn party_keys(&self, party: PartyId) -> Option<&PartyKeyMaterial> {
        self.parties.get(party.index())
    }

    fn keys(&self, party: PartyId) -> &PartyKeyMaterial {
        self.party_keys(party)
            .unwrap_or_else(|| panic!("{party} has no key material"))
    }

    fn group_sig(&self, msg_digest: &Digest) -> Vec<u8> {
        prf(&self.master, b"group-sig", &[&msg_digest.0], self.sec_param)
    }

    fn stream(&self, nonce: &[u8], len: usize) -> Vec<u8> {
        prf(&self.master, b"enc-stream", &[nonce], len)
    }

    /// Checks validity of every share, then counts distinct signers.
    fn count_distinct<T>(
        &self,
        shares: &[T],
        signer: impl Fn(&T) -> PartyId,
        valid: impl Fn(&T) -> bool,
        need: usize,
    ) -> Result<BTreeSet<PartyId>, CryptoError> {
        let mut seen = BTreeSet::new();
        for s in shares {
            if !valid(s) {
                return Err(CryptoError::InvalidShare(signer(s)));
            }
            seen.insert(signer(s));
        }
        if seen.len() < need {
            return Err(CryptoError::InsufficientShares {
                have: seen.len(),
                need,
            });
        }
        Ok(seen)
    }

    /// Binary key file: magic, seed, n, K, master secret, then one secret per party.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 + 2 + 4 + 32 * (1 + self.parties.len()));
        out.extend_from_slice(KEY_FILE_MAGIC);
        out.extend_from_slice(&self.seed.to_be_bytes());
        out.extend_from_slice(&(self.parties.len() as u16).to_be_bytes());
        out.extend_from_slice(&(self.sec_param as u32).to_be_bytes());
        out.extend_from_slice(&self.master);
        for p in &self.parties {
            out.extend_from_slice(&p.key);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, KeyFileError> {
        let mut cur = Cursor::new(bytes);
        if cur.take(8).map_err(|_| KeyFileError::BadMagic)? != KEY_FILE_MAGIC {
            return Err(KeyFileError::BadMagic);
        }
        let corrupt = |_| KeyFileError::Corrupt;
        let seed = cur.u64().map_err(corrupt)?;
        let n = cur.u16().map_err(corrupt)? as usize;
        let sec_param = cur.u32().map_err(corrupt)? as usize;
        if n == 0 || (n - 1) % 3 != 0 || sec_param == 0 {
            return Err(KeyFileError::Corrupt);
        }
        let f = (n - 1) / 3;
        let params = ProtocolParams::new(n, f, f + 1, 1, sec_param, seed)
            .map_err(|_| KeyFileError::Corrupt)?;
        let mut master = [0u8; 32];
        master.copy_from_slice(cur.take(32).map_err(corrupt)?);
        let mut parties = Vec::with_capacity(n);
        for party in params.parties() {
            let mut key = [0u8; 32];
            key.copy_from_slice(cur.take(32).map_err(corrupt)?);
            parties.push(PartyKeyMaterial {
                party,
                key,
                sec_param,
            });
        }
        if !cur.is_empty() {
            return Err(KeyFileError::Corrupt);
        }
        Ok(DealerCrypto {
            seed,
            sec_param,
            thresholds: params.thresholds(),
            master,
            parties,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KeyFileError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KeyFileError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl ThresholdCrypto for DealerCrypto {
    fn n(&self) -> usize {
        self.parties.len()
    }

    fn sec_param(&self) -> usize {
        self.sec_param
    }

    fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    fn sign_share(&self, party: PartyId, message: &[u8]) -> SigShare {
        self.keys(party).sign_share(message)
    }

    fn verify_sig_share(&self, share: &SigShare) -> bool {
        self.party_keys(share.signer)
            .is_some_and(|k| k.sig_share_bytes(&share.msg_digest) == share.share_bytes)
    }

    fn combine_signature(
        &self,
        message: &[u8],
        shares: &[SigShare],
        t: usize,
    ) -> Result<ThresholdSig, CryptoError> {
        let msg_digest = Digest::of(message);
        let signer_set = self.count_distinct(
            shares,
            |s| s.signer,
            |s| s.msg_digest == msg_digest && self.verify_sig_share(s),
            t,
        )?;
        Ok(ThresholdSig {
            msg_digest,
            sig_bytes: self.group_sig(&msg_digest),
            signer_set,
        })
    }

    fn verify_threshold_sig(&self, message: &[u8], sig: &ThresholdSig) -> bool {
        let msg_digest = Digest::of(message);
        sig.msg_digest == msg_digest && sig.sig_bytes == self.group_sig(&msg_digest)
    }

    fn coin_share(&self, party: PartyId, coin_id: &[u8]) -> CoinShare {
        self.keys(party).coin_share(coin_id)
    }

    fn coin_verify(&self, share: &CoinShare) -> bool {
        self.party_keys(share.party)
            .is_some_and(|k| k.coin_share(&share.coin_id).share_bytes == share.share_bytes)
    }

    fn coin_value(&self, coin_id: &[u8], shares: &[CoinShare]) -> Result<Digest, CryptoError> {
        self.count_distinct(
            shares,
            |s| s.party,
            |s| s.coin_id == coin_id && self.coin_verify(s),
            self.thresholds.coin_t,
        )?;
        let v = prf(&self.master, b"coin", &[coin_id], 32);
        Ok(Digest(v.try_into().expect("32 bytes")))
    }

    fn encrypt(&self, epoch: u32, proposer: PartyId, plaintext: &[u8]) -> Ciphertext {
        let nonce = prf(
            &self.master,
            b"enc-nonce",
            &[&epoch.to_be_bytes(), &proposer.0.to_be_bytes(), plaintext],
            self.sec_param,
        );
        let stream = self.stream(&nonce, plaintext.len());
        let mut bytes = nonce;
        bytes.extend(plaintext.iter().zip(&stream).map(|(p, s)| p ^ s));
        Ciphertext {
            epoch,
            proposer,
            bytes,
        }
    }

    fn decryption_share(&self, party: PartyId, ct: &Ciphertext) -> DecShare {
        self.keys(party).decryption_share(ct)
    }

    fn verify_dec_share(&self, ct: &Ciphertext, share: &DecShare) -> bool {
        share.ct_ref == ct.digest()
            && self
                .party_keys(share.party)
                .is_some_and(|k| k.decryption_share(ct).share_bytes == share.share_bytes)
    }

    fn combine_decryption(
        &self,
        ct: &Ciphertext,
        shares: &[DecShare],
    ) -> Result<Vec<u8>, CryptoError> {
        if ct.bytes.len() < self.sec_param {
            return Err(CryptoError::MalformedCiphertext);
        }
        self.count_distinct(
            shares,
            |s| s.party,
            |s| self.verify_dec_share(ct, s),
            self.thresholds.dec_t,
        )?;
        let (nonce, body) = ct.bytes.split_at(self.sec_param);
        let stream = self.stream(nonce, body.len());
        Ok(body.iter().zip(&stream).map(|(c, s)| c ^ s).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dealer(f: usize) -> DealerCrypto {
        DealerCrypto::deal(&ProtocolParams::with_fault_bound(f, 1, 32, 11).unwrap())
    }

    fn subsets(n: usize, t: usize) -> Vec<Vec<usize>> {
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == t)
            .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
            .collect()
    }

    #[test]
    fn sign_share_is_deterministic_and_bound() {
        let d = dealer(1);
        let a = d.sign_share(PartyId(0), b"m");
        assert_eq!(a, d.sign_share(PartyId(0), b"m"));
        assert_ne!(a.share_bytes, d.sign_share(PartyId(1), b"m").share_bytes);
        assert!(d.verify_sig_share(&a));
        let mut wrong = a.clone();
        wrong.msg_digest = Digest::of(b"other");
        assert!(!d.verify_sig_share(&wrong));
    }

    #[test]
    fn combine_needs_distinct_valid_shares() {
        let d = dealer(1);
        let shares: Vec<_> = (0..3).map(|i| d.sign_share(PartyId(i), b"m")).collect();
        let sig = d.combine_signature(b"m", &shares, 3).unwrap();
        assert_eq!(sig.signer_set.len(), 3);
        assert!(d.verify_threshold_sig(b"m", &sig));
        assert!(!d.verify_threshold_sig(b"m2", &sig));
        let mut flipped = sig.clone();
        flipped.sig_bytes[0] ^= 1;
        assert!(!d.verify_threshold_sig(b"m", &flipped));

        let dup = vec![shares[0].clone(), shares[0].clone(), shares[1].clone()];
        assert_eq!(
            d.combine_signature(b"m", &dup, 3),
            Err(CryptoError::InsufficientShares { have: 2, need: 3 })
        );

        let mut tampered = shares.clone();
        tampered[1].share_bytes[3] ^= 0x40;
        assert_eq!(
            d.combine_signature(b"m", &tampered, 3),
            Err(CryptoError::InvalidShare(PartyId(1)))
        );
    }

    #[test]
    fn signature_independent_of_subset_exhaustive() {
        for f in [1, 2] {
            let d = dealer(f);
            let n = 3 * f + 1;
            let t = 2 * f + 1;
            let all: Vec<_> = (0..n as u16)
                .map(|i| d.sign_share(PartyId(i), b"v"))
                .collect();
            let mut outputs = BTreeSet::new();
            for s in subsets(n, t) {
                let picked: Vec<_> = s.iter().map(|&i| all[i].clone()).collect();
                outputs.insert(d.combine_signature(b"v", &picked, t).unwrap().sig_bytes);
            }
            assert_eq!(outputs.len(), 1);
        }
    }

    #[test]
    fn coin_shares_verify_and_bind_to_id() {
        let d = dealer(1);
        let s = d.coin_share(PartyId(2), b"id");
        assert!(d.coin_verify(&s));
        let mut replay = s.clone();
        replay.coin_id = b"id2".to_vec();
        assert!(!d.coin_verify(&replay));
        let mut forged = s.clone();
        forged.share_bytes = vec![0; 32];
        assert!(!d.coin_verify(&forged));
    }

    #[test]
    fn coin_toss_independent_of_subset_exhaustive() {
        for f in [1, 2] {
            let d = dealer(f);
            let n = 3 * f + 1;
            let all: Vec<_> = (0..n as u16)
                .map(|i| d.coin_share(PartyId(i), b"c"))
                .collect();
            let mut outputs = BTreeSet::new();
            for s in subsets(n, f + 1) {
                let picked: Vec<_> = s.iter().map(|&i| all[i].clone()).collect();
                let c = d.coin_toss(b"c", &picked, f + 1).unwrap();
                let distinct: BTreeSet<_> = c.iter().collect();
                assert_eq!(distinct.len(), f + 1);
                outputs.insert(c);
            }
            assert_eq!(outputs.len(), 1);
        }
    }

    #[test]
    fn coin_toss_errors() {
        let d = dealer(1);
        let one = vec![d.coin_share(PartyId(0), b"c")];
        assert_eq!(
            d.coin_toss(b"c", &one, 2),
            Err(CryptoError::InsufficientShares { have: 1, need: 2 })
        );
        let mut bad = vec![
            d.coin_share(PartyId(0), b"c"),
            d.coin_share(PartyId(1), b"c"),
        ];
        bad[1].share_bytes[0] ^= 1;
        assert_eq!(
            d.coin_toss(b"c", &bad, 2),
            Err(CryptoError::InvalidShare(PartyId(1)))
        );
        assert!(matches!(
            d.coin_toss(b"c", &one, 5),
            Err(CryptoError::InvalidCount { .. })
        ));
    }

    #[test]
    fn leader_is_single_party() {
        let d = dealer(1);
        let shares = vec![
            d.coin_share(PartyId(0), b"l"),
            d.coin_share(PartyId(3), b"l"),
        ];
        let leader = d.coin_toss(b"l", &shares, 1).unwrap();
        assert_eq!(leader.len(), 1);
        assert_eq!(leader[0], d.coin_toss(b"l", &shares, 4).unwrap()[0]);
    }

    #[test]
    fn coin_inclusion_frequency_is_uniform() {
        // 10_000 tosses, n = 7, k = 3: inclusion count ~ Binomial(10_000, 3/7).
        let d = dealer(2);
        let trials = 10_000u32;
        let mut counts = [0u32; 7];
        for i in 0..trials {
            let id = i.to_be_bytes();
            let shares: Vec<_> = (0..3).map(|p| d.coin_share(PartyId(p), &id)).collect();
            for p in d.coin_toss(&id, &shares, 3).unwrap() {
                counts[p.index()] += 1;
            }
        }
        let p = 3.0 / 7.0;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - mean).abs() <= 3.0 * sigma,
                "{c} vs {mean} ± {sigma}"
            );
        }
    }

    #[test]
    fn encryption_round_trip_and_threshold() {
        let d = dealer(1);
        let ct = d.encrypt(3, PartyId(1), b"hello");
        assert_eq!(ct.bytes.len(), 5 + 32);
        assert_eq!(d.encrypt(0, PartyId(1), b"").bytes.len(), 32);
        assert_ne!(ct.bytes, d.encrypt(4, PartyId(1), b"hello").bytes);

        let shares: Vec<_> = (0..3)
            .map(|i| d.decryption_share(PartyId(i), &ct))
            .collect();
        for pair in subsets(3, 2) {
            let picked: Vec<_> = pair.iter().map(|&i| shares[i].clone()).collect();
            assert_eq!(d.combine_decryption(&ct, &picked).unwrap(), b"hello");
        }
        assert_eq!(
            d.combine_decryption(&ct, &shares[..1]),
            Err(CryptoError::InsufficientShares { have: 1, need: 2 })
        );
        let other = d.encrypt(3, PartyId(2), b"hello");
        let foreign = d.decryption_share(PartyId(2), &other);
        assert_eq!(
            d.combine_decryption(&ct, &[shares[0].clone(), foreign]),
            Err(CryptoError::InvalidShare(PartyId(2)))
        );
    }

    #[test]
    fn adversary_key_material_cannot_reach_thresholds() {
        // The adversary holds f parties' secrets and nothing else.
        for f in [1, 2] {
            let d = dealer(f);
            let adversary: Vec<PartyKeyMaterial> = (0..f as u16)
                .map(|i| d.party_keys(PartyId(i)).unwrap().clone())
                .collect();

            let sig_shares: Vec<_> = adversary.iter().map(|k| k.sign_share(b"m")).collect();
            assert!(matches!(
                d.combine_signature(b"m", &sig_shares, 2 * f + 1),
                Err(CryptoError::InsufficientShares { .. })
            ));
            // Any signature the adversary can derive from its own secrets fails.
            for k in &adversary {
                let guess = ThresholdSig::from_wire(
                    Digest::of(b"m"),
                    prf(k.secret(), b"group-sig", &[&Digest::of(b"m").0], 32),
                );
                assert!(!d.verify_threshold_sig(b"m", &guess));
            }

            let coin: Vec<_> = adversary.iter().map(|k| k.coin_share(b"c")).collect();
            assert!(d.coin_value(b"c", &coin).is_err());

            let ct = d.encrypt(0, PartyId(f as u16), b"secret");
            let dec: Vec<_> = adversary.iter().map(|k| k.decryption_share(&ct)).collect();
            assert!(d.combine_decryption(&ct, &dec).is_err());
            for k in &adversary {
                let stream = prf(k.secret(), b"enc-stream", &[&ct.bytes[..32]], 6);
                let guess: Vec<u8> = ct.bytes[32..]
                    .iter()
                    .zip(&stream)
                    .map(|(c, s)| c ^ s)
                    .collect();
                assert_ne!(guess, b"secret");
            }
        }
    }

    #[test]
    fn key_file_round_trip() {
        let d = dealer(2);
        let bytes = d.to_bytes();
        assert_eq!(DealerCrypto::from_bytes(&bytes).unwrap(), d);
        assert!(matches!(
            DealerCrypto::from_bytes(b"nonsense"),
            Err(KeyFileError::BadMagic)
        ));
        assert!(matches!(
            DealerCrypto::from_bytes(&bytes[..bytes.len() - 1]),
            Err(KeyFileError::Corrupt)
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("keys.bin");
        d.save(&path).unwrap();
        assert_eq!(DealerCrypto::load(&path).unwrap(), d);
    }
}
