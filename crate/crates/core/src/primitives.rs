// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Blocks, digests, votes, certificates and the integer quorum arithmetic
//! every other module builds on.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{FromPrimitive, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Wire, Writer};
use crate::Frac;

/// Virtual time in integer ticks.
pub type Time = u64;
pub type View = u64;
pub type Height = u64;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

impl ReplicaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Round-robin leader schedule.
pub fn leader_of(view: View, n: u32) -> ReplicaId {
    ReplicaId((view % n as u64) as u32)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Wire for Digest {
    fn encode_to(&self, w: &mut Writer) {
        w.raw(&self.0);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Digest(r.array()?))
    }
}

/// A chain element. Genesis sits at height 0 with the all-zero parent.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Block {
    pub height: Height,
    pub payload: Vec<u8>,
    pub parent: Digest,
}

impl Block {
    pub fn genesis() -> Block {
        Block { height: 0, payload: Vec::new(), parent: Digest::ZERO }
    }

    pub fn child_of(parent: &Block, payload: Vec<u8>) -> Block {
        Block { height: parent.height + 1, payload, parent: parent.digest() }
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0 && self.parent == Digest::ZERO
    }

    /// Canonical encoding: height (u64 LE), payload length (u64 LE), payload,
    /// parent digest.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.encode()
    }

    pub fn digest(&self) -> Digest {
        digest(self)
    }
}

impl Wire for Block {
    fn encode_to(&self, w: &mut Writer) {
        w.u64(self.height).bytes(&self.payload).raw(&self.parent.0);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Block { height: r.u64()?, payload: r.bytes()?, parent: Digest::decode_from(r)? })
    }
}

/// SHA-256 over the canonical block encoding.
pub fn digest(block: &Block) -> Digest {
    Digest::of(&block.canonical_bytes())
}

pub fn genesis_digest() -> Digest {
    Block::genesis().digest()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuorumError {
    #[error("quorum fraction {0} outside (0, 1]")]
    FractionOutOfRange(String),
    #[error("replica count must be positive")]
    NoReplicas,
}

/// Smallest replica count strictly above `q·n` when `q·n` is integral,
/// otherwise `⌈q·n⌉`. Exact for any integer backing type.
pub fn quorum_count<T>(n: u64, q: &Ratio<T>) -> Result<u64, QuorumError>
where
    T: Integer + Clone + FromPrimitive + ToPrimitive + fmt::Display,
{
    if n == 0 {
        return Err(QuorumError::NoReplicas);
    }
    if *q <= Ratio::zero() || *q > Ratio::one() {
        return Err(QuorumError::FractionOutOfRange(crate::scalar::format_ratio(q)));
    }
    let scaled = q.clone() * Ratio::from_integer(T::from_u64(n).expect("replica count fits"));
    let count = if scaled.is_integer() { scaled.to_integer() + T::one() } else { scaled.ceil().to_integer() };
    Ok(count.to_u64().expect("quorum fits u64"))
}

/// Simulated signature: unforgeable inside the simulation because minting a
/// tag needs the keyring secret, which only [`Signer`] handles carry.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Auth {
    pub signer: ReplicaId,
    pub tag: [u8; 16],
}

impl Wire for Auth {
    fn encode_to(&self, w: &mut Writer) {
        w.u32(self.signer.0).raw(&self.tag);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Auth { signer: ReplicaId(r.u32()?), tag: r.array()? })
    }
}

fn mac(secret: &[u8; 32], signer: ReplicaId, msg: &Digest) -> [u8; 16] {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(signer.0.to_le_bytes());
    h.update(msg.0);
    let out: [u8; 32] = h.finalize().into();
    out[..16].try_into().unwrap()
}

/// Owns the simulation-wide secret; hands out per-identity signers.
#[derive(Clone)]
pub struct Keyring {
    secret: Arc<[u8; 32]>,
}

impl Keyring {
    pub fn from_seed(seed: u64) -> Keyring {
        let mut h = Sha256::new();
        h.update(b"flexbft-keyring");
        h.update(seed.to_le_bytes());
        Keyring { secret: Arc::new(h.finalize().into()) }
    }

    pub fn signer(&self, id: ReplicaId) -> Signer {
        Signer { id, secret: self.secret.clone() }
    }

    pub fn verify_key(&self) -> VerifyKey {
        VerifyKey { secret: self.secret.clone() }
    }
}

#[derive(Clone)]
pub struct Signer {
    id: ReplicaId,
    secret: Arc<[u8; 32]>,
}

impl Signer {
    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn sign(&self, msg: &Digest) -> Auth {
        Auth { signer: self.id, tag: mac(&self.secret, self.id, msg) }
    }
}

impl fmt::Debug for Signer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signer({})", self.id)
    }
}

/// Verification-only handle; cannot produce tags.
#[derive(Clone)]
pub struct VerifyKey {
    secret: Arc<[u8; 32]>,
}

impl VerifyKey {
    pub fn verify(&self, auth: &Auth, msg: &Digest) -> bool {
        auth.tag == mac(&self.secret, auth.signer, msg)
    }
}

impl fmt::Debug for VerifyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("VerifyKey")
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Vote {
    pub block: Digest,
    pub height: Height,
    pub view: View,
    pub voter: ReplicaId,
    pub auth: Auth,
}

impl Vote {
    pub fn signing_digest(block: &Digest, height: Height, view: View) -> Digest {
        let mut w = Writer::new();
        w.raw(b"vote").raw(&block.0).u64(height).u64(view);
        Digest::of(&w.finish())
    }

    pub fn new(signer: &Signer, block: Digest, height: Height, view: View) -> Vote {
        let auth = signer.sign(&Vote::signing_digest(&block, height, view));
        Vote { block, height, view, voter: signer.id(), auth }
    }

    pub fn verify(&self, key: &VerifyKey) -> bool {
        self.auth.signer == self.voter
            && key.verify(&self.auth, &Vote::signing_digest(&self.block, self.height, self.view))
    }
}

impl Wire for Vote {
    fn encode_to(&self, w: &mut Writer) {
        self.block.encode_to(w);
        w.u64(self.height).u64(self.view).u32(self.voter.0);
        self.auth.encode_to(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Vote {
            block: Digest::decode_from(r)?,
            height: r.u64()?,
            view: r.u64()?,
            voter: ReplicaId(r.u32()?),
            auth: Auth::decode_from(r)?,
        })
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Certificate {
    pub block: Digest,
    pub height: Height,
    pub view: View,
    pub votes: Vec<Vote>,
}

impl Certificate {
    /// The implicit view-0 certificate every replica starts with.
    pub fn genesis() -> Certificate {
        Certificate { block: genesis_digest(), height: 0, view: 0, votes: Vec::new() }
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0 && self.view == 0 && self.block == genesis_digest() && self.votes.is_empty()
    }

    /// Builds a certificate from votes on one (block, view); votes are
    /// sorted by voter so equal vote sets encode identically.
    pub fn from_votes<'a>(votes: impl IntoIterator<Item = &'a Vote>) -> Option<Certificate> {
        let mut votes: Vec<Vote> = votes.into_iter().cloned().collect();
        votes.sort_by_key(|v| v.voter);
        votes.dedup_by_key(|v| v.voter);
        let first = votes.first()?.clone();
        Some(Certificate { block: first.block, height: first.height, view: first.view, votes })
    }

    pub fn rank(&self) -> (View, Height) {
        (self.view, self.height)
    }
}

impl Wire for Certificate {
    fn encode_to(&self, w: &mut Writer) {
        self.block.encode_to(w);
        w.u64(self.height).u64(self.view);
        self.votes.encode_to(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Certificate {
            block: Digest::decode_from(r)?,
            height: r.u64()?,
            view: r.u64()?,
            votes: Vec::decode_from(r)?,
        })
    }
}

/// Orders certified blocks first by view, then by height.
pub fn rank_certificates(a: &Certificate, b: &Certificate) -> Ordering {
    a.rank().cmp(&b.rank())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n: u32,
    #[serde(with = "crate::scalar::serde_frac")]
    pub q_r: Frac,
    pub base_timeout: Time,
    #[serde(default = "default_growth")]
    pub timeout_growth: u32,
}

fn default_growth() -> u32 {
    2
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("q_r must exceed 1/2 (got {0})")]
    QuorumTooSmall(String),
    #[error("q_r must be at most 1 (got {0})")]
    QuorumTooLarge(String),
    #[error("n must be positive")]
    NoReplicas,
    #[error("base_timeout must be positive")]
    ZeroTimeout,
    #[error("timeout_growth must be at least 1")]
    ZeroGrowth,
}

impl ProtocolConfig {
    pub fn new(n: u32, q_r: Frac, base_timeout: Time) -> Result<ProtocolConfig, ConfigError> {
        let cfg = ProtocolConfig { n, q_r, base_timeout, timeout_growth: 2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::NoReplicas);
        }
        if self.q_r <= Frac::new(1, 2) {
            return Err(ConfigError::QuorumTooSmall(crate::scalar::format_ratio(&self.q_r)));
        }
        if self.q_r > Frac::one() {
            return Err(ConfigError::QuorumTooLarge(crate::scalar::format_ratio(&self.q_r)));
        }
        if self.base_timeout == 0 {
            return Err(ConfigError::ZeroTimeout);
        }
        if self.timeout_growth == 0 {
            return Err(ConfigError::ZeroGrowth);
        }
        Ok(())
    }

    /// Replica quorum size for certificates, blames and status sets.
    pub fn quorum(&self) -> usize {
        quorum_count(self.n as u64, &self.q_r).expect("validated config") as usize
    }

    pub fn quorum_for(&self, q: &Frac) -> Result<usize, QuorumError> {
        quorum_count(self.n as u64, q).map(|c| c as usize)
    }

    pub fn leader(&self, view: View) -> ReplicaId {
        leader_of(view, self.n)
    }

    /// `base_timeout × growth^view`, saturating.
    pub fn timeout(&self, view: View) -> Time {
        let exp = view.min(62) as u32;
        let factor = (self.timeout_growth as u64).checked_pow(exp).unwrap_or(u64::MAX);
        self.base_timeout.saturating_mul(factor)
    }
}

/// True iff voters are distinct, every authenticator verifies, all votes
/// name the certificate's (block, height, view) and there are enough of them.
pub fn verify_certificate(cert: &Certificate, cfg: &ProtocolConfig, key: &VerifyKey) -> bool {
    if cert.is_genesis() {
        return true;
    }
    let mut voters = BTreeSet::new();
    for v in &cert.votes {
        if v.block != cert.block || v.view != cert.view || v.height != cert.height {
            return false;
        }
        if v.voter.0 >= cfg.n || !voters.insert(v.voter) || !v.verify(key) {
            return false;
        }
    }
    voters.len() >= cfg.quorum()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LookupError {
    #[error("unknown block {0:?}")]
    Unknown(Digest),
}

/// Append-only block store. Blocks whose parent is not yet known are held
/// aside and attached once the parent arrives.
#[derive(Clone, Debug)]
pub struct BlockStore {
    blocks: HashMap<Digest, Block>,
    orphans: HashMap<Digest, Vec<Block>>,
}

impl Default for BlockStore {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockStore {
    pub fn new() -> BlockStore {
        let mut blocks = HashMap::new();
        let g = Block::genesis();
        blocks.insert(g.digest(), g);
        BlockStore { blocks, orphans: HashMap::new() }
    }

    pub fn get(&self, d: &Digest) -> Option<&Block> {
        self.blocks.get(d)
    }

    pub fn contains(&self, d: &Digest) -> bool {
        self.blocks.contains_key(d)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Inserts a block; returns the digests that became resolvable (the
    /// block itself plus any orphans it unlocked), in insertion order.
    pub fn insert(&mut self, block: Block) -> Vec<Digest> {
        let d = block.digest();
        if self.blocks.contains_key(&d) || block.is_genesis() {
            return Vec::new();
        }
        if block.height == 0 {
            // non-genesis block claiming height 0 is invalid
            return Vec::new();
        }
        match self.blocks.get(&block.parent) {
            Some(parent) if parent.height + 1 == block.height => {}
            Some(_) => return Vec::new(),
            None => {
                let pending = self.orphans.entry(block.parent).or_default();
                if !pending.iter().any(|b| b == &block) {
                    pending.push(block);
                }
                return Vec::new();
            }
        }
        let mut resolved = Vec::new();
        let mut stack = vec![block];
        while let Some(b) = stack.pop() {
            let d = b.digest();
            if self.blocks.contains_key(&d) {
                continue;
            }
            let parent_ok = self.blocks.get(&b.parent).is_some_and(|p| p.height + 1 == b.height);
            if !parent_ok {
                continue;
            }
            self.blocks.insert(d, b);
            resolved.push(d);
            if let Some(children) = self.orphans.remove(&d) {
                stack.extend(children.into_iter().rev());
            }
        }
        resolved
    }

    fn lookup(&self, d: &Digest) -> Result<&Block, LookupError> {
        self.blocks.get(d).ok_or(LookupError::Unknown(*d))
    }

    /// Digest of the ancestor of `d` at `height` (or `d` itself).
    pub fn ancestor_at(&self, d: &Digest, height: Height) -> Result<Option<Digest>, LookupError> {
        let mut cur = self.lookup(d)?;
        let mut cur_d = *d;
        if cur.height < height {
            return Ok(None);
        }
        while cur.height > height {
            cur_d = cur.parent;
            cur = self.lookup(&cur_d)?;
        }
        Ok(Some(cur_d))
    }

    /// True iff `ancestor` equals `descendant` or lies on its parent chain.
    pub fn extends(&self, descendant: &Digest, ancestor: &Digest) -> Result<bool, LookupError> {
        let anc = self.lookup(ancestor)?;
        Ok(self.ancestor_at(descendant, anc.height)? == Some(*ancestor))
    }

    pub fn equivocates(&self, a: &Digest, b: &Digest) -> Result<bool, LookupError> {
        Ok(a != b && !self.extends(a, b)? && !self.extends(b, a)?)
    }

    /// Chain from height 1 up to `d`, inclusive.
    pub fn chain_to(&self, d: &Digest) -> Result<Vec<Digest>, LookupError> {
        let mut out = Vec::new();
        let mut cur = *d;
        loop {
            let b = self.lookup(&cur)?;
            if b.height == 0 {
                break;
            }
            out.push(cur);
            cur = b.parent;
        }
        out.reverse();
        Ok(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Digest, &Block)> {
        self.blocks.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: u32, q: Frac) -> ProtocolConfig {
        ProtocolConfig::new(n, q, 100).unwrap()
    }

    #[test]
    fn genesis_digest_is_pinned() {
        // sha256 of 8 zero bytes (height) + 8 zero bytes (len) + 32 zero bytes (parent)
        assert_eq!(
            genesis_digest().to_hex(),
            "17b0761f87b081d5cf10757ccc89f12be355c70e2e29df288b65b30710dcbcd1"
        );
        assert_eq!(Block::genesis().canonical_bytes().len(), 48);
    }

    #[test]
    fn digest_distinguishes_payloads_and_is_stable() {
        let g = Block::genesis();
        let a = Block::child_of(&g, b"a".to_vec());
        let b = Block::child_of(&g, b"b".to_vec());
        assert_ne!(a.digest(), b.digest());
        let oneoff = Block { height: 1, payload: b"a".to_vec(), parent: Digest::ZERO };
        assert_eq!(oneoff.digest().to_hex(), "d1f6554e45a69a31393ac679099470e1c45e4aad1dda5a7abf5f4f1236d18fb5");
        assert_eq!(a.digest(), a.clone().digest());
    }

    #[test]
    fn quorum_count_examples() {
        assert_eq!(quorum_count(3, &Frac::new(1, 2)).unwrap(), 2);
        assert_eq!(quorum_count(4, &Frac::new(2, 3)).unwrap(), 3);
        assert_eq!(quorum_count(10, &Frac::new(7, 10)).unwrap(), 8);
        assert_eq!(quorum_count(10, &Frac::new(3, 5)).unwrap(), 7);
        assert_eq!(quorum_count(10, &Frac::new(4, 5)).unwrap(), 9);
        assert_eq!(quorum_count(30, &Frac::new(2, 3)).unwrap(), 21);
        assert_eq!(quorum_count(5, &Frac::one()).unwrap(), 6);
        assert!(quorum_count(4, &Frac::new(0, 1)).is_err());
        assert!(quorum_count(4, &Frac::new(5, 4)).is_err());
        assert!(quorum_count(0, &Frac::new(1, 2)).is_err());
    }

    #[test]
    fn quorum_count_is_generic_over_integer_width() {
        let q = Ratio::<i128>::new(2, 3);
        assert_eq!(quorum_count(4, &q).unwrap(), 3);
        let q = Ratio::<num_bigint::BigInt>::new(7.into(), 10.into());
        assert_eq!(quorum_count(10, &q).unwrap(), 8);
    }

    #[test]
    fn config_rejects_small_quorum() {
        let err = ProtocolConfig::new(4, Frac::new(1, 3), 10).unwrap_err();
        assert_eq!(err.to_string(), "q_r must exceed 1/2 (got 1/3)");
        assert!(ProtocolConfig::new(4, Frac::new(1, 2), 10).is_err());
    }

    #[test]
    fn timeout_grows_exponentially_and_saturates() {
        let c = cfg(4, Frac::new(2, 3));
        assert_eq!(c.timeout(0), 100);
        assert_eq!(c.timeout(3), 800);
        assert_eq!(c.timeout(500), u64::MAX);
    }

    fn chain(store: &mut BlockStore, len: u64, tag: &str) -> Vec<Block> {
        let mut out = vec![Block::genesis()];
        for i in 0..len {
            let b = Block::child_of(out.last().unwrap(), format!("{tag}{i}").into_bytes());
            store.insert(b.clone());
            out.push(b);
        }
        out
    }

    #[test]
    fn extends_and_equivocates() {
        let mut s = BlockStore::new();
        let c = chain(&mut s, 3, "x");
        let (b1, b2, b3) = (c[1].digest(), c[2].digest(), c[3].digest());
        assert!(s.extends(&b1, &b1).unwrap());
        assert!(s.extends(&b3, &b1).unwrap());
        assert!(!s.extends(&b1, &b3).unwrap());
        let sib = Block::child_of(&c[1], b"sib".to_vec());
        s.insert(sib.clone());
        assert!(!s.extends(&sib.digest(), &b2).unwrap());
        assert!(s.equivocates(&sib.digest(), &b2).unwrap());
        assert!(!s.equivocates(&b2, &b1).unwrap());
        assert!(!s.equivocates(&b2, &b2).unwrap());
        assert_eq!(s.extends(&Digest::ZERO, &b1), Err(LookupError::Unknown(Digest::ZERO)));
        assert_eq!(s.chain_to(&b3).unwrap(), vec![b1, b2, b3]);
    }

    #[test]
    fn orphans_attach_when_parent_arrives() {
        let mut s = BlockStore::new();
        let g = Block::genesis();
        let b1 = Block::child_of(&g, b"1".to_vec());
        let b2 = Block::child_of(&b1, b"2".to_vec());
        let b3 = Block::child_of(&b2, b"3".to_vec());
        assert!(s.insert(b3.clone()).is_empty());
        assert!(s.insert(b2.clone()).is_empty());
        let resolved = s.insert(b1.clone());
        assert_eq!(resolved, vec![b1.digest(), b2.digest(), b3.digest()]);
        // wrong height is never attached
        let bad = Block { height: 5, payload: vec![], parent: b1.digest() };
        assert!(s.insert(bad).is_empty());
    }

    #[test]
    fn certificate_verification() {
        let ring = Keyring::from_seed(1);
        let key = ring.verify_key();
        let c = cfg(4, Frac::new(2, 3));
        let b = Block::child_of(&Block::genesis(), b"p".to_vec()).digest();
        let votes: Vec<Vote> = (0..3).map(|i| Vote::new(&ring.signer(ReplicaId(i)), b, 1, 2)).collect();
        let cert = Certificate::from_votes(&votes).unwrap();
        assert!(verify_certificate(&cert, &c, &key));

        let mut dup = cert.clone();
        dup.votes[2] = dup.votes[1].clone();
        assert!(!verify_certificate(&dup, &c, &key));

        let mut mixed = cert.clone();
        mixed.votes[2] = Vote::new(&ring.signer(ReplicaId(2)), b, 1, 3);
        assert!(!verify_certificate(&mixed, &c, &key));

        let mut forged = cert.clone();
        forged.votes[0].voter = ReplicaId(3);
        assert!(!verify_certificate(&forged, &c, &key));
        assert!(verify_certificate(&Certificate::genesis(), &c, &key));
    }

    #[test]
    fn ranking_examples() {
        let mk = |view, height| Certificate { block: Digest::ZERO, height, view, votes: vec![] };
        assert_eq!(rank_certificates(&mk(3, 2), &mk(2, 9)), Ordering::Greater);
        assert_eq!(rank_certificates(&mk(2, 5), &mk(2, 4)), Ordering::Greater);
        assert_eq!(rank_certificates(&mk(2, 5), &mk(2, 5)), Ordering::Equal);
    }

    proptest! {
        #[test]
        fn quorum_count_monotone(n in 1u64..=100, a in 1i64..=30, b in 1i64..=30, d in 1i64..=30) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assume!(hi <= d);
            let q1 = Frac::new(lo, d);
            let q2 = Frac::new(hi, d);
            prop_assert!(quorum_count(n, &q1).unwrap() <= quorum_count(n, &q2).unwrap());
        }

        #[test]
        fn rank_is_total_preorder(a in (0u64..5, 0u64..5), b in (0u64..5, 0u64..5), c in (0u64..5, 0u64..5)) {
            let mk = |(view, height): (u64, u64)| Certificate { block: Digest::ZERO, height, view, votes: vec![] };
            let (x, y, z) = (mk(a), mk(b), mk(c));
            prop_assert_eq!(rank_certificates(&x, &y), rank_certificates(&y, &x).reverse());
            if rank_certificates(&x, &y) != Ordering::Less && rank_certificates(&y, &z) != Ordering::Less {
                prop_assert!(rank_certificates(&x, &z) != Ordering::Less);
            }
        }

        #[test]
        fn extends_equivocates_trichotomy(shape in proptest::collection::vec(0usize..6, 1..10), i in 0usize..10, j in 0usize..10) {
            let mut s = BlockStore::new();
            let mut blocks = vec![Block::genesis()];
            for (k, p) in shape.iter().enumerate() {
                let parent = blocks[p % blocks.len()].clone();
                let b = Block::child_of(&parent, vec![k as u8]);
                s.insert(b.clone());
                blocks.push(b);
            }
            let a = blocks[i % blocks.len()].digest();
            let b = blocks[j % blocks.len()].digest();
            let related = s.extends(&a, &b).unwrap() || s.extends(&b, &a).unwrap();
            prop_assert!(related ^ s.equivocates(&a, &b).unwrap());
        }
    }

    #[test]
    fn quorum_intersection_exhaustive() {
        // any two quorums of sizes qa, qb over n replicas share >= qa + qb - n members,
        // and that is >= 1 whenever the fractions sum past 1
        for n in 1u64..=20 {
            for den in 1i64..=12 {
                for a in 1..=den {
                    for b in 1..=den {
                        let (qa, qb) = (Frac::new(a, den), Frac::new(b, den));
                        let ca = quorum_count(n, &qa).unwrap();
                        let cb = quorum_count(n, &qb).unwrap();
                        if qa + qb > Frac::one() && ca <= n && cb <= n {
                            assert!(ca + cb > n, "n={n} qa={qa} qb={qb}");
                        }
                    }
                }
            }
        }
    }
}
