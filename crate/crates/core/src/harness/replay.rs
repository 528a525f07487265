// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Re-execution of a recorded run plus independent transcript audits.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::message::Message;
use crate::primitives::{Block, BlockStore, Digest, Height, ProtocolConfig, ReplicaId, Time, View};
use crate::transcript::{RecordKind, Transcript, TranscriptError};

use super::analysis::Timeline;
use super::run::simulate;
use super::scenario::{Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("embedded scenario is invalid: {0}")]
    Scenario(#[from] ScenarioError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub index: usize,
    pub time: Time,
    pub seq: u64,
    pub what: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub records: usize,
    pub divergence: Option<Divergence>,
    pub audit_failures: Vec<String>,
}

impl ReplayOutcome {
    pub fn passed(&self) -> bool {
        self.divergence.is_none() && self.audit_failures.is_empty()
    }
}

/// Recovers the scenario a transcript was produced from.
pub fn embedded_scenario(t: &Transcript) -> Result<Scenario, ReplayError> {
    let mut s = Scenario::parse(&t.init_text()?)?;
    if let Some(init) = t.records.iter().find(|r| r.kind == RecordKind::Init) {
        s.seed = init.aux[0];
    }
    Ok(s)
}

pub fn replay(bytes: &[u8]) -> Result<ReplayOutcome, ReplayError> {
    let recorded = Transcript::parse(bytes)?;
    let scenario = embedded_scenario(&recorded)?;
    let (fresh_bytes, _) = simulate(&scenario);
    let fresh = Transcript::parse(&fresh_bytes)?;

    let mut out = ReplayOutcome { records: recorded.records.len(), ..Default::default() };
    out.divergence = first_divergence(&recorded, &fresh);
    out.audit_failures = audit(&scenario, &recorded);
    Ok(out)
}

fn first_divergence(recorded: &Transcript, fresh: &Transcript) -> Option<Divergence> {
    for (index, (a, b)) in recorded.records.iter().zip(&fresh.records).enumerate() {
        let header_differs = (a.time, a.seq, a.actor, a.kind, a.aux, a.digest) != (b.time, b.seq, b.actor, b.kind, b.aux, b.digest);
        let payload_differs = a.payload.is_some() && a.payload != b.payload;
        if header_differs || payload_differs {
            let what = if header_differs { "record header" } else { "payload bytes" };
            return Some(Divergence { index, time: a.time, seq: a.seq, what: format!("{} {what}", a.kind.name()) });
        }
    }
    if recorded.records.len() != fresh.records.len() {
        let index = recorded.records.len().min(fresh.records.len());
        let (time, seq) = recorded.records.get(index).or(fresh.records.get(index)).map_or((0, 0), |r| (r.time, r.seq));
        return Some(Divergence { index, time, seq, what: "record count".into() });
    }
    None
}

/// Checks that hold for every honest replica whatever the scenario.
pub fn audit(scenario: &Scenario, t: &Transcript) -> Vec<String> {
    let mut fails = Vec::new();
    // payload integrity
    for (i, r) in t.records.iter().enumerate() {
        if matches!(r.kind, RecordKind::Send | RecordKind::Deliver | RecordKind::Init | RecordKind::Probe) {
            if let Some(p) = &r.payload {
                if Digest::of(p) != r.digest {
                    fails.push(format!("record {i} at ({}, {}): payload does not match digest", r.time, r.seq));
                }
            }
        }
    }
    let tl = Timeline::new(t);
    let faulty = scenario.faults.faulty();
    let honest = |r: &ReplicaId| !faulty.contains(r);
    let key = crate::primitives::Keyring::from_seed(scenario.seed).verify_key();

    let mut votes: BTreeMap<(ReplicaId, Height, View), Digest> = BTreeMap::new();
    let mut blamed: BTreeMap<ReplicaId, BTreeSet<View>> = BTreeMap::new();
    let mut first_sender: BTreeMap<Digest, ReplicaId> = BTreeMap::new();
    for s in &tl.sends {
        let Some(m) = tl.message(&s.digest) else {
            fails.push(format!("send at {} carries an undecodable message", s.time));
            continue;
        };
        let first = *first_sender.entry(s.digest).or_insert(s.from);
        // authenticator boundary: honest-signed messages originate at their signer
        let signer = match m {
            Message::Vote(v) => Some(v.voter),
            Message::Blame(b) => Some(b.blamer),
            Message::Status(st) => Some(st.sender),
            Message::Proposal(p) => Some(p.proposer),
            Message::BlameCert(_) => None,
        };
        if let Some(sig) = signer {
            if honest(&sig) && first != sig {
                fails.push(format!("{} first sent a message signed by honest {}", first, sig));
            }
        }
        if !honest(&s.from) {
            continue;
        }
        match m {
            Message::Vote(v) if v.voter == s.from => {
                let e = votes.entry((s.from, v.height, v.view)).or_insert(v.block);
                if *e != v.block {
                    fails.push(format!("{} voted twice at height {} view {}", s.from, v.height, v.view));
                }
                if blamed.get(&s.from).is_some_and(|b| b.contains(&v.view)) {
                    fails.push(format!("{} voted in view {} after blaming it", s.from, v.view));
                }
            }
            Message::Proposal(p) if p.proposer == s.from => {
                if blamed.get(&s.from).is_some_and(|b| b.contains(&p.view)) {
                    fails.push(format!("{} proposed in view {} after blaming it", s.from, p.view));
                }
            }
            Message::Blame(b) if b.blamer == s.from => {
                blamed.entry(s.from).or_default().insert(b.view);
            }
            _ => {}
        }
    }
    fails.extend(audit_locks(&tl, &faulty, &scenario.protocol));
    fails.extend(audit_direct_commits(scenario, &tl, &key));
    fails.sort();
    fails.dedup();
    fails
}

type Learned = (Vec<Digest>, Vec<(Digest, (View, Height))>);

/// Blocks and certificates one replica has taken in.
#[derive(Default)]
struct Held {
    known: BTreeSet<Digest>,
    pending: Vec<(Digest, (View, Height))>,
    best: (View, Height),
}

impl Held {
    fn learn(&mut self, (blocks, certs): Learned) {
        self.known.extend(blocks);
        self.pending.extend(certs);
        let (known, best) = (&self.known, &mut self.best);
        self.pending.retain(|(block, rank)| {
            if known.contains(block) {
                *best = (*best).max(*rank);
                false
            } else {
                true
            }
        });
    }
}

/// A status an honest replica sends carries a certificate ranked at least as
/// high as every certificate it had received for a block it held. Messages
/// for a later view only count once the replica has entered that view, and
/// its entry status goes out before it reads them.
fn audit_locks(tl: &Timeline, faulty: &BTreeSet<ReplicaId>, cfg: &ProtocolConfig) -> Vec<String> {
    let mut fails = Vec::new();
    let mut held: BTreeMap<ReplicaId, Held> = BTreeMap::new();
    let mut current: BTreeMap<ReplicaId, View> = BTreeMap::new();
    let mut deferred: BTreeMap<ReplicaId, Vec<(View, Learned)>> = BTreeMap::new();

    // walk deliveries and sends in record order
    let mut di = 0;
    for s in &tl.sends {
        while di < tl.delivers.len() && tl.delivers[di].time <= s.time {
            let d = &tl.delivers[di];
            di += 1;
            if faulty.contains(&d.to) {
                continue;
            }
            let Some(m) = tl.message(&d.digest) else { continue };
            let mut blocks = Vec::new();
            let mut certs = Vec::new();
            let view = match m {
                Message::Proposal(p) if p.proposer == cfg.leader(p.view) => {
                    blocks.push(p.block.digest());
                    certs.push((p.prev_cert.block, p.prev_cert.rank()));
                    if let Some(set) = &p.status {
                        for st in &set.statuses {
                            blocks.push(st.locked_block.digest());
                            certs.push((st.cert.block, st.cert.rank()));
                        }
                    }
                    p.view
                }
                Message::Status(st) => {
                    blocks.push(st.locked_block.digest());
                    certs.push((st.cert.block, st.cert.rank()));
                    st.view
                }
                _ => continue,
            };
            if view > current.get(&d.to).copied().unwrap_or(0) {
                deferred.entry(d.to).or_default().push((view, (blocks, certs)));
            } else {
                held.entry(d.to).or_default().learn((blocks, certs));
            }
        }
        if faulty.contains(&s.from) {
            continue;
        }
        if let Some(Message::Status(st)) = tl.message(&s.digest) {
            if st.sender == s.from {
                let need = held.get(&s.from).map_or((0, 0), |h| h.best);
                if st.cert.rank() < need {
                    fails.push(format!("{} sent status for view {} below a certificate it held", s.from, st.view));
                }
                let cur = current.entry(s.from).or_insert(0);
                *cur = (*cur).max(st.view);
                let cur = *cur;
                if let Some(list) = deferred.get_mut(&s.from) {
                    let (due, later): (Vec<_>, Vec<_>) = list.drain(..).partition(|(v, _)| *v <= cur);
                    *list = later;
                    for (_, l) in due {
                        held.entry(s.from).or_default().learn(l);
                    }
                }
            }
        }
    }
    fails
}

/// Every certificate ranked at or above a correct client's direct CR1 commit
/// is for the committed block or a descendant of it.
fn audit_direct_commits(scenario: &Scenario, tl: &Timeline, key: &crate::primitives::VerifyKey) -> Vec<String> {
    let cfg = &scenario.protocol;
    let q = cfg.quorum();
    let mut store = BlockStore::new();
    let mut blocks: Vec<Block> = Vec::new();
    let mut certified: BTreeSet<(View, Height, Digest)> = BTreeSet::new();
    let mut votes: BTreeMap<(Digest, View, Height), BTreeSet<ReplicaId>> = BTreeMap::new();
    for m in tl.messages.values() {
        match m {
            Message::Proposal(p) => {
                blocks.push(p.block.clone());
                if !p.prev_cert.is_genesis() {
                    certified.insert((p.prev_cert.view, p.prev_cert.height, p.prev_cert.block));
                }
                if let Some(set) = &p.status {
                    for st in &set.statuses {
                        blocks.push(st.locked_block.clone());
                    }
                }
            }
            Message::Status(st) => blocks.push(st.locked_block.clone()),
            Message::Vote(v) if v.verify(key) => {
                votes.entry((v.block, v.view, v.height)).or_default().insert(v.voter);
            }
            _ => {}
        }
    }
    for ((b, v, h), voters) in votes {
        if voters.len() >= q {
            certified.insert((v, h, b));
        }
    }
    for b in blocks {
        store.insert(b);
    }
    let mut fails = Vec::new();
    for c in &tl.commits {
        let Some(spec) = scenario.clients.get(c.client) else { continue };
        if c.cr2 || !c.direct || !scenario.client_safe(&spec.assumption) {
            continue;
        }
        for (v, h, b) in certified.range((c.view, c.height, Digest::ZERO)..) {
            if !(b == &c.block || store.extends(b, &c.block).unwrap_or(false)) {
                fails.push(format!(
                    "certificate ({v}, {h}) for {} conflicts with direct commit of {} by {}",
                    b.short(),
                    c.block.short(),
                    spec.name
                ));
            }
        }
    }
    fails
}
