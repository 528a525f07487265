// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Faulty replicas. A single controller owns every faulty id; each id keeps
//! an honest replica as a shim that either runs as-is or is muted while a
//! scripted attack speaks for it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{Blame, Message, Proposal, Status, StatusSet};
use crate::netsim::{DelayKind, DelayModel};
use crate::primitives::{
    Block, Certificate, Digest, Height, Keyring, ProtocolConfig, ReplicaId, Signer, Time, VerifyKey, View, Vote,
};
use crate::replica::{payload_for, Action, LockStamp, Replica, ReplicaReport};
use crate::Frac;

/// Interface the simulator uses to drive the faulty replicas.
pub trait Adversary {
    fn faulty(&self) -> &BTreeSet<ReplicaId>;
    fn start(&mut self, id: ReplicaId, now: Time) -> Vec<(ReplicaId, Action)>;
    fn on_message(&mut self, to: ReplicaId, from: ReplicaId, msg: &Message, now: Time) -> Vec<(ReplicaId, Action)>;
    fn on_timer(&mut self, id: ReplicaId, tag: u64, now: Time) -> Vec<(ReplicaId, Action)>;
    /// Requested delay for one message; the delay model clamps it.
    fn delay_override(&self, from: ReplicaId, to: ReplicaId, msg: &Message, now: Time) -> Option<Time>;
    /// What the faulty replica tells clients, if anything.
    fn report(&self, id: ReplicaId, now: Time) -> Option<ReplicaReport>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Every faulty replica runs the honest handler.
    #[default]
    Honest,
    /// Byzantine replicas send nothing; a-b-c replicas run honestly.
    Silent,
    /// A Byzantine leader sends one proposal to `partition` and a
    /// conflicting one to everybody else.
    Equivocate {
        #[serde(default)]
        partition: Vec<u32>,
    },
    /// Two conflicting chains, one committed by the victim in view 0 and
    /// the other extended in view 1.
    AbcDoubleCommit {
        #[serde(with = "crate::scalar::serde_frac")]
        victim_q_c: Frac,
    },
    /// Slow links hide an equivocation long enough for a client with a
    /// small delta to see two undisturbed windows.
    Cr2DelayAttack { victim_delta: Time },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Honest => "honest",
            Strategy::Silent => "silent",
            Strategy::Equivocate { .. } => "equivocate",
            Strategy::AbcDoubleCommit { .. } => "abc_double_commit",
            Strategy::Cr2DelayAttack { .. } => "cr2_delay_attack",
        }
    }

    pub const NAMES: [&'static str; 5] = ["honest", "silent", "equivocate", "abc_double_commit", "cr2_delay_attack"];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    #[serde(default)]
    pub byzantine: BTreeSet<u32>,
    #[serde(default)]
    pub abc: BTreeSet<u32>,
    #[serde(default)]
    pub strategy: Strategy,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FaultError {
    #[error("replica {0} is listed as both byzantine and abc")]
    Overlap(u32),
    #[error("faults.{field}: replica {id} is out of range for n = {n}")]
    OutOfRange { field: &'static str, id: u32, n: u32 },
    #[error("faults.strategy.partition: replica {id} is out of range for n = {n}")]
    PartitionOutOfRange { id: u32, n: u32 },
}

impl FaultConfig {
    pub fn validate(&self, n: u32) -> Result<(), FaultError> {
        for (field, set) in [("byzantine", &self.byzantine), ("abc", &self.abc)] {
            if let Some(&id) = set.iter().find(|&&id| id >= n) {
                return Err(FaultError::OutOfRange { field, id, n });
            }
        }
        if let Some(&id) = self.byzantine.intersection(&self.abc).next() {
            return Err(FaultError::Overlap(id));
        }
        if let Strategy::Equivocate { partition } = &self.strategy {
            if let Some(&id) = partition.iter().find(|&&id| id >= n) {
                return Err(FaultError::PartitionOutOfRange { id, n });
            }
        }
        Ok(())
    }

    pub fn faulty(&self) -> BTreeSet<ReplicaId> {
        self.byzantine.union(&self.abc).map(|&i| ReplicaId(i)).collect()
    }

    pub fn byzantine_fraction(&self, n: u32) -> Frac {
        Frac::new(self.byzantine.len() as i64, n as i64)
    }

    pub fn total_fraction(&self, n: u32) -> Frac {
        Frac::new((self.byzantine.len() + self.abc.len()) as i64, n as i64)
    }
}

/// Checks whether the scripted attack may run. The a-b-c contract forbids
/// attacking when the victim's rule cannot be broken.
pub fn attack_precondition(fc: &FaultConfig, cfg: &ProtocolConfig, delay: &DelayModel) -> Result<(), String> {
    let n = cfg.n as usize;
    let f = fc.byzantine.len() + fc.abc.len();
    let faulty = fc.faulty();
    let qr = cfg.quorum();
    match &fc.strategy {
        Strategy::AbcDoubleCommit { victim_q_c } => {
            let qc = cfg.quorum_for(victim_q_c).map_err(|e| e.to_string())?;
            if *victim_q_c < cfg.q_r {
                return Err("victim q_c is below q_r".into());
            }
            if f + n < qc + qr {
                return Err(format!("{f} faulty replicas cannot break q_c quorum {qc} (needs {})", qc + qr - n));
            }
            for v in [0, 1] {
                if !faulty.contains(&cfg.leader(v)) {
                    return Err(format!("leader of view {v} is not faulty"));
                }
            }
            match delay.kind {
                DelayKind::PartialSynchrony { gst, .. } if gst > cfg.timeout(0).saturating_mul(2) => Ok(()),
                DelayKind::PartialSynchrony { .. } => Err("gst must exceed two view-0 timeouts".into()),
                _ => Err("needs a partially synchronous network".into()),
            }
        }
        Strategy::Cr2DelayAttack { victim_delta } => {
            let DelayKind::Synchronous { delta } = delay.kind else {
                return Err("needs a synchronous network".into());
            };
            if delta <= *victim_delta {
                return Err(format!("network bound {delta} does not exceed victim delta {victim_delta}"));
            }
            let min = delay.min_delay;
            if delta < 4 * min + 2 * victim_delta {
                return Err(format!("bound {delta} leaves no window of 2*{victim_delta} with min delay {min}"));
            }
            if !faulty.contains(&cfg.leader(0)) {
                return Err("leader of view 0 is not faulty".into());
            }
            if f >= qr || n + f < 2 * qr {
                return Err("honest replicas cannot be split into two certifying groups".into());
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

type Out = Vec<(ReplicaId, Action)>;

fn send_to(out: &mut Out, from: ReplicaId, to: &BTreeSet<ReplicaId>, msg: &Message) {
    for t in to {
        out.push((from, Action::Send(*t, msg.clone())));
    }
}

/// Union of vote sets seen by any faulty replica.
#[derive(Default)]
struct VoteBook {
    votes: BTreeMap<(Digest, View), BTreeMap<ReplicaId, Vote>>,
}

impl VoteBook {
    fn add(&mut self, v: Vote) {
        self.votes.entry((v.block, v.view)).or_default().entry(v.voter).or_insert(v);
    }

    fn certificate(&self, block: &Digest, view: View, quorum: usize) -> Option<Certificate> {
        let set = self.votes.get(&(*block, view))?;
        if set.len() < quorum {
            return None;
        }
        Certificate::from_votes(set.values())
    }
}

struct Equivocation {
    partition: BTreeSet<ReplicaId>,
    done: BTreeSet<View>,
}

/// State of the two-chain attack against a CR1 client.
struct DoubleCommit {
    side_a: BTreeSet<ReplicaId>,
    side_b: BTreeSet<ReplicaId>,
    x: Vec<Proposal>,
    y: Vec<Proposal>,
    book: VoteBook,
    statuses: BTreeMap<ReplicaId, Status>,
    blamed: bool,
    gst: Time,
    active: bool,
}

/// State of the slow-link attack against a CR2 client.
struct DelayAttack {
    group_x: BTreeSet<ReplicaId>,
    group_y: BTreeSet<ReplicaId>,
    x: Vec<Proposal>,
    y: Vec<Proposal>,
    book: VoteBook,
    active: bool,
}

enum Mode {
    Shim,
    Silent,
    Equivocate(Equivocation),
    DoubleCommit(Box<DoubleCommit>),
    DelayAttack(Box<DelayAttack>),
}

pub struct Controller {
    cfg: ProtocolConfig,
    key: VerifyKey,
    faulty: BTreeSet<ReplicaId>,
    byzantine: BTreeSet<ReplicaId>,
    shims: BTreeMap<ReplicaId, Replica>,
    signers: BTreeMap<ReplicaId, Signer>,
    mode: Mode,
    refusal: Option<String>,
}

impl Controller {
    pub fn new(
        cfg: &ProtocolConfig,
        ring: &Keyring,
        faults: &FaultConfig,
        delay: &DelayModel,
        max_height: Height,
    ) -> Controller {
        let faulty = faults.faulty();
        let byzantine: BTreeSet<ReplicaId> = faults.byzantine.iter().map(|&i| ReplicaId(i)).collect();
        let shims = faulty
            .iter()
            .map(|&id| (id, Replica::new(cfg.clone(), ring.signer(id), ring.verify_key(), max_height)))
            .collect();
        let signers = faulty.iter().map(|&id| (id, ring.signer(id))).collect();
        let honest: Vec<ReplicaId> = (0..cfg.n).map(ReplicaId).filter(|r| !faulty.contains(r)).collect();
        let refusal = attack_precondition(faults, cfg, delay).err();
        let mode = match (&faults.strategy, &refusal) {
            (_, Some(_)) | (Strategy::Honest, _) => Mode::Shim,
            (Strategy::Silent, _) => Mode::Silent,
            (Strategy::Equivocate { partition }, _) => Mode::Equivocate(Equivocation {
                partition: partition.iter().map(|&i| ReplicaId(i)).collect(),
                done: BTreeSet::new(),
            }),
            (Strategy::AbcDoubleCommit { victim_q_c }, None) => {
                let qc = cfg.quorum_for(victim_q_c).expect("checked by precondition");
                let a = qc.saturating_sub(faulty.len());
                Mode::DoubleCommit(Box::new(DoubleCommit {
                    side_a: honest[..a].iter().copied().collect(),
                    side_b: honest[a..].iter().copied().collect(),
                    x: Vec::new(),
                    y: Vec::new(),
                    book: VoteBook::default(),
                    statuses: BTreeMap::new(),
                    blamed: false,
                    gst: delay.gst(),
                    active: true,
                }))
            }
            (Strategy::Cr2DelayAttack { .. }, None) => {
                let a = cfg.quorum() - faulty.len();
                Mode::DelayAttack(Box::new(DelayAttack {
                    group_x: honest[..a].iter().copied().collect(),
                    group_y: honest[a..].iter().copied().collect(),
                    x: Vec::new(),
                    y: Vec::new(),
                    book: VoteBook::default(),
                    active: true,
                }))
            }
        };
        Controller { cfg: cfg.clone(), key: ring.verify_key(), faulty, byzantine, shims, signers, mode, refusal }
    }

    /// Why the configured attack did not run, if it did not.
    pub fn refusal(&self) -> Option<&str> {
        self.refusal.as_deref()
    }

    fn attack_active(&self) -> bool {
        match &self.mode {
            Mode::DoubleCommit(s) => s.active,
            Mode::DelayAttack(s) => s.active,
            _ => false,
        }
    }

    /// Passes shim output through the strategy's filter.
    fn filter(&mut self, id: ReplicaId, actions: Vec<Action>) -> Out {
        let muted = self.attack_active() || (matches!(self.mode, Mode::Silent) && self.byzantine.contains(&id));
        let mut out = Vec::new();
        for a in actions {
            match a {
                Action::SetTimer { .. } | Action::CancelTimer => out.push((id, a)),
                _ if muted => {}
                // rebroadcasts of other leaders' proposals pass through unchanged
                Action::Broadcast(Message::Proposal(p)) if self.byzantine.contains(&id) && p.proposer == id => {
                    if let Mode::Equivocate(eq) = &mut self.mode {
                        if eq.done.insert(p.view) {
                            let eq_partition = eq.partition.clone();
                            self.equivocate(id, p, &eq_partition, &mut out);
                            continue;
                        }
                    }
                    out.push((id, Action::Broadcast(Message::Proposal(p))));
                }
                other => out.push((id, other)),
            }
        }
        out
    }

    fn equivocate(&self, id: ReplicaId, p: Proposal, partition: &BTreeSet<ReplicaId>, out: &mut Out) {
        let all: BTreeSet<ReplicaId> = (0..self.cfg.n).map(ReplicaId).collect();
        let side_a: BTreeSet<ReplicaId> = partition.union(&self.faulty).copied().collect();
        let side_b: BTreeSet<ReplicaId> = all.difference(&side_a).copied().collect();
        if partition.is_empty() || side_b.is_empty() {
            out.push((id, Action::Broadcast(Message::Proposal(p))));
            return;
        }
        let mut payload = p.block.payload.clone();
        payload.extend_from_slice(b"'");
        let twin = Block { payload, ..p.block.clone() };
        let twin_p = Proposal::new(&self.signers[&id], twin.clone(), p.view, p.prev_cert.clone(), p.status.clone());
        send_to(out, id, &side_a, &Message::Proposal(p));
        send_to(out, id, &side_b, &Message::Proposal(twin_p.clone()));
        // the other Byzantine replicas vote for the twin as well
        for b in &self.byzantine {
            let v = Vote::new(&self.signers[b], twin.digest(), twin.height, twin_p.view);
            send_to(out, *b, &side_b, &Message::Vote(v));
        }
    }

    fn propose(&self, leader: ReplicaId, block: Block, view: View, prev: Certificate, status: Option<StatusSet>) -> Proposal {
        Proposal::new(&self.signers[&leader], block, view, prev, status)
    }

    fn faulty_votes(&self, block: &Block, view: View, to: &BTreeSet<ReplicaId>, out: &mut Out) -> Vec<Vote> {
        let mut votes = Vec::new();
        for f in &self.faulty {
            let v = Vote::new(&self.signers[f], block.digest(), block.height, view);
            send_to(out, *f, to, &Message::Vote(v.clone()));
            votes.push(v);
        }
        votes
    }

    fn with_faulty(&self, set: &BTreeSet<ReplicaId>) -> BTreeSet<ReplicaId> {
        set.union(&self.faulty).copied().collect()
    }

    fn launch(&mut self, now: Time) -> Out {
        let leader = self.cfg.leader(0);
        let g = Block::genesis();
        let mut out = Vec::new();
        let (a, b) = match &self.mode {
            Mode::DoubleCommit(s) => (s.side_a.clone(), s.side_b.clone()),
            Mode::DelayAttack(s) => (s.group_x.clone(), s.group_y.clone()),
            _ => return out,
        };
        let _ = now;
        let mut payload_x = payload_for(0, 1, leader);
        payload_x.extend_from_slice(b"-x");
        let mut payload_y = payload_for(0, 1, leader);
        payload_y.extend_from_slice(b"-y");
        let x1 = self.propose(leader, Block::child_of(&g, payload_x), 0, Certificate::genesis(), None);
        let y1 = self.propose(leader, Block::child_of(&g, payload_y), 0, Certificate::genesis(), None);
        let (ta, tb) = (self.with_faulty(&a), self.with_faulty(&b));
        send_to(&mut out, leader, &ta, &Message::Proposal(x1.clone()));
        send_to(&mut out, leader, &tb, &Message::Proposal(y1.clone()));
        let mut votes = self.faulty_votes(&x1.block, 0, &ta, &mut out);
        votes.extend(self.faulty_votes(&y1.block, 0, &tb, &mut out));
        match &mut self.mode {
            Mode::DoubleCommit(s) => {
                s.x.push(x1);
                s.y.push(y1);
                votes.into_iter().for_each(|v| s.book.add(v));
            }
            Mode::DelayAttack(s) => {
                s.x.push(x1);
                s.y.push(y1);
                votes.into_iter().for_each(|v| s.book.add(v));
            }
            _ => {}
        }
        out
    }

    /// Extends `chain` by one block if its tip is certified.
    fn extend(&self, chain: &[Proposal], book: &VoteBook, view: View) -> Option<(Block, Certificate)> {
        let tip = chain.last()?;
        let cert = book.certificate(&tip.block.digest(), view, self.cfg.quorum())?;
        let leader = self.cfg.leader(view);
        let mut payload = payload_for(view, tip.block.height + 1, leader);
        payload.extend_from_slice(&tip.block.payload[tip.block.payload.len() - 2..]);
        Some((Block::child_of(&tip.block, payload), cert))
    }

    fn step_double_commit(&mut self, to: ReplicaId, msg: &Message) -> Out {
        let mut out = Vec::new();
        let Mode::DoubleCommit(s) = &mut self.mode else { return out };
        match msg {
            Message::Vote(v) if v.verify(&self.key) => s.book.add(v.clone()),
            Message::Status(st) if st.view == 1 && to == self.cfg.leader(1) && st.verify(&self.cfg, &self.key)
                && s.side_b.contains(&st.sender) => {
                    s.statuses.entry(st.sender).or_insert_with(|| st.clone());
                }
            _ => {}
        }
        if !s.active {
            return out;
        }
        let leader0 = self.cfg.leader(0);
        let s = match &self.mode {
            Mode::DoubleCommit(s) => s,
            _ => unreachable!(),
        };
        let (ta, tb) = (self.with_faulty(&s.side_a), self.with_faulty(&s.side_b));
        let mut new_x = None;
        let mut new_y = None;
        if s.x.len() == 1 {
            if let Some((b, c)) = self.extend(&s.x, &s.book, 0) {
                new_x = Some(self.propose(leader0, b, 0, c, None));
            }
        }
        if s.y.len() == 1 {
            if let Some((b, c)) = self.extend(&s.y, &s.book, 0) {
                new_y = Some(self.propose(leader0, b, 0, c, None));
            }
        }
        let mut votes = Vec::new();
        if let Some(p) = &new_x {
            send_to(&mut out, leader0, &ta, &Message::Proposal(p.clone()));
            votes.extend(self.faulty_votes(&p.block, 0, &ta, &mut out));
        }
        if let Some(p) = &new_y {
            send_to(&mut out, leader0, &tb, &Message::Proposal(p.clone()));
            votes.extend(self.faulty_votes(&p.block, 0, &tb, &mut out));
        }
        let q = self.cfg.quorum();
        let f = self.faulty.len();
        let mut blames = Vec::new();
        let mut y3 = None;
        {
            let Mode::DoubleCommit(s) = &mut self.mode else { unreachable!() };
            votes.into_iter().for_each(|v| s.book.add(v));
            s.x.extend(new_x);
            s.y.extend(new_y);
            let both_certified = s.x.len() == 2
                && s.y.len() == 2
                && s.book.certificate(&s.x[1].block.digest(), 0, q).is_some()
                && s.book.certificate(&s.y[1].block.digest(), 0, q).is_some();
            if both_certified && !s.blamed {
                s.blamed = true;
                blames = self.faulty.iter().copied().collect();
            }
            if s.blamed && s.statuses.len() + f >= q {
                let y2 = s.y[1].block.clone();
                let c2 = s.book.certificate(&y2.digest(), 0, q).expect("certified above");
                y3 = Some((y2, c2, s.statuses.values().take(q - f).cloned().collect::<Vec<_>>()));
            }
        }
        for b in blames {
            let blame = Blame::new(&self.signers[&b], 0, None);
            out.push((b, Action::Broadcast(Message::Blame(blame))));
        }
        if let Some((y2, c2, mut statuses)) = y3 {
            for fid in &self.faulty {
                statuses.push(Status::new(&self.signers[fid], 1, y2.clone(), c2.clone()));
            }
            statuses.sort_by_key(|s| s.sender);
            let leader1 = self.cfg.leader(1);
            let set = StatusSet { view: 1, statuses };
            let block = Block::child_of(&y2, payload_for(1, y2.height + 1, leader1));
            let p = self.propose(leader1, block.clone(), 1, c2, Some(set));
            let Mode::DoubleCommit(s) = &mut self.mode else { unreachable!() };
            // side A never saw branch Y; hand it the blocks first
            for old in &s.y {
                send_to(&mut out, leader1, &s.side_a, &Message::Proposal(old.clone()));
            }
            out.push((leader1, Action::Broadcast(Message::Proposal(p))));
            s.active = false;
            self.shims.get_mut(&leader1).expect("leader is faulty").adopt_proposal(1, block);
        }
        out
    }

    fn step_delay_attack(&mut self, msg: &Message) -> Out {
        let mut out = Vec::new();
        let Mode::DelayAttack(s) = &mut self.mode else { return out };
        if let Message::Vote(v) = msg {
            if v.verify(&self.key) {
                s.book.add(v.clone());
            }
        }
        if !s.active {
            return out;
        }
        let leader0 = self.cfg.leader(0);
        let s = match &self.mode {
            Mode::DelayAttack(s) => s,
            _ => unreachable!(),
        };
        let (tx, ty) = (self.with_faulty(&s.group_x), self.with_faulty(&s.group_y));
        let mut new_x = None;
        let mut new_y = None;
        let mut votes = Vec::new();
        if s.x.len() == 1 {
            // X2 is sent but never voted for by the faulty replicas
            if let Some((b, c)) = self.extend(&s.x, &s.book, 0) {
                let p = self.propose(leader0, b, 0, c, None);
                send_to(&mut out, leader0, &tx, &Message::Proposal(p.clone()));
                new_x = Some(p);
            }
        }
        if s.y.len() < 3 {
            if let Some((b, c)) = self.extend(&s.y, &s.book, 0) {
                let p = self.propose(leader0, b, 0, c, None);
                send_to(&mut out, leader0, &ty, &Message::Proposal(p.clone()));
                if s.y.len() == 1 {
                    votes = self.faulty_votes(&p.block, 0, &ty, &mut out);
                }
                new_y = Some(p);
            }
        }
        let Mode::DelayAttack(s) = &mut self.mode else { unreachable!() };
        votes.into_iter().for_each(|v| s.book.add(v));
        s.x.extend(new_x);
        s.y.extend(new_y);
        if s.x.len() == 2 && s.y.len() == 3 {
            s.active = false;
        }
        out
    }
}

impl Adversary for Controller {
    fn faulty(&self) -> &BTreeSet<ReplicaId> {
        &self.faulty
    }

    fn start(&mut self, id: ReplicaId, now: Time) -> Out {
        let shim_out = self.shims.get_mut(&id).map(|r| r.start(now)).unwrap_or_default();
        let mut out = self.filter(id, shim_out);
        if self.attack_active() && id == self.cfg.leader(0) {
            out.extend(self.launch(now));
        }
        out
    }

    fn on_message(&mut self, to: ReplicaId, _from: ReplicaId, msg: &Message, now: Time) -> Out {
        let shim_out = self.shims.get_mut(&to).map(|r| r.on_message(msg, now)).unwrap_or_default();
        let mut out = self.filter(to, shim_out);
        match self.mode {
            Mode::DoubleCommit(_) => out.extend(self.step_double_commit(to, msg)),
            Mode::DelayAttack(_) => out.extend(self.step_delay_attack(msg)),
            _ => {}
        }
        out
    }

    fn on_timer(&mut self, id: ReplicaId, tag: u64, now: Time) -> Out {
        let shim_out = self.shims.get_mut(&id).map(|r| r.on_timer(tag, now)).unwrap_or_default();
        self.filter(id, shim_out)
    }

    fn delay_override(&self, from: ReplicaId, to: ReplicaId, msg: &Message, now: Time) -> Option<Time> {
        let cross = |a: &BTreeSet<ReplicaId>, b: &BTreeSet<ReplicaId>| {
            (a.contains(&from) && b.contains(&to)) || (b.contains(&from) && a.contains(&to))
        };
        match &self.mode {
            Mode::DoubleCommit(s) if now < s.gst => Some(if cross(&s.side_a, &s.side_b) { Time::MAX } else { 0 }),
            Mode::DelayAttack(s) if msg.view() == 0 => {
                Some(if cross(&s.group_x, &s.group_y) { Time::MAX } else { 0 })
            }
            _ => None,
        }
    }

    fn report(&self, id: ReplicaId, now: Time) -> Option<ReplicaReport> {
        if matches!(self.mode, Mode::Silent) && self.byzantine.contains(&id) {
            return None;
        }
        let mut r = self.shims.get(&id)?.report(now);
        if let Mode::DelayAttack(s) = &self.mode {
            // claim both branches were locked at time zero and undisturbed
            if let Some(x1) = s.x.first() {
                r.t_lock.insert((1, 0), LockStamp { time: 0, block: x1.block.digest() });
            }
            if let Some(y2) = s.y.get(1) {
                r.t_lock.insert((2, 0), LockStamp { time: 0, block: y2.block.digest() });
            }
            r.t_equiv.retain(|(_, v), _| *v != 0);
            r.t_viewchange.remove(&0);
        }
        Some(r)
    }
}
