// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Honest replica state machine: steady-state voting, leader monitoring and
//! view change. Handlers never wait on a delay bound; progress is driven
//! purely by message arrival and the per-view timeout.

use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{Wire, Writer};
use crate::message::{Blame, BlameCertificate, Evidence, Message, Proposal, Status, StatusSet};
use crate::primitives::{
    genesis_digest, Block, BlockStore, Certificate, Digest, Height, ProtocolConfig, ReplicaId, Signer, Time,
    VerifyKey, View, Vote,
};

/// Output of a handler; the simulator turns these into events.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    /// Deliver to every replica, the sender included.
    Broadcast(Message),
    Send(ReplicaId, Message),
    SetTimer { at: Time, tag: u64 },
    /// Drop the pending timer, if any.
    CancelTimer,
}

/// When a block was locked, and which block it was.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LockStamp {
    pub time: Time,
    pub block: Digest,
}

/// What a replica tells clients about its view of the protocol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplicaReport {
    pub replica: ReplicaId,
    pub time: Time,
    pub view: View,
    pub votes: Vec<Vote>,
    pub certificates: Vec<Certificate>,
    pub blocks: Vec<Block>,
    pub t_lock: BTreeMap<(Height, View), LockStamp>,
    /// Keyed by the lowest height at which two proposals of the view
    /// diverge; every block at that height or above is disturbed.
    pub t_equiv: BTreeMap<(Height, View), Time>,
    pub t_viewchange: BTreeMap<View, Time>,
}

impl ReplicaReport {
    /// Compact fingerprint used by transcripts; covers the timestamp maps and
    /// the sizes of the vote and certificate sets.
    pub fn fingerprint(&self) -> Digest {
        let mut w = Writer::new();
        w.u32(self.replica.0).u64(self.time).u64(self.view);
        w.u64(self.votes.len() as u64).u64(self.certificates.len() as u64).u64(self.blocks.len() as u64);
        for ((h, v), s) in &self.t_lock {
            w.u64(*h).u64(*v).u64(s.time);
            s.block.encode_to(&mut w);
        }
        w.u8(0xff);
        for ((h, v), t) in &self.t_equiv {
            w.u64(*h).u64(*v).u64(*t);
        }
        w.u8(0xff);
        for (v, t) in &self.t_viewchange {
            w.u64(*v).u64(*t);
        }
        Digest::of(&w.finish())
    }
}

pub fn payload_for(view: View, height: Height, proposer: ReplicaId) -> Vec<u8> {
    format!("v{view}-h{height}-r{}", proposer.0).into_bytes()
}

pub struct Replica {
    id: ReplicaId,
    cfg: ProtocolConfig,
    signer: Signer,
    key: VerifyKey,
    max_height: Height,

    store: BlockStore,
    view: View,
    view_entry: Time,
    lock: Certificate,
    certs: BTreeMap<(View, Digest), Certificate>,
    unresolved_certs: Vec<Certificate>,
    votes: BTreeMap<(Digest, View), BTreeMap<ReplicaId, Vote>>,

    proposals: BTreeMap<(View, Digest), (Proposal, Time)>,
    slots: BTreeMap<(View, Height), Vec<Digest>>,
    view_blocks: BTreeMap<View, Vec<Digest>>,
    awaiting_resolution: BTreeSet<(View, Digest)>,
    vote_slots: BTreeMap<(View, Height), Digest>,

    t_lock: BTreeMap<(Height, View), LockStamp>,
    t_equiv: BTreeMap<(Height, View), Time>,
    t_viewchange: BTreeMap<View, Time>,

    accepted: Option<Digest>,
    voted: BTreeSet<(Height, View)>,
    blamed: BTreeSet<View>,
    blames: BTreeMap<View, BTreeMap<ReplicaId, Blame>>,
    blame_cert_sent: BTreeSet<View>,
    statuses: BTreeMap<View, BTreeMap<ReplicaId, Status>>,
    evidence: BTreeMap<View, Evidence>,

    my_proposal: Option<Block>,
    first_done: bool,
    overrides: BTreeMap<View, Block>,

    parked: Vec<Proposal>,
    future: BTreeMap<View, Vec<Message>>,
    rebroadcast: BTreeSet<(View, Digest)>,
    timer_epoch: u64,
}

impl Replica {
    pub fn new(cfg: ProtocolConfig, signer: Signer, key: VerifyKey, max_height: Height) -> Replica {
        Replica {
            id: signer.id(),
            cfg,
            signer,
            key,
            max_height,
            store: BlockStore::new(),
            view: 0,
            view_entry: 0,
            lock: Certificate::genesis(),
            certs: BTreeMap::new(),
            unresolved_certs: Vec::new(),
            votes: BTreeMap::new(),
            proposals: BTreeMap::new(),
            slots: BTreeMap::new(),
            view_blocks: BTreeMap::new(),
            awaiting_resolution: BTreeSet::new(),
            vote_slots: BTreeMap::new(),
            t_lock: BTreeMap::new(),
            t_equiv: BTreeMap::new(),
            t_viewchange: BTreeMap::new(),
            accepted: None,
            voted: BTreeSet::new(),
            blamed: BTreeSet::new(),
            blames: BTreeMap::new(),
            blame_cert_sent: BTreeSet::new(),
            statuses: BTreeMap::new(),
            evidence: BTreeMap::new(),
            my_proposal: None,
            first_done: false,
            overrides: BTreeMap::new(),
            parked: Vec::new(),
            future: BTreeMap::new(),
            rebroadcast: BTreeSet::new(),
            timer_epoch: 0,
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    /// Highest-ranked certificate whose block this replica holds.
    pub fn lock(&self) -> &Certificate {
        &self.lock
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn has_blamed(&self, view: View) -> bool {
        self.blamed.contains(&view)
    }

    pub fn certificate(&self, view: View, block: &Digest) -> Option<&Certificate> {
        self.certs.get(&(view, *block))
    }

    pub fn t_equiv(&self) -> &BTreeMap<(Height, View), Time> {
        &self.t_equiv
    }

    pub fn t_lock(&self) -> &BTreeMap<(Height, View), LockStamp> {
        &self.t_lock
    }

    pub fn t_viewchange(&self) -> &BTreeMap<View, Time> {
        &self.t_viewchange
    }

    /// Makes this replica treat `block` as its own first proposal of `view`
    /// instead of building one from the status set. Used when an external
    /// script proposes on the replica's behalf.
    pub fn adopt_proposal(&mut self, view: View, block: Block) {
        if view == self.view {
            self.my_proposal = Some(block);
            self.first_done = true;
        } else {
            self.overrides.insert(view, block);
        }
    }

    fn idle(&self) -> bool {
        self.lock.height >= self.max_height
    }

    fn arm_timer(&mut self, now: Time, out: &mut Vec<Action>) {
        self.timer_epoch += 1;
        if self.idle() {
            out.push(Action::CancelTimer);
            return;
        }
        let at = now.saturating_add(self.cfg.timeout(self.view)).saturating_add(1);
        out.push(Action::SetTimer { at, tag: self.timer_epoch });
    }

    pub fn start(&mut self, now: Time) -> Vec<Action> {
        let mut out = Vec::new();
        self.view_entry = now;
        self.arm_timer(now, &mut out);
        self.apply_override();
        if self.cfg.leader(0) == self.id && !self.first_done {
            self.first_done = true;
            let g = Block::genesis();
            let block = Block::child_of(&g, payload_for(0, 1, self.id));
            self.propose(block, Certificate::genesis(), None, &mut out);
        }
        out
    }

    pub fn on_timer(&mut self, tag: u64, _now: Time) -> Vec<Action> {
        let mut out = Vec::new();
        if tag == self.timer_epoch && !self.blamed.contains(&self.view) && !self.idle() {
            self.blame(None, &mut out);
        }
        out
    }

    pub fn on_message(&mut self, msg: &Message, now: Time) -> Vec<Action> {
        let mut out = Vec::new();
        self.handle(msg, now, &mut out);
        out
    }

    fn handle(&mut self, msg: &Message, now: Time, out: &mut Vec<Action>) {
        match msg {
            Message::Proposal(p) => self.on_proposal(p, now, out),
            Message::Vote(v) => self.on_vote(v, now, out),
            Message::Blame(b) => self.on_blame(b, now, out),
            Message::BlameCert(c) => self.on_blame_cert(c, now, out),
            Message::Status(s) => self.on_status(s, now, out),
        }
    }

    fn valid_leader_proposal(&self, p: &Proposal) -> bool {
        p.proposer == self.cfg.leader(p.view) && p.verify(&self.cfg, &self.key)
    }

    fn on_proposal(&mut self, p: &Proposal, now: Time, out: &mut Vec<Action>) {
        if !self.valid_leader_proposal(p) {
            return;
        }
        if p.view > self.view {
            self.future.entry(p.view).or_default().push(Message::Proposal(p.clone()));
            return;
        }
        if !self.observe(p, now, out) {
            return;
        }
        if p.view == self.view {
            self.consider(p.clone(), now, out);
        }
    }

    /// Records blocks, certificates, lock and equivocation times carried by a
    /// leader-signed proposal. Returns false for duplicates.
    fn observe(&mut self, p: &Proposal, now: Time, out: &mut Vec<Action>) -> bool {
        let d = p.block.digest();
        if self.proposals.contains_key(&(p.view, d)) {
            return false;
        }
        self.proposals.insert((p.view, d), (p.clone(), now));

        if p.prev_cert.view == p.view && !p.prev_cert.is_genesis() {
            self.t_lock
                .entry((p.prev_cert.height, p.view))
                .or_insert(LockStamp { time: now, block: p.prev_cert.block });
        }

        let slot = self.slots.entry((p.view, p.block.height)).or_default();
        if !slot.contains(&d) {
            slot.push(d);
        }
        if slot.len() > 1 {
            let first = slot[0];
            self.note_equivocation(p.block.height, p.view, now);
            let first_p = self.proposals[&(p.view, first)].0.clone();
            self.evidence.entry(p.view).or_insert(Evidence { first: first_p, second: p.clone() });
        }

        let mut blocks = vec![p.block.clone()];
        if let Some(s) = &p.status {
            blocks.extend(s.statuses.iter().map(|s| s.locked_block.clone()));
        }
        self.awaiting_resolution.insert((p.view, d));
        for b in blocks {
            self.insert_block(b, now, out);
        }
        self.learn_cert(p.prev_cert.clone(), now, out);
        if let Some(s) = &p.status {
            for st in &s.statuses {
                self.learn_cert(st.cert.clone(), now, out);
            }
        }
        self.check_resolution(now, out);
        self.blame_if_equivocating(out);
        true
    }

    fn note_equivocation(&mut self, height: Height, view: View, at: Time) {
        let e = self.t_equiv.entry((height, view)).or_insert(at);
        if at < *e {
            *e = at;
        }
    }

    fn insert_block(&mut self, block: Block, now: Time, out: &mut Vec<Action>) {
        if self.store.insert(block).is_empty() {
            return;
        }
        let pending = std::mem::take(&mut self.unresolved_certs);
        for c in pending {
            self.learn_cert(c, now, out);
        }
    }

    /// Compares every newly resolvable proposal block of a view against the
    /// resolved ones and records the divergence height on conflict.
    fn check_resolution(&mut self, _now: Time, _out: &mut Vec<Action>) {
        let ready: Vec<(View, Digest)> =
            self.awaiting_resolution.iter().filter(|(_, d)| self.store.contains(d)).copied().collect();
        for (view, d) in ready {
            self.awaiting_resolution.remove(&(view, d));
            let arrival = self.proposals[&(view, d)].1;
            let others = self.view_blocks.entry(view).or_default().clone();
            for o in others {
                if !self.store.equivocates(&d, &o).unwrap_or(false) {
                    continue;
                }
                let fork = self.fork_height(&d, &o);
                let t = arrival.max(self.proposals[&(view, o)].1);
                self.note_equivocation(fork, view, t);
                if !self.evidence.contains_key(&view) {
                    let ev = Evidence {
                        first: self.proposals[&(view, o)].0.clone(),
                        second: self.proposals[&(view, d)].0.clone(),
                    };
                    self.evidence.insert(view, ev);
                }
            }
            self.view_blocks.entry(view).or_default().push(d);
        }
    }

    fn fork_height(&self, a: &Digest, b: &Digest) -> Height {
        let top = self.store.get(a).map_or(0, |x| x.height).min(self.store.get(b).map_or(0, |x| x.height));
        for h in 1..=top {
            if self.store.ancestor_at(a, h).ok() != self.store.ancestor_at(b, h).ok() {
                return h;
            }
        }
        top + 1
    }

    fn blame_if_equivocating(&mut self, out: &mut Vec<Action>) {
        if let Some(ev) = self.evidence.get(&self.view) {
            if !self.blamed.contains(&self.view) {
                let ev = ev.clone();
                self.blame(Some(ev), out);
            }
        }
    }

    fn blame(&mut self, evidence: Option<Evidence>, out: &mut Vec<Action>) {
        self.blamed.insert(self.view);
        self.parked.clear();
        out.push(Action::Broadcast(Message::Blame(Blame::new(&self.signer, self.view, evidence))));
    }

    fn status_highest(&self, p: &Proposal) -> Option<Digest> {
        match &p.status {
            Some(s) => s.highest().map(|s| s.cert.block),
            None if p.view == 0 => Some(genesis_digest()),
            None => None,
        }
    }

    /// Voting rule: (i) the first proposal of the view extends the highest
    /// certified block of its status set, or (ii) it extends the block
    /// accepted last in this view.
    fn consider(&mut self, p: Proposal, now: Time, out: &mut Vec<Action>) {
        if self.blamed.contains(&p.view) || self.voted.contains(&(p.block.height, p.view)) {
            return;
        }
        let d = p.block.digest();
        if !self.store.contains(&d) {
            self.parked.push(p);
            return;
        }
        let ok = match self.accepted {
            None => self.status_highest(&p) == Some(p.block.parent),
            Some(last) => p.block.parent == last,
        };
        if ok {
            self.accept(p, now, out);
            return;
        }
        let accepted_height = self.accepted.and_then(|a| self.store.get(&a)).map_or(0, |b| b.height);
        let could_follow = p.status.is_none() && (self.accepted.is_none() || p.block.height > accepted_height + 1);
        if could_follow {
            self.parked.push(p);
        }
    }

    fn accept(&mut self, p: Proposal, now: Time, out: &mut Vec<Action>) {
        let d = p.block.digest();
        self.voted.insert((p.block.height, p.view));
        self.accepted = Some(d);
        if p.proposer != self.id && self.rebroadcast.insert((p.view, d)) {
            out.push(Action::Broadcast(Message::Proposal(p.clone())));
        }
        let vote = Vote::new(&self.signer, d, p.block.height, p.view);
        out.push(Action::Broadcast(Message::Vote(vote)));
        self.arm_timer(now, out);
        self.retry_parked(now, out);
    }

    fn retry_parked(&mut self, now: Time, out: &mut Vec<Action>) {
        loop {
            let before = self.accepted;
            let parked = std::mem::take(&mut self.parked);
            for p in parked {
                if p.view == self.view {
                    self.consider(p, now, out);
                }
            }
            if self.accepted == before {
                break;
            }
        }
    }

    fn on_vote(&mut self, v: &Vote, now: Time, out: &mut Vec<Action>) {
        if v.voter.0 >= self.cfg.n || !v.verify(&self.key) {
            return;
        }
        // a vote for a different block at a height this view already has
        // a proposal for exposes an equivocating proposal
        let slot = self.vote_slots.entry((v.view, v.height)).or_insert(v.block);
        if *slot != v.block {
            self.note_equivocation(v.height, v.view, now);
        }
        let set = self.votes.entry((v.block, v.view)).or_default();
        if set.contains_key(&v.voter) {
            return;
        }
        set.insert(v.voter, v.clone());
        if set.len() == self.cfg.quorum() {
            let cert = Certificate::from_votes(set.values()).expect("non-empty vote set");
            self.learn_cert(cert, now, out);
        }
    }

    fn learn_cert(&mut self, cert: Certificate, now: Time, out: &mut Vec<Action>) {
        if cert.is_genesis() {
            return;
        }
        self.certs.entry((cert.view, cert.block)).or_insert_with(|| cert.clone());
        if !self.store.contains(&cert.block) {
            if !self.unresolved_certs.contains(&cert) {
                self.unresolved_certs.push(cert);
            }
            return;
        }
        if cert.rank() > self.lock.rank() {
            self.lock = cert;
        }
        self.maybe_propose_next(now, out);
    }

    fn maybe_propose_next(&mut self, _now: Time, out: &mut Vec<Action>) {
        if self.cfg.leader(self.view) != self.id || self.blamed.contains(&self.view) {
            return;
        }
        let Some(last) = self.my_proposal.clone() else { return };
        if last.height >= self.max_height {
            return;
        }
        let Some(cert) = self.certs.get(&(self.view, last.digest())).cloned() else { return };
        let block = Block::child_of(&last, payload_for(self.view, last.height + 1, self.id));
        self.propose(block, cert, None, out);
    }

    fn propose(&mut self, block: Block, prev_cert: Certificate, status: Option<StatusSet>, out: &mut Vec<Action>) {
        self.my_proposal = Some(block.clone());
        let p = Proposal::new(&self.signer, block, self.view, prev_cert, status);
        out.push(Action::Broadcast(Message::Proposal(p)));
    }

    fn on_blame(&mut self, b: &Blame, now: Time, out: &mut Vec<Action>) {
        if !b.verify(&self.cfg, &self.key) {
            return;
        }
        if let Some(ev) = &b.evidence {
            for p in [&ev.first, &ev.second] {
                if p.view == b.view && p.view <= self.view && self.valid_leader_proposal(p) {
                    self.observe(p, now, out);
                }
            }
        }
        if b.view < self.view {
            return;
        }
        let quorum = self.cfg.quorum();
        let set = self.blames.entry(b.view).or_default();
        set.entry(b.blamer).or_insert_with(|| b.stripped());
        if set.len() >= quorum {
            let cert = BlameCertificate { view: b.view, blames: set.values().cloned().collect() };
            self.change_view(cert, now, out);
        }
    }

    fn on_blame_cert(&mut self, c: &BlameCertificate, now: Time, out: &mut Vec<Action>) {
        if c.view < self.view || !c.verify(&self.cfg, &self.key) {
            return;
        }
        self.change_view(c.clone(), now, out);
    }

    fn change_view(&mut self, cert: BlameCertificate, now: Time, out: &mut Vec<Action>) {
        let w = cert.view;
        for u in self.view..=w {
            self.t_viewchange.entry(u).or_insert(now);
        }
        if self.blame_cert_sent.insert(w) {
            out.push(Action::Broadcast(Message::BlameCert(cert)));
        }
        self.enter_view(w + 1, now, out);
    }

    fn apply_override(&mut self) {
        if let Some(b) = self.overrides.remove(&self.view) {
            self.my_proposal = Some(b);
            self.first_done = true;
        }
    }

    fn enter_view(&mut self, view: View, now: Time, out: &mut Vec<Action>) {
        self.view = view;
        self.view_entry = now;
        self.accepted = None;
        self.parked.clear();
        self.my_proposal = None;
        self.first_done = false;
        self.apply_override();

        let locked = self.store.get(&self.lock.block).cloned().expect("locked block is stored");
        let status = Status::new(&self.signer, view, locked, self.lock.clone());
        out.push(Action::Send(self.cfg.leader(view), Message::Status(status)));
        self.arm_timer(now, out);

        let due: Vec<View> = self.future.range(..=view).map(|(v, _)| *v).collect();
        for v in due {
            for m in self.future.remove(&v).unwrap_or_default() {
                self.handle(&m, now, out);
            }
        }
        self.try_propose_first(out);
        self.maybe_propose_next(now, out);
        self.blame_if_equivocating(out);
    }

    fn on_status(&mut self, s: &Status, now: Time, out: &mut Vec<Action>) {
        if s.view < self.view || self.cfg.leader(s.view) != self.id || !s.verify(&self.cfg, &self.key) {
            return;
        }
        self.insert_block(s.locked_block.clone(), now, out);
        self.learn_cert(s.cert.clone(), now, out);
        let quorum = self.cfg.quorum();
        let set = self.statuses.entry(s.view).or_default();
        if set.len() < quorum {
            set.entry(s.sender).or_insert_with(|| s.clone());
        }
        self.try_propose_first(out);
    }

    fn try_propose_first(&mut self, out: &mut Vec<Action>) {
        if self.first_done || self.cfg.leader(self.view) != self.id || self.blamed.contains(&self.view) {
            return;
        }
        let Some(set) = self.statuses.get(&self.view) else { return };
        if set.len() < self.cfg.quorum() {
            return;
        }
        let status = StatusSet { view: self.view, statuses: set.values().cloned().collect() };
        let high = status.highest().expect("quorum is non-empty").clone();
        self.first_done = true;
        if high.cert.height >= self.max_height {
            return;
        }
        let block = Block::child_of(&high.locked_block, payload_for(self.view, high.cert.height + 1, self.id));
        self.propose(block, high.cert, Some(status), out);
    }

    pub fn report(&self, now: Time) -> ReplicaReport {
        let votes = self.votes.values().flat_map(|m| m.values().cloned()).collect();
        let certificates = self.certs.values().cloned().collect();
        let mut blocks: Vec<Block> = self.store.iter().filter(|(_, b)| b.height > 0).map(|(_, b)| b.clone()).collect();
        blocks.sort_by_key(|a| (a.height, a.digest()));
        ReplicaReport {
            replica: self.id,
            time: now,
            view: self.view,
            votes,
            certificates,
            blocks,
            t_lock: self.t_lock.clone(),
            t_equiv: self.t_equiv.clone(),
            t_viewchange: self.t_viewchange.clone(),
        }
    }
}
