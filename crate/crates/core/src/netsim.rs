// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Discrete-event simulator with a single virtual clock.
//!
//! Every handler invocation and every emission is appended to a
//! [`TranscriptWriter`]; two runs with the same inputs produce the same bytes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::adversary::Adversary;
use crate::client::{ClientState, ReportPool, Rule};
use crate::codec::Wire;
use crate::message::{Message, MessageKind};
use crate::primitives::{Digest, ProtocolConfig, ReplicaId, Time, VerifyKey, View};
use crate::replica::{Action, Replica, ReplicaReport};
use crate::transcript::{RecordKind, TranscriptWriter, WORLD};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayKind {
    /// Every message arrives within `delta`.
    Synchronous { delta: Time },
    /// Messages sent at or after `gst` arrive within `delta`; earlier ones
    /// arrive by `gst + delta`.
    PartialSynchrony { gst: Time, delta: Time },
    /// Fixed `default` delay unless a table entry matches.
    Scripted { default: Time },
}

/// One row of the per-message delay table. Empty fields match anything.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedDelay {
    #[serde(default)]
    pub from: Option<u32>,
    #[serde(default)]
    pub to: Option<u32>,
    #[serde(default)]
    pub message: Option<String>,
    #[serde(default)]
    pub view: Option<View>,
    pub delay: Time,
}

impl ScriptedDelay {
    fn matches(&self, from: ReplicaId, to: ReplicaId, kind: MessageKind, view: View) -> bool {
        self.from.is_none_or(|f| f == from.0)
            && self.to.is_none_or(|t| t == to.0)
            && self.message.as_deref().is_none_or(|m| MessageKind::parse(m) == Some(kind))
            && self.view.is_none_or(|v| v == view)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayModel {
    #[serde(flatten)]
    pub kind: DelayKind,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_min_delay")]
    pub min_delay: Time,
    #[serde(default)]
    pub scripted: Vec<ScriptedDelay>,
}

fn default_min_delay() -> Time {
    1
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DelayError {
    #[error("min_delay must be positive")]
    ZeroMinDelay,
    #[error("delay bound {bound} is below min_delay {min}")]
    BoundBelowMin { bound: Time, min: Time },
    #[error("scripted entry {index}: delay {delay} outside [{min}, {max}]")]
    ScriptedOutOfBounds { index: usize, delay: Time, min: Time, max: Time },
    #[error("scripted entry {index}: unknown message kind {name:?}")]
    UnknownMessageKind { index: usize, name: String },
}

impl DelayModel {
    pub fn synchronous(delta: Time, min_delay: Time, rng_seed: u64) -> DelayModel {
        DelayModel { kind: DelayKind::Synchronous { delta }, rng_seed, min_delay, scripted: Vec::new() }
    }

    pub fn partial_synchrony(gst: Time, delta: Time, min_delay: Time, rng_seed: u64) -> DelayModel {
        DelayModel { kind: DelayKind::PartialSynchrony { gst, delta }, rng_seed, min_delay, scripted: Vec::new() }
    }

    pub fn fixed(delay: Time) -> DelayModel {
        DelayModel { kind: DelayKind::Scripted { default: delay }, rng_seed: 0, min_delay: delay, scripted: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), DelayError> {
        let min = self.min_delay;
        if min == 0 {
            return Err(DelayError::ZeroMinDelay);
        }
        let bound = match self.kind {
            DelayKind::Synchronous { delta } | DelayKind::PartialSynchrony { delta, .. } => delta,
            DelayKind::Scripted { default } => default,
        };
        if bound < min {
            return Err(DelayError::BoundBelowMin { bound, min });
        }
        let max = match self.kind {
            DelayKind::Synchronous { delta } => delta,
            _ => Time::MAX,
        };
        for (index, e) in self.scripted.iter().enumerate() {
            if e.delay < min || e.delay > max {
                return Err(DelayError::ScriptedOutOfBounds { index, delay: e.delay, min, max });
            }
            if let Some(name) = &e.message {
                if MessageKind::parse(name).is_none() {
                    return Err(DelayError::UnknownMessageKind { index, name: name.clone() });
                }
            }
        }
        Ok(())
    }

    /// Largest delay a message sent after stabilisation can see.
    pub fn bound(&self) -> Time {
        match self.kind {
            DelayKind::Synchronous { delta } | DelayKind::PartialSynchrony { delta, .. } => delta,
            DelayKind::Scripted { default } => {
                self.scripted.iter().map(|e| e.delay).chain([default, self.min_delay]).max().unwrap()
            }
        }
    }

    /// Time after which the bound holds.
    pub fn gst(&self) -> Time {
        match self.kind {
            DelayKind::PartialSynchrony { gst, .. } => gst,
            _ => 0,
        }
    }

    /// True when some message can take longer than `delta` to arrive.
    pub fn permits_delay_above(&self, delta: Time) -> bool {
        match self.kind {
            DelayKind::Synchronous { delta: d } => d > delta,
            DelayKind::PartialSynchrony { .. } => true,
            DelayKind::Scripted { .. } => self.bound() > delta,
        }
    }

    fn sample(&self, seed: u64, from: ReplicaId, to: ReplicaId, msg: &Digest, now: Time, max: Time) -> Time {
        let min = self.min_delay;
        if max <= min {
            return min;
        }
        let mut h = Sha256::new();
        h.update(self.rng_seed.to_le_bytes());
        h.update(seed.to_le_bytes());
        h.update(from.0.to_le_bytes());
        h.update(to.0.to_le_bytes());
        h.update(msg.0);
        h.update(now.to_le_bytes());
        let out = h.finalize();
        let x = u64::from_le_bytes(out[..8].try_into().unwrap());
        min + x % (max - min + 1)
    }

    /// Delivery time of one point-to-point message. `requested` is a delay
    /// asked for by the adversary; it is clamped to the model's bounds and
    /// loses to a matching table entry.
    #[allow(clippy::too_many_arguments)]
    pub fn deliver_at(
        &self,
        seed: u64,
        from: ReplicaId,
        to: ReplicaId,
        msg: &Message,
        digest: &Digest,
        now: Time,
        requested: Option<Time>,
    ) -> Time {
        let min = self.min_delay;
        if from == to {
            return now.saturating_add(min);
        }
        let scripted = self.scripted.iter().find(|e| e.matches(from, to, msg.kind(), msg.view())).map(|e| e.delay);
        let chosen = scripted.or(requested);
        match self.kind {
            DelayKind::Synchronous { delta } => {
                let d = chosen.unwrap_or_else(|| self.sample(seed, from, to, digest, now, delta));
                now.saturating_add(d.clamp(min, delta))
            }
            DelayKind::PartialSynchrony { gst, delta } => {
                if now >= gst {
                    let d = chosen.unwrap_or_else(|| self.sample(seed, from, to, digest, now, delta));
                    now.saturating_add(d.clamp(min, delta))
                } else {
                    let latest = gst.saturating_add(delta);
                    match chosen {
                        Some(d) => now.saturating_add(d.max(min)).min(latest),
                        None => gst.saturating_add(self.sample(seed, from, to, digest, now, delta)),
                    }
                }
            }
            DelayKind::Scripted { default } => now.saturating_add(chosen.unwrap_or(default).max(min)),
        }
    }
}

/// Packs the view, rule and directness of a commit into one record field.
pub fn commit_flags(view: View, cr2: bool, direct: bool) -> u64 {
    (view << 2) | ((cr2 as u64) << 1) | direct as u64
}

/// Inverse of [`commit_flags`].
pub fn split_commit_flags(flags: u64) -> (View, bool, bool) {
    (flags >> 2, flags & 2 != 0, flags & 1 != 0)
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub protocol: ProtocolConfig,
    pub delay: DelayModel,
    pub seed: u64,
    /// Events at or after this time are not processed.
    pub max_time: Time,
    pub probe_cadence: Time,
    /// How long probing continues once nothing else is pending.
    pub drain: Time,
}

pub struct ClientSlot {
    pub state: ClientState,
    pub pool: ReportPool,
}

impl ClientSlot {
    pub fn new(state: ClientState, cfg: ProtocolConfig, key: VerifyKey) -> ClientSlot {
        ClientSlot { state, pool: ReportPool::new(cfg, key) }
    }
}

enum EventKind {
    Start(ReplicaId),
    Deliver { from: ReplicaId, to: ReplicaId, sent: Time, msg: Rc<Message>, digest: Digest },
    Timer { replica: ReplicaId, tag: u64 },
    Probe,
}

struct Event {
    time: Time,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed so the max-heap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub transcript: Vec<u8>,
    pub clients: Vec<ClientState>,
    pub final_reports: Vec<Option<ReplicaReport>>,
    pub end_time: Time,
    pub events: u64,
}

pub struct World {
    cfg: WorldConfig,
    replicas: BTreeMap<ReplicaId, Replica>,
    adversary: Option<Box<dyn Adversary>>,
    faulty: BTreeSet<ReplicaId>,
    clients: Vec<ClientSlot>,
    queue: BinaryHeap<Event>,
    next_seq: u64,
    timers: BTreeMap<ReplicaId, u64>,
    pending_deliveries: usize,
    transcript: TranscriptWriter,
    now: Time,
    events: u64,
}

impl World {
    /// `replicas` holds the honest replicas; every other id belongs to the
    /// adversary.
    pub fn new(
        cfg: WorldConfig,
        replicas: Vec<Replica>,
        adversary: Option<Box<dyn Adversary>>,
        clients: Vec<ClientSlot>,
        init: &[u8],
    ) -> World {
        let faulty = adversary.as_ref().map(|a| a.faulty().clone()).unwrap_or_default();
        let replicas: BTreeMap<_, _> = replicas.into_iter().map(|r| (r.id(), r)).collect();
        for id in &faulty {
            assert!(!replicas.contains_key(id), "{id} is both honest and faulty");
        }
        let mut transcript = TranscriptWriter::new();
        let d = Digest::of(init);
        transcript.push(0, 0, WORLD, RecordKind::Init, [cfg.seed, 0], d, || init.to_vec());
        World {
            cfg,
            replicas,
            adversary,
            faulty,
            clients,
            queue: BinaryHeap::new(),
            next_seq: 1,
            timers: BTreeMap::new(),
            pending_deliveries: 0,
            transcript,
            now: 0,
            events: 0,
        }
    }

    fn push(&mut self, time: Time, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        if matches!(kind, EventKind::Deliver { .. }) {
            self.pending_deliveries += 1;
        }
        self.queue.push(Event { time, seq, kind });
    }

    fn quiescent(&self) -> bool {
        self.pending_deliveries == 0 && self.timers.is_empty()
    }

    pub fn run(mut self) -> RunOutput {
        let n = self.cfg.protocol.n;
        for i in 0..n {
            self.push(0, EventKind::Start(ReplicaId(i)));
        }
        if self.cfg.probe_cadence > 0 {
            self.push(self.cfg.probe_cadence, EventKind::Probe);
        }
        let mut quiet_since: Option<Time> = None;
        while let Some(ev) = self.queue.pop() {
            if let EventKind::Deliver { .. } = ev.kind {
                self.pending_deliveries -= 1;
            }
            if ev.time >= self.cfg.max_time {
                break;
            }
            if let EventKind::Timer { replica, tag } = ev.kind {
                if self.timers.get(&replica) != Some(&tag) {
                    continue;
                }
                self.timers.remove(&replica);
            }
            self.now = ev.time;
            self.events += 1;
            match ev.kind {
                EventKind::Start(id) => {
                    self.transcript.push(ev.time, ev.seq, id.0, RecordKind::Start, [0, 0], Digest::ZERO, Vec::new);
                    let out = match self.replicas.get_mut(&id) {
                        Some(r) => r.start(ev.time).into_iter().map(|a| (id, a)).collect(),
                        None => self.adversary.as_mut().map(|a| a.start(id, ev.time)).unwrap_or_default(),
                    };
                    self.apply(ev.seq, out);
                }
                EventKind::Deliver { from, to, sent, msg, digest } => {
                    self.transcript.push(ev.time, ev.seq, to.0, RecordKind::Deliver, [from.0 as u64, sent], digest, || {
                        msg.encode()
                    });
                    let out = match self.replicas.get_mut(&to) {
                        Some(r) => r.on_message(&msg, ev.time).into_iter().map(|a| (to, a)).collect(),
                        None => self
                            .adversary
                            .as_mut()
                            .map(|a| a.on_message(to, from, &msg, ev.time))
                            .unwrap_or_default(),
                    };
                    self.apply(ev.seq, out);
                }
                EventKind::Timer { replica, tag } => {
                    self.transcript.push(ev.time, ev.seq, replica.0, RecordKind::TimerFire, [tag, ev.time], Digest::ZERO, Vec::new);
                    let out = match self.replicas.get_mut(&replica) {
                        Some(r) => r.on_timer(tag, ev.time).into_iter().map(|a| (replica, a)).collect(),
                        None => self.adversary.as_mut().map(|a| a.on_timer(replica, tag, ev.time)).unwrap_or_default(),
                    };
                    self.apply(ev.seq, out);
                }
                EventKind::Probe => {
                    self.probe(ev.time, ev.seq);
                    if self.quiescent() {
                        quiet_since.get_or_insert(ev.time);
                    } else {
                        quiet_since = None;
                    }
                    let keep = quiet_since.is_none_or(|q| ev.time < q.saturating_add(self.cfg.drain));
                    if keep {
                        self.push(ev.time + self.cfg.probe_cadence, EventKind::Probe);
                    }
                }
            }
        }
        let end = self.now;
        self.transcript.push(end, self.next_seq, WORLD, RecordKind::End, [self.events, 0], Digest::ZERO, Vec::new);
        let final_reports = (0..n).map(|i| self.report_of(ReplicaId(i), end)).collect();
        RunOutput {
            transcript: self.transcript.finish(),
            clients: self.clients.into_iter().map(|c| c.state).collect(),
            final_reports,
            end_time: end,
            events: self.events,
        }
    }

    fn report_of(&self, id: ReplicaId, now: Time) -> Option<ReplicaReport> {
        match self.replicas.get(&id) {
            Some(r) => Some(r.report(now)),
            None => self.adversary.as_ref().and_then(|a| a.report(id, now)),
        }
    }

    fn apply(&mut self, seq: u64, actions: Vec<(ReplicaId, Action)>) {
        let n = self.cfg.protocol.n;
        for (actor, action) in actions {
            match action {
                Action::Broadcast(m) => {
                    let m = Rc::new(m);
                    for to in 0..n {
                        self.send(seq, actor, ReplicaId(to), m.clone());
                    }
                }
                Action::Send(to, m) => self.send(seq, actor, to, Rc::new(m)),
                Action::SetTimer { at, tag } => {
                    let at = at.max(self.now);
                    self.transcript.push(self.now, seq, actor.0, RecordKind::TimerSet, [tag, at], Digest::ZERO, Vec::new);
                    self.timers.insert(actor, tag);
                    self.push(at, EventKind::Timer { replica: actor, tag });
                }
                Action::CancelTimer => {
                    if self.timers.remove(&actor).is_some() {
                        self.transcript.push(self.now, seq, actor.0, RecordKind::TimerCancel, [0, 0], Digest::ZERO, Vec::new);
                    }
                }
            }
        }
    }

    fn send(&mut self, seq: u64, from: ReplicaId, to: ReplicaId, msg: Rc<Message>) {
        if to.0 >= self.cfg.protocol.n {
            return;
        }
        let bytes = msg.encode();
        let digest = Digest::of(&bytes);
        let requested = self.adversary.as_ref().and_then(|a| a.delay_override(from, to, &msg, self.now));
        let at = self.cfg.delay.deliver_at(self.cfg.seed, from, to, &msg, &digest, self.now, requested);
        self.transcript.push(self.now, seq, from.0, RecordKind::Send, [to.0 as u64, at], digest, || bytes);
        self.push(at, EventKind::Deliver { from, to, sent: self.now, msg, digest });
    }

    fn probe(&mut self, now: Time, seq: u64) {
        let n = self.cfg.protocol.n;
        let reports: Vec<ReplicaReport> = (0..n).filter_map(|i| self.report_of(ReplicaId(i), now)).collect();
        let mut fp = Vec::with_capacity(reports.len() * 36);
        for r in &reports {
            fp.extend_from_slice(&r.replica.0.to_le_bytes());
            fp.extend_from_slice(&r.fingerprint().0);
        }
        let d = Digest::of(&fp);
        self.transcript.push(now, seq, WORLD, RecordKind::Probe, [reports.len() as u64, 0], d, || fp);
        for (ci, slot) in self.clients.iter_mut().enumerate() {
            for r in &reports {
                slot.pool.integrate(r);
            }
            let fresh = slot.pool.evaluate(&slot.state.assumption);
            let before: BTreeSet<(u64, Digest, bool)> = slot
                .state
                .committed
                .iter()
                .flat_map(|(h, v)| v.iter().map(move |c| (*h, c.decision.block, c.decision.direct)))
                .collect();
            slot.state.integrate_commits(fresh, now);
            for (h, entries) in &slot.state.committed {
                for c in entries {
                    let d = &c.decision;
                    if !before.contains(&(*h, d.block, d.direct)) {
                        let flags = commit_flags(d.view, d.rule == Rule::Cr2, d.direct);
                        self.transcript.push(now, seq, ci as u32, RecordKind::Commit, [*h, flags], d.block, Vec::new);
                    }
                }
            }
        }
    }

    pub fn faulty(&self) -> &BTreeSet<ReplicaId> {
        &self.faulty
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::Block;

    fn msg() -> Message {
        let ring = crate::primitives::Keyring::from_seed(1);
        let g = Block::genesis();
        let b = Block::child_of(&g, b"x".to_vec());
        Message::Vote(crate::primitives::Vote::new(&ring.signer(ReplicaId(0)), b.digest(), 1, 0))
    }

    #[test]
    fn synchronous_bounds_hold() {
        let model = DelayModel::synchronous(10, 1, 4);
        let m = msg();
        let d = m.digest();
        for to in 1..50 {
            let at = model.deliver_at(9, ReplicaId(0), ReplicaId(to), &m, &d, 5, None);
            assert!((6..=15).contains(&at), "{at}");
        }
        // adversary cannot push past the bound or below the floor
        assert_eq!(model.deliver_at(9, ReplicaId(0), ReplicaId(1), &m, &d, 5, Some(1000)), 15);
        assert_eq!(model.deliver_at(9, ReplicaId(0), ReplicaId(1), &m, &d, 5, Some(0)), 6);
        assert_eq!(model.deliver_at(9, ReplicaId(2), ReplicaId(2), &m, &d, 5, Some(1000)), 6);
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = DelayModel::synchronous(10, 1, 4);
        let m = msg();
        let d = m.digest();
        let a: Vec<_> = (1..20).map(|to| model.deliver_at(3, ReplicaId(0), ReplicaId(to), &m, &d, 0, None)).collect();
        let b: Vec<_> = (1..20).map(|to| model.deliver_at(3, ReplicaId(0), ReplicaId(to), &m, &d, 0, None)).collect();
        assert_eq!(a, b);
        assert!(a.iter().collect::<BTreeSet<_>>().len() > 1);
    }

    #[test]
    fn partial_synchrony_bounds() {
        let model = DelayModel::partial_synchrony(100, 10, 1, 0);
        let m = msg();
        let d = m.digest();
        for to in 1..30 {
            let at = model.deliver_at(0, ReplicaId(0), ReplicaId(to), &m, &d, 120, None);
            assert!(at <= 130 && at > 120);
            let early = model.deliver_at(0, ReplicaId(0), ReplicaId(to), &m, &d, 20, None);
            assert!((101..=110).contains(&early));
        }
        assert_eq!(model.deliver_at(0, ReplicaId(0), ReplicaId(1), &m, &d, 20, Some(Time::MAX)), 110);
        assert_eq!(model.deliver_at(0, ReplicaId(0), ReplicaId(1), &m, &d, 20, Some(3)), 23);
    }

    #[test]
    fn scripted_entries_validated() {
        let mut model = DelayModel::synchronous(10, 2, 0);
        model.scripted.push(ScriptedDelay { from: Some(0), to: None, message: None, view: None, delay: 11 });
        assert_eq!(model.validate(), Err(DelayError::ScriptedOutOfBounds { index: 0, delay: 11, min: 2, max: 10 }));
        model.scripted[0].delay = 1;
        assert!(matches!(model.validate(), Err(DelayError::ScriptedOutOfBounds { .. })));
        model.scripted[0].delay = 10;
        model.scripted[0].message = Some("gossip".into());
        assert!(matches!(model.validate(), Err(DelayError::UnknownMessageKind { .. })));
        model.scripted[0].message = Some("vote".into());
        assert_eq!(model.validate(), Ok(()));
        let m = msg();
        assert_eq!(model.deliver_at(0, ReplicaId(0), ReplicaId(3), &m, &m.digest(), 0, Some(2)), 10);
    }

    #[test]
    fn delay_model_reads_from_toml() {
        let m: DelayModel = toml::from_str("kind = \"partial_synchrony\"\ngst = 50\ndelta = 7\nmin_delay = 2\n").unwrap();
        assert_eq!(m.kind, DelayKind::PartialSynchrony { gst: 50, delta: 7 });
        assert_eq!(m.min_delay, 2);
    }
}
