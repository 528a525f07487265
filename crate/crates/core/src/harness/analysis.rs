// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Everything in a [`RunReport`] is derived from the transcript plus the
//! scenario it embeds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::adversary::{attack_precondition, Strategy};
use crate::message::Message;
use crate::netsim::split_commit_flags;
use crate::primitives::{Digest, Height, ReplicaId, Time, View};
use crate::scalar::format_ratio;
use crate::transcript::{RecordKind, Transcript};

use super::scenario::Scenario;

#[derive(Clone, Debug)]
pub struct SendRec {
    pub time: Time,
    pub from: ReplicaId,
    pub to: ReplicaId,
    pub at: Time,
    pub digest: Digest,
}

#[derive(Clone, Debug)]
pub struct DeliverRec {
    pub time: Time,
    pub to: ReplicaId,
    pub from: ReplicaId,
    pub digest: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitRec {
    pub time: Time,
    pub client: usize,
    pub height: Height,
    pub block: Digest,
    pub view: View,
    pub cr2: bool,
    pub direct: bool,
}

/// Transcript records grouped for analysis.
pub struct Timeline {
    pub sends: Vec<SendRec>,
    pub delivers: Vec<DeliverRec>,
    pub commits: Vec<CommitRec>,
    pub messages: BTreeMap<Digest, Message>,
    pub end_time: Time,
    pub events: u64,
    /// Sorted first-delivery times of each voter's vote, per (block, view).
    vote_arrivals: BTreeMap<(Digest, View), Vec<Time>>,
    proposal_times: BTreeMap<Digest, Time>,
    /// Height of each voted block.
    vote_heights: BTreeMap<Digest, Height>,
}

impl Timeline {
    pub fn new(t: &Transcript) -> Timeline {
        let mut sends = Vec::new();
        let mut delivers = Vec::new();
        let mut commits = Vec::new();
        let mut messages = BTreeMap::new();
        let mut end_time = 0;
        let mut events = 0;
        for r in &t.records {
            match r.kind {
                RecordKind::Send => {
                    if let std::collections::btree_map::Entry::Vacant(e) = messages.entry(r.digest) {
                        if let Some(m) = t.message(&r.digest) {
                            e.insert(m);
                        }
                    }
                    sends.push(SendRec {
                        time: r.time,
                        from: ReplicaId(r.actor),
                        to: ReplicaId(r.aux[0] as u32),
                        at: r.aux[1],
                        digest: r.digest,
                    });
                }
                RecordKind::Deliver => delivers.push(DeliverRec {
                    time: r.time,
                    to: ReplicaId(r.actor),
                    from: ReplicaId(r.aux[0] as u32),
                    digest: r.digest,
                }),
                RecordKind::Commit => {
                    let (view, cr2, direct) = split_commit_flags(r.aux[1]);
                    commits.push(CommitRec {
                        time: r.time,
                        client: r.actor as usize,
                        height: r.aux[0],
                        block: r.digest,
                        view,
                        cr2,
                        direct,
                    });
                }
                RecordKind::End => {
                    end_time = r.time;
                    events = r.aux[0];
                }
                _ => {}
            }
        }
        let mut first: BTreeMap<(Digest, View), BTreeMap<ReplicaId, Time>> = BTreeMap::new();
        let mut vote_heights = BTreeMap::new();
        for d in &delivers {
            if let Some(Message::Vote(v)) = messages.get(&d.digest) {
                let e = first.entry((v.block, v.view)).or_default().entry(v.voter).or_insert(d.time);
                *e = (*e).min(d.time);
                vote_heights.insert(v.block, v.height);
            }
        }
        let vote_arrivals = first
            .into_iter()
            .map(|(k, m)| {
                let mut times: Vec<Time> = m.into_values().collect();
                times.sort_unstable();
                (k, times)
            })
            .collect();
        let mut proposal_times = BTreeMap::new();
        for s in &sends {
            if let Some(Message::Proposal(p)) = messages.get(&s.digest) {
                let e = proposal_times.entry(p.block.digest()).or_insert(s.time);
                *e = (*e).min(s.time);
            }
        }
        Timeline { sends, delivers, commits, messages, end_time, events, vote_arrivals, proposal_times, vote_heights }
    }

    pub fn message(&self, d: &Digest) -> Option<&Message> {
        self.messages.get(d)
    }

    /// Earliest time any proposal carrying `block` was sent.
    pub fn proposal_time(&self, block: &Digest) -> Option<Time> {
        self.proposal_times.get(block).copied()
    }

    /// Time at which `k` distinct voters' votes for `(block, view)` had been
    /// delivered somewhere.
    pub fn votes_gathered(&self, block: &Digest, view: View, k: usize) -> Option<Time> {
        self.vote_arrivals.get(&(*block, view))?.get(k.checked_sub(1)?).copied()
    }

    /// Highest block height certified (`k` votes delivered) by time `t`.
    pub fn certified_height_at(&self, k: usize, t: Time) -> Height {
        self.vote_arrivals
            .iter()
            .filter(|(_, times)| times.get(k.wrapping_sub(1)).is_some_and(|x| *x <= t))
            .filter_map(|((b, _), _)| self.vote_heights.get(b).copied())
            .max()
            .unwrap_or(0)
    }

    /// When the CR1 evidence for `block` (its own votes plus a child's, both
    /// in `view`) was complete, measured from its proposal.
    pub fn cr1_evidence_latency(&self, block: &Digest, view: View, k: usize) -> Option<Time> {
        let own = self.votes_gathered(block, view, k)?;
        let child = self
            .messages
            .values()
            .filter_map(|m| match m {
                Message::Proposal(p) if p.view == view && p.block.parent == *block => Some(p.block.digest()),
                _ => None,
            })
            .filter_map(|c| self.votes_gathered(&c, view, k))
            .min()?;
        Some(own.max(child) - self.proposal_time(block)?)
    }

    /// First time each view was entered, judged by the status messages
    /// sent on entry.
    pub fn view_entries(&self, honest: &BTreeSet<ReplicaId>) -> BTreeMap<View, Time> {
        let mut out = BTreeMap::new();
        for s in &self.sends {
            if let Some(Message::Status(st)) = self.message(&s.digest) {
                if honest.contains(&s.from) {
                    out.entry(st.view).or_insert(s.time);
                }
            }
        }
        out
    }

    /// Earliest time some block gathered `k` votes in `view`.
    pub fn first_certificate(&self, view: View, k: usize) -> Option<Time> {
        self.vote_arrivals
            .iter()
            .filter(|((_, v), _)| *v == view)
            .filter_map(|(_, times)| times.get(k.checked_sub(1)?).copied())
            .min()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientSummary {
    pub name: String,
    pub assumption: String,
    pub safe_assumption: bool,
    pub live_assumption: bool,
    pub committed_height: Height,
    pub conflict: bool,
    /// Direct commits as (height, latency from proposal to observed commit).
    pub direct_latencies: Vec<(Height, Time)>,
    pub first_commit_latency: Option<Time>,
    /// Committed digest per height, first branch only.
    pub chain: BTreeMap<Height, Digest>,
    /// Every committed digest per height.
    pub branches: BTreeMap<Height, BTreeSet<Digest>>,
}

impl ClientSummary {
    pub fn height_at(&self, commits: &[CommitRec], client: usize, t: Time) -> Height {
        commits.iter().filter(|c| c.client == client && c.time <= t).map(|c| c.height).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub n: u32,
    pub q_r: String,
    pub byzantine: usize,
    pub abc: usize,
    pub strategy: String,
    /// `none`, `ran`, or `refused: <reason>`.
    pub attack: String,
    pub end_time: Time,
    pub events: u64,
    pub messages: u64,
    pub overhead_messages: u64,
    pub per_height_messages: BTreeMap<Height, u64>,
    pub view_changes: View,
    pub clients: Vec<ClientSummary>,
    pub transcript_digest: String,
    pub checks: Vec<Check>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn client(&self, name: &str) -> Option<&ClientSummary> {
        self.clients.iter().find(|c| c.name == name)
    }

    pub fn max_per_height(&self) -> u64 {
        self.per_height_messages.values().copied().max().unwrap_or(0)
    }

    /// Stable `key = value` rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {:?}", self.scenario);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "q_r = {:?}", self.q_r);
        let _ = writeln!(s, "byzantine = {}", self.byzantine);
        let _ = writeln!(s, "abc = {}", self.abc);
        let _ = writeln!(s, "strategy = {:?}", self.strategy);
        let _ = writeln!(s, "attack = {:?}", self.attack);
        let _ = writeln!(s, "end_time = {}", self.end_time);
        let _ = writeln!(s, "events = {}", self.events);
        let _ = writeln!(s, "messages = {}", self.messages);
        let _ = writeln!(s, "overhead_messages = {}", self.overhead_messages);
        let _ = writeln!(s, "view_changes = {}", self.view_changes);
        let _ = writeln!(s, "transcript_digest = {:?}", self.transcript_digest);
        let _ = writeln!(s, "passed = {}", self.passed());
        let _ = writeln!(s, "\n[per_height_messages]");
        for (h, c) in &self.per_height_messages {
            let _ = writeln!(s, "{h} = {c}");
        }
        for c in &self.clients {
            let _ = writeln!(s, "\n[[client]]");
            let _ = writeln!(s, "name = {:?}", c.name);
            let _ = writeln!(s, "assumption = {:?}", c.assumption);
            let _ = writeln!(s, "safe_assumption = {}", c.safe_assumption);
            let _ = writeln!(s, "live_assumption = {}", c.live_assumption);
            let _ = writeln!(s, "committed_height = {}", c.committed_height);
            let _ = writeln!(s, "conflict = {}", c.conflict);
            match c.first_commit_latency {
                Some(l) => {
                    let _ = writeln!(s, "first_commit_latency = {l}");
                }
                None => {
                    let _ = writeln!(s, "first_commit_latency = \"none\"");
                }
            }
        }
        for c in &self.checks {
            let _ = writeln!(s, "\n[[check]]");
            let _ = writeln!(s, "name = {:?}", c.name);
            let _ = writeln!(s, "passed = {}", c.passed);
            let _ = writeln!(s, "detail = {:?}", c.detail);
        }
        s
    }
}

fn prefix_consistent(a: &ClientSummary, b: &ClientSummary) -> bool {
    a.branches.iter().all(|(h, da)| match b.branches.get(h) {
        Some(db) => da.len() == 1 && da == db,
        None => true,
    })
}

/// Derives the report for `scenario` from its transcript.
pub fn analyze(scenario: &Scenario, t: &Transcript, transcript_bytes: &[u8]) -> RunReport {
    let tl = Timeline::new(t);
    let cfg = &scenario.protocol;
    let faulty = scenario.faults.faulty();
    let honest: BTreeSet<ReplicaId> = (0..cfg.n).map(ReplicaId).filter(|r| !faulty.contains(r)).collect();

    let attack_planned =
        matches!(scenario.faults.strategy, Strategy::AbcDoubleCommit { .. } | Strategy::Cr2DelayAttack { .. });
    let refusal = attack_precondition(&scenario.faults, cfg, &scenario.delay).err();
    let attack = match (&refusal, attack_planned) {
        (_, false) => "none".to_string(),
        (None, true) => "ran".to_string(),
        (Some(r), true) => format!("refused: {r}"),
    };
    let attack_ran = attack_planned && refusal.is_none();

    let mut per_height: BTreeMap<Height, u64> = BTreeMap::new();
    let mut overhead = 0;
    let mut view_changes = 0;
    for s in &tl.sends {
        match tl.message(&s.digest) {
            Some(Message::Proposal(p)) => *per_height.entry(p.block.height).or_default() += 1,
            Some(Message::Vote(v)) => *per_height.entry(v.height).or_default() += 1,
            Some(m) => {
                overhead += 1;
                if let Message::Status(st) = m {
                    view_changes = view_changes.max(st.view);
                }
            }
            None => overhead += 1,
        }
    }

    let mut clients = Vec::new();
    for (i, spec) in scenario.clients.iter().enumerate() {
        let mut branches: BTreeMap<Height, BTreeSet<Digest>> = BTreeMap::new();
        let mut chain = BTreeMap::new();
        let mut direct_latencies = Vec::new();
        let mut first_direct: Option<(Time, Height, Digest)> = None;
        for c in tl.commits.iter().filter(|c| c.client == i) {
            branches.entry(c.height).or_default().insert(c.block);
            chain.entry(c.height).or_insert(c.block);
            if c.direct {
                if let Some(p) = tl.proposal_time(&c.block) {
                    direct_latencies.push((c.height, c.time - p));
                }
                if first_direct.is_none() {
                    first_direct = Some((c.time, c.height, c.block));
                }
            }
        }
        let first_commit_latency =
            first_direct.and_then(|(t, _, b)| tl.proposal_time(&b).map(|p| t - p));
        clients.push(ClientSummary {
            name: spec.name.clone(),
            assumption: spec.assumption.to_string(),
            safe_assumption: scenario.client_safe(&spec.assumption),
            live_assumption: scenario.client_live(&spec.assumption),
            committed_height: branches.keys().next_back().copied().unwrap_or(0),
            conflict: branches.values().any(|b| b.len() > 1),
            direct_latencies,
            first_commit_latency,
            chain,
            branches,
        });
    }

    let mut checks = Vec::new();

    // safety among clients whose assumptions hold
    let safe: Vec<&ClientSummary> = clients.iter().filter(|c| c.safe_assumption).collect();
    let mut bad = Vec::new();
    for (i, a) in safe.iter().enumerate() {
        if a.conflict {
            bad.push(format!("{} has a conflict", a.name));
        }
        for b in &safe[i + 1..] {
            if !prefix_consistent(a, b) {
                bad.push(format!("{} and {} disagree", a.name, b.name));
            }
        }
    }
    checks.push(Check { name: "safety", passed: bad.is_empty(), detail: bad.join("; ") });

    if !scenario.expect.conflicts.is_empty() {
        let missing: Vec<&str> = scenario
            .expect
            .conflicts
            .iter()
            .filter(|n| !clients.iter().any(|c| &c.name == *n && c.conflict))
            .map(|s| s.as_str())
            .collect();
        checks.push(Check {
            name: "expected_conflicts",
            passed: missing.is_empty(),
            detail: if missing.is_empty() { String::new() } else { format!("no conflict for {}", missing.join(", ")) },
        });
    }
    if let Some(want) = scenario.expect.attack_refused {
        let refused = refusal.is_some();
        checks.push(Check {
            name: "attack_refused",
            passed: refused == want,
            detail: attack.clone(),
        });
    }

    if scenario.liveness_asserted(attack_ran) {
        checks.push(liveness_check(scenario, &tl, &clients, &honest));
        checks.push(resume_check(scenario, &tl, &honest));
    }

    RunReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        n: cfg.n,
        q_r: format_ratio(&cfg.q_r),
        byzantine: scenario.faults.byzantine.len(),
        abc: scenario.faults.abc.len(),
        strategy: scenario.faults.strategy.name().to_string(),
        attack,
        end_time: tl.end_time,
        events: tl.events,
        messages: tl.sends.len() as u64,
        overhead_messages: overhead,
        per_height_messages: per_height,
        view_changes,
        clients,
        transcript_digest: Digest::of(transcript_bytes).to_hex(),
        checks,
    }
}

/// Every live client reaches the target, and after GST its height grows in
/// every window of n consecutive views.
fn liveness_check(scenario: &Scenario, tl: &Timeline, clients: &[ClientSummary], honest: &BTreeSet<ReplicaId>) -> Check {
    let target = scenario.heights_target.saturating_sub(1);
    let gst = scenario.delay.gst();
    let n = scenario.protocol.n as View;
    let entries = tl.view_entries(honest);
    let mut bad = Vec::new();
    for (i, c) in clients.iter().enumerate() {
        if !(c.safe_assumption && c.live_assumption) {
            continue;
        }
        if c.committed_height < target {
            bad.push(format!("{} reached height {} of {}", c.name, c.committed_height, target));
            continue;
        }
        for (&v, &start) in entries.range(..) {
            if start < gst {
                continue;
            }
            let Some(&end) = entries.get(&(v + n)) else { break };
            let before = c.height_at(&tl.commits, i, start);
            if before < target && c.height_at(&tl.commits, i, end) <= before {
                bad.push(format!("{} made no progress in views {}..{}", c.name, v, v + n));
            }
        }
    }
    Check { name: "liveness", passed: bad.is_empty(), detail: bad.join("; ") }
}

/// After a view change to an honest leader, a certificate forms within one
/// timeout of the new view.
fn resume_check(scenario: &Scenario, tl: &Timeline, honest: &BTreeSet<ReplicaId>) -> Check {
    let cfg = &scenario.protocol;
    let q = cfg.quorum();
    let gst = scenario.delay.gst();
    let entries = tl.view_entries(honest);
    let mut bad = Vec::new();
    let mut checked = 0;
    for (&v, &start) in &entries {
        if v == 0 || start < gst || !honest.contains(&cfg.leader(v)) {
            continue;
        }
        if tl.certified_height_at(q, start) >= scenario.heights_target {
            continue;
        }
        let deadline = start.saturating_add(cfg.timeout(v));
        if deadline > tl.end_time {
            continue;
        }
        checked += 1;
        match tl.first_certificate(v, q) {
            Some(t) if t <= deadline => {}
            other => bad.push(format!("view {v} entered at {start}: first certificate {other:?}, deadline {deadline}")),
        }
    }
    let detail = if bad.is_empty() { format!("{checked} view changes checked") } else { bad.join("; ") };
    Check { name: "resume_after_view_change", passed: bad.is_empty(), detail }
}
