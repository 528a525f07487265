// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Client-side commit rules over replica reports.
//!
//! A client never votes. It merges whatever replicas tell it and decides
//! commits under its own assumption: a vote quorum `q_c` when it only trusts
//! partial synchrony (CR1), or a delay bound Δ when it trusts synchrony (CR2).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::primitives::{
    quorum_count, verify_certificate, Block, BlockStore, Digest, Height, ProtocolConfig, ReplicaId, Time, VerifyKey,
    View, Vote,
};
use crate::replica::ReplicaReport;
use crate::scalar::format_ratio;
use crate::Frac;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Assumption {
    PartialSync {
        #[serde(with = "crate::scalar::serde_frac")]
        q_c: Frac,
    },
    Sync {
        delta: Time,
    },
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assumption::PartialSync { q_c } => write!(f, "CR1(q_c={})", format_ratio(q_c)),
            Assumption::Sync { delta } => write!(f, "CR2(delta={delta})"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssumptionError {
    #[error("q_c must be at least q_r ({q_r}), got {q_c}")]
    CommitQuorumBelowReplicaQuorum { q_c: String, q_r: String },
    #[error("q_c must be at most 1, got {0}")]
    CommitQuorumAboveOne(String),
    #[error("delta must be positive")]
    ZeroDelta,
}

impl Assumption {
    pub fn validate(&self, q_r: &Frac) -> Result<(), AssumptionError> {
        match self {
            Assumption::PartialSync { q_c } if q_c < q_r => Err(AssumptionError::CommitQuorumBelowReplicaQuorum {
                q_c: format_ratio(q_c),
                q_r: format_ratio(q_r),
            }),
            Assumption::PartialSync { q_c } if *q_c > Frac::from_integer(1) => {
                Err(AssumptionError::CommitQuorumAboveOne(format_ratio(q_c)))
            }
            Assumption::Sync { delta: 0 } => Err(AssumptionError::ZeroDelta),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    Cr1,
    Cr2,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Cr1 => "CR1",
            Rule::Cr2 => "CR2",
        })
    }
}

/// One replica's claim of an undisturbed window after locking `block`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attestation {
    pub replica: ReplicaId,
    pub height: Height,
    pub view: View,
    pub block: Digest,
    pub window_start: Time,
    pub window_end: Time,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CommitEvidence {
    /// Two consecutive blocks with enough votes in one view.
    Cr1 { view: View, lower: Digest, upper: Digest, lower_votes: usize, upper_votes: usize },
    Cr2 { attestations: Vec<Attestation> },
    /// Committed as an ancestor of `via`.
    Indirect { via: Digest },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitDecision {
    pub block: Digest,
    pub height: Height,
    pub rule: Rule,
    pub direct: bool,
    pub view: View,
    pub evidence: CommitEvidence,
}

/// Everything a client has learned from reports, merged. Votes are unioned
/// by voter; only verifying votes are kept.
#[derive(Clone, Debug)]
pub struct ReportPool {
    cfg: ProtocolConfig,
    key: VerifyKey,
    store: BlockStore,
    votes: BTreeMap<(Digest, View), BTreeMap<ReplicaId, Vote>>,
    certified: BTreeSet<(Digest, View)>,
    latest: BTreeMap<ReplicaId, ReplicaReport>,
}

impl ReportPool {
    pub fn new(cfg: ProtocolConfig, key: VerifyKey) -> ReportPool {
        ReportPool {
            cfg,
            key,
            store: BlockStore::new(),
            votes: BTreeMap::new(),
            certified: BTreeSet::new(),
            latest: BTreeMap::new(),
        }
    }

    pub fn from_reports<'a>(
        cfg: &ProtocolConfig,
        key: &VerifyKey,
        reports: impl IntoIterator<Item = &'a ReplicaReport>,
    ) -> ReportPool {
        let mut pool = ReportPool::new(cfg.clone(), key.clone());
        for r in reports {
            pool.integrate(r);
        }
        pool
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn integrate(&mut self, report: &ReplicaReport) {
        for b in &report.blocks {
            self.store.insert(b.clone());
        }
        let quorum = self.cfg.quorum();
        for v in &report.votes {
            if v.voter.0 >= self.cfg.n {
                continue;
            }
            let set = self.votes.entry((v.block, v.view)).or_default();
            if set.contains_key(&v.voter) || !v.verify(&self.key) {
                continue;
            }
            set.insert(v.voter, v.clone());
            if set.len() >= quorum {
                self.certified.insert((v.block, v.view));
            }
        }
        for c in &report.certificates {
            if !self.certified.contains(&(c.block, c.view)) && verify_certificate(c, &self.cfg, &self.key) {
                self.certified.insert((c.block, c.view));
                let set = self.votes.entry((c.block, c.view)).or_default();
                for v in &c.votes {
                    set.entry(v.voter).or_insert_with(|| v.clone());
                }
            }
        }
        let newer = self.latest.get(&report.replica).is_none_or(|old| old.time <= report.time);
        if newer {
            self.latest.insert(report.replica, report.clone());
        }
    }

    pub fn vote_count(&self, block: &Digest, view: View) -> usize {
        self.votes.get(&(*block, view)).map_or(0, |s| s.len())
    }

    pub fn is_certified(&self, block: &Digest, view: View) -> bool {
        self.certified.contains(&(*block, view))
    }

    pub fn block(&self, d: &Digest) -> Option<&Block> {
        self.store.get(d)
    }

    fn with_ancestors(&self, direct: CommitDecision, out: &mut BTreeMap<(Height, Digest), CommitDecision>) {
        let chain = self.store.chain_to(&direct.block).unwrap_or_default();
        for d in chain {
            if d == direct.block {
                continue;
            }
            let height = self.store.get(&d).map_or(0, |b| b.height);
            out.entry((height, d)).or_insert(CommitDecision {
                block: d,
                height,
                rule: direct.rule,
                direct: false,
                view: direct.view,
                evidence: CommitEvidence::Indirect { via: direct.block },
            });
        }
        let slot = out.entry((direct.height, direct.block)).or_insert_with(|| direct.clone());
        if !slot.direct {
            *slot = direct;
        }
    }

    /// Partially-synchronous rule: `B_l` and its child both hold at least
    /// `quorum_count(n, q_c)` votes in one view.
    pub fn evaluate_cr1(&self, q_c: &Frac) -> Vec<CommitDecision> {
        let Ok(need) = quorum_count(self.cfg.n as u64, q_c) else { return Vec::new() };
        let need = need as usize;
        let mut out = BTreeMap::new();
        for ((upper, view), set) in &self.votes {
            if set.len() < need || !self.certified.contains(&(*upper, *view)) {
                continue;
            }
            let Some(ub) = self.store.get(upper) else { continue };
            if ub.height < 2 {
                continue;
            }
            let lower = ub.parent;
            let lower_votes = self.vote_count(&lower, *view);
            if lower_votes < need || !self.certified.contains(&(lower, *view)) {
                continue;
            }
            let d = CommitDecision {
                block: lower,
                height: ub.height - 1,
                rule: Rule::Cr1,
                direct: true,
                view: *view,
                evidence: CommitEvidence::Cr1 {
                    view: *view,
                    lower,
                    upper: *upper,
                    lower_votes,
                    upper_votes: set.len(),
                },
            };
            self.with_ancestors(d, &mut out);
        }
        out.into_values().collect()
    }

    /// Attestations a single report supports under `delta`.
    pub fn attestations(&self, report: &ReplicaReport, delta: Time) -> Vec<Attestation> {
        let mut out = Vec::new();
        for (&(height, view), stamp) in &report.t_lock {
            if !self.certified.contains(&(stamp.block, view)) {
                continue;
            }
            if self.store.get(&stamp.block).is_none_or(|b| b.height != height) {
                continue;
            }
            let equiv = report
                .t_equiv
                .range((0, view)..=(height, view))
                .filter(|((_, v), _)| *v == view)
                .map(|(_, t)| *t)
                .min()
                .unwrap_or(Time::MAX);
            let vc = report.t_viewchange.get(&view).copied().unwrap_or(Time::MAX);
            let end = report.time.min(equiv).min(vc);
            if end >= stamp.time && end - stamp.time >= delta.saturating_mul(2) {
                out.push(Attestation {
                    replica: report.replica,
                    height,
                    view,
                    block: stamp.block,
                    window_start: stamp.time,
                    window_end: end,
                });
            }
        }
        out
    }

    /// Synchronous rule: at least `quorum_count(n, q_r)` replicas each
    /// attest an undisturbed 2Δ window on a certified block extending `B_k`.
    pub fn evaluate_cr2(&self, delta: Time) -> Vec<CommitDecision> {
        let need = self.cfg.quorum();
        let mut support: BTreeMap<Digest, BTreeMap<ReplicaId, Attestation>> = BTreeMap::new();
        for report in self.latest.values() {
            for a in self.attestations(report, delta) {
                for d in self.store.chain_to(&a.block).unwrap_or_default() {
                    let entry = support.entry(d).or_default();
                    let keep = entry.get(&a.replica).is_none_or(|old| old.block != d && a.block == d);
                    if keep {
                        entry.insert(a.replica, a.clone());
                    }
                }
            }
        }
        let mut out = BTreeMap::new();
        for (d, atts) in &support {
            if atts.len() < need {
                continue;
            }
            let Some(b) = self.store.get(d) else { continue };
            let attestations: Vec<Attestation> = atts.values().cloned().collect();
            let direct = attestations.iter().any(|a| a.block == *d);
            let view = attestations.iter().filter(|a| a.block == *d).map(|a| a.view).min().unwrap_or_else(|| {
                attestations.iter().map(|a| a.view).min().unwrap_or(0)
            });
            out.insert(
                (b.height, *d),
                CommitDecision {
                    block: *d,
                    height: b.height,
                    rule: Rule::Cr2,
                    direct,
                    view,
                    evidence: CommitEvidence::Cr2 { attestations },
                },
            );
        }
        out.into_values().collect()
    }

    pub fn evaluate(&self, assumption: &Assumption) -> Vec<CommitDecision> {
        match assumption {
            Assumption::PartialSync { q_c } => self.evaluate_cr1(q_c),
            Assumption::Sync { delta } => self.evaluate_cr2(*delta),
        }
    }

    /// Re-checks a decision's evidence against the pool.
    pub fn verify_decision(&self, d: &CommitDecision, assumption: &Assumption) -> bool {
        match (&d.evidence, assumption) {
            (CommitEvidence::Cr1 { view, lower, upper, .. }, Assumption::PartialSync { q_c }) => {
                let Ok(need) = quorum_count(self.cfg.n as u64, q_c) else { return false };
                let linked = self.store.get(upper).is_some_and(|u| u.parent == *lower);
                linked
                    && *lower == d.block
                    && self.vote_count(lower, *view) >= need as usize
                    && self.vote_count(upper, *view) >= need as usize
            }
            (CommitEvidence::Cr2 { attestations }, Assumption::Sync { delta }) => {
                let replicas: BTreeSet<ReplicaId> = attestations.iter().map(|a| a.replica).collect();
                replicas.len() >= self.cfg.quorum()
                    && attestations.iter().all(|a| {
                        a.window_end - a.window_start >= delta * 2
                            && self.is_certified(&a.block, a.view)
                            && self.store.extends(&a.block, &d.block).unwrap_or(false)
                    })
            }
            (CommitEvidence::Indirect { via }, _) => self.store.extends(via, &d.block).unwrap_or(false),
            _ => false,
        }
    }
}

/// `evaluate_cr1` over a fresh pool built from `reports`.
pub fn evaluate_cr1(
    reports: &[ReplicaReport],
    q_c: &Frac,
    cfg: &ProtocolConfig,
    key: &VerifyKey,
) -> Vec<CommitDecision> {
    ReportPool::from_reports(cfg, key, reports).evaluate_cr1(q_c)
}

/// `evaluate_cr2` over a fresh pool built from `reports`.
pub fn evaluate_cr2(reports: &[ReplicaReport], delta: Time, cfg: &ProtocolConfig, key: &VerifyKey) -> Vec<CommitDecision> {
    ReportPool::from_reports(cfg, key, reports).evaluate_cr2(delta)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Committed {
    pub decision: CommitDecision,
    pub at: Time,
}

#[derive(Clone, Debug)]
pub struct ClientState {
    pub name: String,
    pub assumption: Assumption,
    /// Committed decisions per height; more than one entry only after a
    /// conflict, in which case every branch is retained.
    pub committed: BTreeMap<Height, Vec<Committed>>,
    pub conflict_flag: bool,
}

impl ClientState {
    pub fn new(name: impl Into<String>, assumption: Assumption) -> ClientState {
        ClientState { name: name.into(), assumption, committed: BTreeMap::new(), conflict_flag: false }
    }

    pub fn integrate_commits(&mut self, fresh: impl IntoIterator<Item = CommitDecision>, now: Time) {
        for d in fresh {
            let slot = self.committed.entry(d.height).or_default();
            match slot.iter_mut().find(|c| c.decision.block == d.block) {
                Some(existing) => {
                    if d.direct && !existing.decision.direct {
                        existing.decision = d;
                    }
                }
                None => {
                    if !slot.is_empty() {
                        self.conflict_flag = true;
                    }
                    slot.push(Committed { decision: d, at: now });
                }
            }
        }
    }

    /// Highest height with a commit.
    pub fn committed_height(&self) -> Height {
        self.committed.keys().next_back().copied().unwrap_or(0)
    }

    /// The first-committed block at each height.
    pub fn chain(&self) -> Vec<&Committed> {
        self.committed.values().filter_map(|v| v.first()).collect()
    }

    /// Line-per-height export: `height digest rule direct view`.
    pub fn export_chain(&self) -> String {
        let mut s = String::new();
        for entries in self.committed.values() {
            for c in entries {
                let d = &c.decision;
                s.push_str(&format!(
                    "height={} digest={} rule={} direct={} view={}\n",
                    d.height,
                    d.block.to_hex(),
                    d.rule,
                    d.direct,
                    d.view
                ));
            }
        }
        s
    }
}

/// True when the two chains agree on every height both have committed.
pub fn prefix_consistent(a: &ClientState, b: &ClientState) -> bool {
    a.committed.iter().all(|(h, ea)| match b.committed.get(h) {
        Some(eb) => ea.len() == 1 && eb.len() == 1 && ea[0].decision.block == eb[0].decision.block,
        None => ea.len() == 1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    SafetyViolation,
    NoProgress,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdjustError {
    #[error("no partially-synchronous commit quorum is safe here; switch to the synchronous commit rule")]
    SwitchToSynchronousRule,
}

/// Moves a client's assumption after it observed a violation or a stall.
pub fn recommend_adjustment(
    assumption: &Assumption,
    observed: Observation,
    cfg: &ProtocolConfig,
) -> Result<Assumption, AdjustError> {
    let n = cfg.n as i64;
    match (assumption, observed) {
        (Assumption::PartialSync { q_c }, Observation::SafetyViolation) => {
            let count = quorum_count(n as u64, q_c).unwrap_or(n as u64 + 1) as i64;
            if *q_c >= Frac::from_integer(1) || count + 1 > n {
                return Err(AdjustError::SwitchToSynchronousRule);
            }
            Ok(Assumption::PartialSync { q_c: Frac::new(count + 1, n) })
        }
        (Assumption::PartialSync { q_c }, Observation::NoProgress) => {
            let count = quorum_count(n as u64, q_c).unwrap_or(n as u64 + 1) as i64;
            let lowered = Frac::new((count - 2).max(0), n);
            let q_c = if lowered < cfg.q_r { cfg.q_r } else { lowered };
            Ok(Assumption::PartialSync { q_c })
        }
        (Assumption::Sync { delta }, Observation::SafetyViolation) => {
            Ok(Assumption::Sync { delta: delta.saturating_mul(2) })
        }
        (Assumption::Sync { delta }, Observation::NoProgress) => Ok(Assumption::Sync { delta: *delta }),
    }
}
