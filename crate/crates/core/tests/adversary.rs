// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

mod support;

use std::collections::BTreeSet;

use flexbft::adversary::{attack_precondition, Controller, FaultConfig, Strategy};
use flexbft::client::Assumption;
use flexbft::harness::run_scenario;
use flexbft::netsim::DelayModel;
use flexbft::primitives::{Keyring, ProtocolConfig};
use flexbft::Frac;

use support::corpus::load;

fn cfg(n: u32, q_r: Frac) -> ProtocolConfig {
    ProtocolConfig::new(n, q_r, 100).unwrap()
}

fn ids(r: std::ops::Range<u32>) -> BTreeSet<u32> {
    r.collect()
}

fn double_commit(abc: BTreeSet<u32>, victim: Frac) -> FaultConfig {
    FaultConfig { abc, strategy: Strategy::AbcDoubleCommit { victim_q_c: victim }, ..Default::default() }
}

fn delay_attack(byzantine: BTreeSet<u32>, victim_delta: u64) -> FaultConfig {
    FaultConfig { byzantine, strategy: Strategy::Cr2DelayAttack { victim_delta }, ..Default::default() }
}

#[test]
fn double_commit_preconditions() {
    let c = cfg(10, Frac::new(3, 5));
    let psync = DelayModel::partial_synchrony(1000, 10, 2, 0);
    assert_eq!(attack_precondition(&double_commit(ids(0..4), Frac::new(3, 5)), &c, &psync), Ok(()));

    // 4 faulty cannot reach the overlap of a 9-replica quorum and a 7-replica one
    let err = attack_precondition(&double_commit(ids(0..4), Frac::new(4, 5)), &c, &psync).unwrap_err();
    assert!(err.contains("cannot break"), "{err}");
    let err = attack_precondition(&double_commit(ids(2..6), Frac::new(3, 5)), &c, &psync).unwrap_err();
    assert!(err.contains("leader of view 0"), "{err}");
    let err = attack_precondition(&double_commit(ids(0..4), Frac::new(3, 5)), &c, &DelayModel::synchronous(10, 2, 0))
        .unwrap_err();
    assert!(err.contains("partially synchronous"), "{err}");
    let early = DelayModel::partial_synchrony(150, 10, 2, 0);
    let err = attack_precondition(&double_commit(ids(0..4), Frac::new(3, 5)), &c, &early).unwrap_err();
    assert!(err.contains("gst"), "{err}");
}

#[test]
fn delay_attack_preconditions() {
    let c = cfg(10, Frac::new(11, 20));
    let sync = DelayModel::synchronous(30, 2, 0);
    assert_eq!(attack_precondition(&delay_attack(ids(0..2), 10), &c, &sync), Ok(()));

    let err = attack_precondition(&delay_attack(ids(0..2), 30), &c, &sync).unwrap_err();
    assert!(err.contains("does not exceed"), "{err}");
    let err = attack_precondition(&delay_attack(ids(0..2), 12), &c, &sync).unwrap_err();
    assert!(err.contains("no window"), "{err}");
    let err = attack_precondition(&delay_attack(ids(1..3), 10), &c, &sync).unwrap_err();
    assert!(err.contains("leader of view 0"), "{err}");
    // a 2/3 replica quorum leaves too few honest replicas for two groups
    let err = attack_precondition(&delay_attack(ids(0..2), 10), &cfg(10, Frac::new(2, 3)), &sync).unwrap_err();
    assert!(err.contains("two certifying groups"), "{err}");
    let err =
        attack_precondition(&delay_attack(ids(0..2), 10), &c, &DelayModel::partial_synchrony(0, 30, 2, 0)).unwrap_err();
    assert!(err.contains("synchronous"), "{err}");
}

#[test]
fn other_strategies_always_run() {
    let c = cfg(4, Frac::new(2, 3));
    let d = DelayModel::synchronous(10, 2, 0);
    for strategy in [Strategy::Honest, Strategy::Silent, Strategy::Equivocate { partition: vec![1] }] {
        let fc = FaultConfig { byzantine: ids(0..1), strategy, ..Default::default() };
        assert_eq!(attack_precondition(&fc, &c, &d), Ok(()));
    }
}

#[test]
fn controller_exposes_refusal() {
    let c = cfg(10, Frac::new(3, 5));
    let ring = Keyring::from_seed(1);
    let psync = DelayModel::partial_synchrony(1000, 10, 2, 0);
    let ok = Controller::new(&c, &ring, &double_commit(ids(0..4), Frac::new(3, 5)), &psync, 10);
    assert_eq!(ok.refusal(), None);
    let refused = Controller::new(&c, &ring, &double_commit(ids(0..4), Frac::new(4, 5)), &psync, 10);
    assert!(refused.refusal().is_some_and(|r| r.contains("cannot break")));
}

#[test]
fn refused_attack_leaves_every_client_clean() {
    for name in ["refused-double-commit-leader-n10", "refused-double-commit-budget-n10", "refused-cr2-attack-delta-n10"] {
        let r = run_scenario(&load(name));
        assert!(r.report.attack.starts_with("refused"), "{name}: {}", r.report.attack);
        for c in &r.clients {
            assert!(!c.conflict_flag, "{name}: {} conflicted", c.name);
            assert!(c.committed_height() > 0, "{name}: {} stalled", c.name);
        }
    }
}

#[test]
fn equivocation_is_caught_and_survived() {
    let s = load("equivocate-n10");
    let r = run_scenario(&s);
    assert!(r.report.view_changes >= 1);
    for c in r.clients.iter().filter(|c| s.client_safe(&c.assumption)) {
        assert!(!c.conflict_flag, "{}", c.name);
        assert!(c.committed_height() + 1 >= s.heights_target, "{} at {}", c.name, c.committed_height());
    }
}

#[test]
fn attack_outcome_tracks_victim_parameter() {
    // same scenario, the attack aimed at a q_c it cannot break
    let mut s = load("abc-double-commit-n10");
    s.faults.strategy = Strategy::AbcDoubleCommit { victim_q_c: Frac::new(4, 5) };
    s.expect.conflicts.clear();
    let r = run_scenario(&s);
    assert!(r.report.attack.starts_with("refused"));
    assert!(r.clients.iter().all(|c| !c.conflict_flag));
    assert!(r.clients.iter().any(|c| matches!(c.assumption, Assumption::PartialSync { .. })));
}
