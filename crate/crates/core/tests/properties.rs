// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Invariants over randomly generated small scenarios.

use std::collections::BTreeSet;

use flexbft::adversary::{FaultConfig, Strategy as Faults};
use flexbft::calculus::{cr1_tolerance, pick_rule, Supported};
use flexbft::client::{prefix_consistent, Assumption};
use flexbft::harness::replay::audit;
use flexbft::harness::{run_scenario, simulate, ClientSpec, Expectations, Scenario};
use flexbft::netsim::DelayModel;
use flexbft::primitives::ProtocolConfig;
use flexbft::transcript::Transcript;
use flexbft::Frac;
use proptest::prelude::*;

const QR: [(i64, i64); 4] = [(3, 5), (2, 3), (3, 4), (4, 5)];

#[derive(Clone, Debug)]
struct Shape {
    n: u32,
    qr: usize,
    seed: u64,
    byz: u32,
    abc: u32,
    strategy: u8,
    gst: Option<u64>,
    strict: i64,
}

fn shape() -> impl Strategy<Value = Shape> {
    (4u32..=7, 0..QR.len(), 0..=i64::MAX as u64, 0u32..=2, 0u32..=2, 0u8..3, prop::option::of(0u64..400), 0i64..=3).prop_map(
        |(n, qr, seed, byz, abc, strategy, gst, strict)| Shape { n, qr, seed, byz, abc, strategy, gst, strict },
    )
}

fn build(sh: &Shape) -> Scenario {
    let q_r = Frac::new(QR[sh.qr].0, QR[sh.qr].1);
    let protocol = ProtocolConfig::new(sh.n, q_r, 150).unwrap();
    // Byzantine replicas from the front so that some of them lead
    let byz: BTreeSet<u32> = (0..sh.byz.min(sh.n - 1)).collect();
    let abc: BTreeSet<u32> = (sh.n - sh.abc.min(sh.n - 1 - byz.len() as u32)..sh.n).filter(|i| !byz.contains(i)).collect();
    let strategy = match sh.strategy {
        0 => Faults::Honest,
        1 => Faults::Silent,
        _ => Faults::Equivocate { partition: vec![sh.n - 1] },
    };
    let delay = match sh.gst {
        Some(gst) => DelayModel::partial_synchrony(gst, 10, 1, sh.seed),
        None => DelayModel::synchronous(10, 1, sh.seed),
    };
    let strict = (q_r + Frac::new(sh.strict, 10)).min(Frac::from_integer(1));
    Scenario {
        name: "generated".into(),
        description: String::new(),
        seed: sh.seed,
        heights_target: 6,
        probe_cadence: 5,
        max_time: 30_000,
        drain: None,
        protocol,
        faults: FaultConfig { byzantine: byz, abc, strategy },
        delay,
        clients: vec![
            ClientSpec { name: "loose".into(), assumption: Assumption::PartialSync { q_c: q_r } },
            ClientSpec { name: "strict".into(), assumption: Assumption::PartialSync { q_c: strict } },
            ClientSpec { name: "sync".into(), assumption: Assumption::Sync { delta: 10 } },
        ],
        expect: Expectations::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn correct_clients_agree(sh in shape()) {
        let s = build(&sh);
        prop_assume!(s.validate().is_ok());
        let r = run_scenario(&s);
        let safe: Vec<_> = r.clients.iter().filter(|c| s.client_safe(&c.assumption)).collect();
        for (i, a) in safe.iter().enumerate() {
            prop_assert!(!a.conflict_flag, "{} conflicted", a.name);
            for b in &safe[i + 1..] {
                prop_assert!(prefix_consistent(a, b), "{} and {} disagree", a.name, b.name);
            }
        }
        // stricter quorums commit a prefix of what looser ones commit
        let (loose, strict) = (&r.clients[0], &r.clients[1]);
        if s.client_safe(&loose.assumption) {
            prop_assert!(strict.committed_height() <= loose.committed_height());
            for (h, e) in &strict.committed {
                prop_assert_eq!(loose.committed.get(h).map(|l| l[0].decision.block), Some(e[0].decision.block));
            }
        }
    }

    #[test]
    fn runs_repeat_and_pass_audit(sh in shape()) {
        let s = build(&sh);
        prop_assume!(s.validate().is_ok());
        let (bytes, _) = simulate(&s);
        prop_assert_eq!(&bytes, &simulate(&s).0);
        let t = Transcript::parse(&bytes).unwrap();
        let fails = audit(&s, &t);
        prop_assert!(fails.is_empty(), "{:?}", fails);
    }

    #[test]
    fn picked_rule_tolerates_its_point(b in 0i64..=20, extra in 0i64..=20, q in 11i64..=20) {
        let (byz, total, q_r) = (Frac::new(b, 20), Frac::new((b + extra).min(20), 20), Frac::new(q, 20));
        match pick_rule(&byz, &total, &q_r).unwrap() {
            Supported::Cr1 { q_c } => {
                prop_assert!(q_c >= q_r && q_c <= Frac::from_integer(1));
                let t = cr1_tolerance(q_r, q_c).unwrap();
                prop_assert!(total <= t.safety_total && byz <= t.liveness_byz);
            }
            Supported::Cr2 => prop_assert!(total <= q_r && byz <= Frac::from_integer(1) - q_r),
            Supported::Unsupported => {
                prop_assert!(total > q_r || byz > Frac::from_integer(1) - q_r);
            }
        }
    }
}
