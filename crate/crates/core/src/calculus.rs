// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Fault-tolerance arithmetic for flexible quorums.
//!
//! Every function is generic over [`Scalar`]; exact rationals give exact
//! answers, floats give plotting-grade approximations. Safety bounds are
//! strict ("fewer than"), liveness bounds inclusive ("at most").

use std::fmt::{self, Display};

use num_integer::Integer;
use num_rational::Ratio;
use thiserror::Error;

use crate::scalar::{format_ratio, Scalar};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CalculusError {
    #[error("{name} must lie in {range}, got {value}")]
    OutOfRange { name: &'static str, range: &'static str, value: String },
    #[error("q_c ({q_c}) must be at least q_r ({q_r})")]
    CommitBelowReplica { q_c: String, q_r: String },
    #[error("point has total {total} below byzantine {byz}")]
    BelowDiagonal { byz: String, total: String },
}

fn out_of_range<S: fmt::Debug>(name: &'static str, range: &'static str, value: &S) -> CalculusError {
    CalculusError::OutOfRange { name, range, value: format!("{value:?}") }
}

fn check_unit<S: Scalar>(name: &'static str, q: &S) -> Result<(), CalculusError> {
    if *q <= S::zero() || *q > S::one() {
        return Err(out_of_range(name, "(0, 1]", q));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumConfig<S> {
    pub q_unq: S,
    pub q_lck: S,
    pub q_cmt: S,
    pub q_ulck: S,
}

/// `safety_total`: faulty fraction must stay strictly below it.
/// `liveness_byz`: Byzantine fraction may reach it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tolerance<S> {
    pub safety_total: S,
    pub liveness_byz: S,
}

pub fn general_tolerance<S: Scalar>(cfg: &QuorumConfig<S>) -> Result<Tolerance<S>, CalculusError> {
    check_unit("q_unq", &cfg.q_unq)?;
    check_unit("q_lck", &cfg.q_lck)?;
    check_unit("q_cmt", &cfg.q_cmt)?;
    check_unit("q_ulck", &cfg.q_ulck)?;
    let one = S::one();
    let a = cfg.q_unq.clone() + cfg.q_lck.clone() - one.clone();
    let b = cfg.q_cmt.clone() + cfg.q_ulck.clone() - one.clone();
    let biggest = S::max_of(
        S::max_of(cfg.q_unq.clone(), cfg.q_cmt.clone()),
        S::max_of(cfg.q_lck.clone(), cfg.q_ulck.clone()),
    );
    Ok(Tolerance { safety_total: S::min_of(a, b), liveness_byz: one - biggest })
}

/// Unlocking and commit quorums are the client's `q_c`; locking and
/// unique-certificate quorums are the replicas' `q_r`.
pub fn cr1_tolerance<S: Scalar>(q_r: S, q_c: S) -> Result<Tolerance<S>, CalculusError> {
    if q_r <= S::half() || q_r > S::one() {
        return Err(out_of_range("q_r", "(1/2, 1]", &q_r));
    }
    check_unit("q_c", &q_c)?;
    if q_c < q_r {
        return Err(CalculusError::CommitBelowReplica { q_c: format!("{q_c:?}"), q_r: format!("{q_r:?}") });
    }
    general_tolerance(&QuorumConfig { q_unq: q_c.clone(), q_lck: q_r.clone(), q_cmt: q_c, q_ulck: q_r })
}

/// Synchronous commits are safe below `q_r` faulty and live while at most
/// `1 − q_r` are Byzantine. `q_r = 1/2` is accepted so the classic
/// synchronous point can be expressed.
pub fn cr2_tolerance<S: Scalar>(q_r: S) -> Result<Tolerance<S>, CalculusError> {
    if q_r < S::half() || q_r > S::one() {
        return Err(out_of_range("q_r", "[1/2, 1]", &q_r));
    }
    Ok(Tolerance { liveness_byz: S::one() - q_r.clone(), safety_total: q_r })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Supported<S> {
    Cr1 { q_c: S },
    Cr2,
    Unsupported,
}

impl<S> Supported<S> {
    pub fn label(&self) -> &'static str {
        match self {
            Supported::Cr1 { .. } => "CR1",
            Supported::Cr2 => "CR2",
            Supported::Unsupported => "NONE",
        }
    }
}

/// A client's requirement: tolerate `byz` Byzantine and `total` faulty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientPoint<S> {
    pub byz: S,
    pub total: S,
    pub supported_by: Supported<S>,
}

/// Chooses a commit rule whose tolerance reaches the requested point.
///
/// A point sits on a rule's boundary when the requested total equals the
/// rule's safety bound, so boundary points count as supported. CR1 is
/// preferred, with the smallest `q_c` that works: `max(q_r, total − q_r + 1)`.
pub fn pick_rule<S: Scalar>(byz: &S, total: &S, q_r: &S) -> Result<Supported<S>, CalculusError> {
    if total < byz {
        return Err(CalculusError::BelowDiagonal { byz: format!("{byz:?}"), total: format!("{total:?}") });
    }
    if *byz < S::zero() || *total > S::one() {
        return Err(out_of_range("point", "[0, 1]^2", &(byz, total)));
    }
    if *q_r <= S::half() || *q_r > S::one() {
        return Err(out_of_range("q_r", "(1/2, 1]", q_r));
    }
    let one = S::one();
    let q_c = S::max_of(q_r.clone(), total.clone() - q_r.clone() + one.clone());
    if q_c <= one {
        let t = cr1_tolerance(q_r.clone(), q_c.clone())?;
        if t.safety_total >= *total && *byz <= t.liveness_byz {
            return Ok(Supported::Cr1 { q_c });
        }
    }
    let t = cr2_tolerance(q_r.clone())?;
    if t.safety_total >= *total && *byz <= t.liveness_byz {
        return Ok(Supported::Cr2);
    }
    Ok(Supported::Unsupported)
}

/// Largest Byzantine fraction any CR1 client can tolerate: the two bounds
/// `B ≤ 1 − q_c` and `B ≤ q_c + q_r − 1` meet at `q_r/2`, unless `q_c ≥ q_r`
/// caps it at `1 − q_r` first.
pub fn cr1_max_byz<S: Scalar>(q_r: &S) -> S {
    S::min_of(q_r.clone() / S::two(), S::one() - q_r.clone())
}

/// Largest total fault fraction any CR1 client can tolerate (at `q_c = 1`).
pub fn cr1_max_total<S: Scalar>(q_r: &S) -> S {
    q_r.clone()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionGrid<S> {
    pub q_r: S,
    pub step: S,
    pub points: Vec<ClientPoint<S>>,
    /// `(byz, total)` at the Byzantine-heaviest end and at `q_c = 1`.
    pub cr1_line: [(S, S); 2],
    /// `(byz, total)` corner of the synchronous rectangle.
    pub cr2_corner: (S, S),
}

pub fn region_grid<S: Scalar>(q_r: &S, step: &S) -> Result<RegionGrid<S>, CalculusError> {
    let tenth = S::one() / (S::two() * S::two() * S::two() + S::two());
    if *step <= S::zero() || *step > tenth {
        return Err(out_of_range("step", "(0, 1/10]", step));
    }
    let one = S::one();
    let mut axis = Vec::new();
    let mut x = S::zero();
    while x <= one {
        axis.push(x.clone());
        x = x + step.clone();
    }
    let mut points = Vec::new();
    for byz in &axis {
        for total in axis.iter().filter(|t| *t >= byz) {
            let supported_by = pick_rule(byz, total, q_r)?;
            points.push(ClientPoint { byz: byz.clone(), total: total.clone(), supported_by });
        }
    }
    // the line runs from q_c = q_r up to q_c = 1, clipped at the diagonal
    let byz_max = cr1_max_byz(q_r);
    let right = (byz_max.clone(), S::max_of(byz_max, S::two() * q_r.clone() - one.clone()));
    let left = (S::zero(), q_r.clone());
    Ok(RegionGrid {
        q_r: q_r.clone(),
        step: step.clone(),
        points,
        cr1_line: [right, left],
        cr2_corner: (one - q_r.clone(), q_r.clone()),
    })
}

/// True when `(byz, total)` is tolerable by some CR1 rule under `q_r`.
pub fn in_cr1_region<S: Scalar>(byz: &S, total: &S, q_r: &S) -> bool {
    matches!(pick_rule(byz, total, q_r), Ok(Supported::Cr1 { .. }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Equal,
    /// The first region lies strictly inside the second.
    ContainedIn,
    /// The first region strictly contains the second.
    Contains,
    Incomparable,
}

impl Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Equal => "equal",
            Relation::ContainedIn => "contained-in",
            Relation::Contains => "contains",
            Relation::Incomparable => "incomparable",
        })
    }
}

/// CR1 regions are `{B ≤ T, B ≤ 1 − q_r, B + T ≤ q_r}`; comparing two of
/// them reduces to comparing their extreme corners.
fn cr1_subset<S: Scalar>(a: &S, b: &S) -> bool {
    a <= b && cr1_max_byz(a) <= S::one() - b.clone()
}

pub fn cr1_relation<S: Scalar>(a: &S, b: &S) -> Relation {
    match (cr1_subset(a, b), cr1_subset(b, a)) {
        (true, true) => Relation::Equal,
        (true, false) => Relation::ContainedIn,
        (false, true) => Relation::Contains,
        (false, false) => Relation::Incomparable,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QrSummary<S> {
    pub q_r: S,
    pub cr1_max_total: S,
    pub cr1_max_byz: S,
    pub cr2: Tolerance<S>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QrComparison<S> {
    pub summaries: Vec<QrSummary<S>>,
    pub pairs: Vec<(S, S, Relation)>,
}

pub fn compare_qr<S: Scalar>(values: &[S]) -> Result<QrComparison<S>, CalculusError> {
    let mut summaries = Vec::new();
    for q in values {
        if *q <= S::half() || *q > S::one() {
            return Err(out_of_range("q_r", "(1/2, 1]", q));
        }
        summaries.push(QrSummary {
            q_r: q.clone(),
            cr1_max_total: cr1_max_total(q),
            cr1_max_byz: cr1_max_byz(q),
            cr2: cr2_tolerance(q.clone())?,
        });
    }
    let mut pairs = Vec::new();
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            pairs.push((a.clone(), b.clone(), cr1_relation(a, b)));
        }
    }
    Ok(QrComparison { summaries, pairs })
}

/// Region as CSV: a `#` summary line, a header, then `byz,total,rule,q_c`.
pub fn region_csv<T>(grid: &RegionGrid<Ratio<T>>) -> String
where
    T: Integer + Clone + Display,
{
    let f = format_ratio::<T>;
    let mut s = format!(
        "# q_r={} step={} cr1_line=({},{})-({},{}) cr2_corner=({},{})\n",
        f(&grid.q_r),
        f(&grid.step),
        f(&grid.cr1_line[0].0),
        f(&grid.cr1_line[0].1),
        f(&grid.cr1_line[1].0),
        f(&grid.cr1_line[1].1),
        f(&grid.cr2_corner.0),
        f(&grid.cr2_corner.1),
    );
    s.push_str("byz,total,rule,q_c\n");
    for p in &grid.points {
        let q_c = match &p.supported_by {
            Supported::Cr1 { q_c } => f(q_c),
            _ => String::new(),
        };
        s.push_str(&format!("{},{},{},{}\n", f(&p.byz), f(&p.total), p.supported_by.label(), q_c));
    }
    s
}

/// Human-readable comparison report with one line per pair.
pub fn comparison_text<T>(cmp: &QrComparison<Ratio<T>>) -> String
where
    T: Integer + Clone + Display,
{
    let f = format_ratio::<T>;
    let mut s = String::new();
    for q in &cmp.summaries {
        s.push_str(&format!(
            "q_r={} cr1_max_total={} cr1_max_byz={} cr2_total={} cr2_byz={}\n",
            f(&q.q_r),
            f(&q.cr1_max_total),
            f(&q.cr1_max_byz),
            f(&q.cr2.safety_total),
            f(&q.cr2.liveness_byz)
        ));
    }
    for (a, b, rel) in &cmp.pairs {
        s.push_str(&format!("{} vs {}: {}\n", f(a), f(b), rel));
    }
    s
}
