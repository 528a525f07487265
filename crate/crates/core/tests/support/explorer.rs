// Copyright (c) The flexbft Contributors
// SPDX-License-Identifier: Apache-2.0

//! Exhaustive search over small abstract executions.
//!
//! Two models, both far coarser than the simulator. The CR1 model has no
//! clock: the adversary orders every delivery, may change views at will and
//! picks which status sets a new leader sees. The CR2 model is one view on a
//! discrete clock where every proposal an honest replica receives is
//! forwarded to the other honest replicas within `[min, bound]` ticks.
//!
//! Faulty replicas always vote for every block: extra votes only add
//! certificates and commit evidence, and the adversary still decides which
//! of them anyone gets to see. Each search returns the strongest client
//! parameter for which some schedule produces two conflicting commits.

use std::collections::HashMap;

const NONE: u8 = u8::MAX;
const GENESIS: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Blk {
    parent: u8,
    height: u8,
    view: u8,
    /// Justified by a status set rather than a same-view parent certificate.
    first: bool,
}

fn genesis() -> Blk {
    Blk { parent: NONE, height: 0, view: 0, first: false }
}

fn extends(blocks: &[Blk], mut d: u8, a: u8) -> bool {
    loop {
        if d == a {
            return true;
        }
        if d == GENESIS {
            return false;
        }
        d = blocks[d as usize].parent;
    }
}

fn conflict(blocks: &[Blk], a: u8, b: u8) -> bool {
    !extends(blocks, a, b) && !extends(blocks, b, a)
}

/// Height of the first block where the branches through `a` and `b` differ.
fn fork_height(blocks: &[Blk], a: u8, b: u8) -> u8 {
    let mut x = a;
    while !extends(blocks, b, x) {
        x = blocks[x as usize].parent;
    }
    blocks[x as usize].height + 1
}

/// Best conflicting pair: the largest `k` such that two conflicting blocks
/// each clear `k` under `strength`.
fn best_conflict(blocks: &[Blk], strength: &[u32]) -> u32 {
    let mut best = 0;
    for a in 1..blocks.len() {
        if strength[a] <= best {
            continue;
        }
        for b in a + 1..blocks.len() {
            let m = strength[a].min(strength[b]);
            if m > best && conflict(blocks, a as u8, b as u8) {
                best = m;
            }
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Cr1Setup {
    pub n: usize,
    pub faulty: Vec<bool>,
    pub qr: usize,
    pub views: u8,
    pub max_height: u8,
    pub horizon: u8,
}

#[derive(Clone, Debug, Default)]
pub struct Found {
    /// Largest client parameter with a conflicting schedule; 0 for none.
    pub best: u32,
    pub witness: Vec<String>,
    pub states: usize,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Cr1State {
    view: u8,
    blocks: Vec<Blk>,
    votes: Vec<u8>,
    /// (lock, tip) of every honest replica, sorted.
    honest: Vec<(u8, u8)>,
    /// Honest locks at the last view change.
    statuses: Vec<u8>,
    leader_tip: u8,
}

struct Cr1Search<'a> {
    setup: &'a Cr1Setup,
    f: usize,
    stop: u32,
    seen: HashMap<Cr1State, u8>,
    path: Vec<String>,
    found: Found,
}

impl Cr1Setup {
    /// Largest commit quorum (in replicas) for which two conflicting CR1
    /// commits are reachable. The search stops early once `stop` is reached.
    pub fn explore(&self, stop: u32) -> Found {
        let f = self.faulty.iter().filter(|x| **x).count();
        let honest = self.n - f;
        let s = Cr1State {
            view: 0,
            blocks: vec![genesis()],
            votes: vec![0],
            honest: vec![(GENESIS, NONE); honest],
            statuses: vec![GENESIS; honest],
            leader_tip: NONE,
        };
        let mut search =
            Cr1Search { setup: self, f, stop, seen: HashMap::new(), path: Vec::new(), found: Found::default() };
        search.dfs(s, self.horizon);
        search.found.states = search.seen.len();
        search.found
    }
}

impl Cr1Search<'_> {
    fn rank(&self, s: &Cr1State, b: u8) -> (u8, u8) {
        let blk = s.blocks[b as usize];
        (blk.view, blk.height)
    }

    fn certified(&self, s: &Cr1State, b: u8) -> bool {
        b == GENESIS || s.votes[b as usize] as usize + self.f >= self.setup.qr
    }

    /// Whether some status set of `qr` members makes `c` its highest
    /// certificate.
    fn achievable(&self, s: &Cr1State, c: u8) -> bool {
        if !self.certified(s, c) || s.blocks[c as usize].view >= s.view && c != GENESIS {
            return false;
        }
        let rc = self.rank(s, c);
        let below = s.statuses.iter().filter(|&&x| self.rank(s, x) <= rc).count();
        let named = self.f > 0 || s.statuses.contains(&c);
        named && below + self.f >= self.setup.qr
    }

    fn evaluate(&mut self, s: &Cr1State) {
        let f = self.f as u32;
        let total = |b: usize| s.votes[b] as u32 + f;
        let mut strength = vec![0u32; s.blocks.len()];
        for (c, blk) in s.blocks.iter().enumerate().skip(1) {
            let p = blk.parent as usize;
            if p != GENESIS as usize && s.blocks[p].view == blk.view {
                strength[p] = strength[p].max(total(p).min(total(c)));
            }
        }
        let best = best_conflict(&s.blocks, &strength);
        if best > self.found.best {
            self.found.best = best;
            self.found.witness = self.path.clone();
        }
    }

    fn dfs(&mut self, s: Cr1State, depth: u8) {
        if self.found.best >= self.stop {
            return;
        }
        match self.seen.get(&s) {
            Some(&d) if d >= depth => return,
            _ => {}
        }
        self.seen.insert(s.clone(), depth);
        self.evaluate(&s);
        if depth == 0 {
            return;
        }
        for (label, next) in self.successors(&s) {
            self.path.push(label);
            self.dfs(next, depth - 1);
            self.path.pop();
        }
    }

    fn successors(&self, s: &Cr1State) -> Vec<(String, Cr1State)> {
        let mut out = Vec::new();
        if s.view + 1 < self.setup.views {
            let mut t = s.clone();
            t.view += 1;
            t.statuses = s.honest.iter().map(|h| h.0).collect();
            t.statuses.sort_unstable();
            t.honest = s.honest.iter().map(|h| (h.0, NONE)).collect();
            t.honest.sort_unstable();
            t.leader_tip = NONE;
            out.push((format!("view change to {}", t.view), t));
        }
        self.proposals(s, &mut out);
        self.deliveries(s, &mut out);
        out
    }

    fn propose(&self, s: &Cr1State, parent: u8, first: bool, honest_leader: bool) -> Option<(String, Cr1State)> {
        let height = s.blocks[parent as usize].height + 1;
        let siblings =
            s.blocks.iter().filter(|b| b.parent == parent && b.view == s.view).count();
        if height > self.setup.max_height || siblings >= 2 {
            return None;
        }
        let mut t = s.clone();
        t.blocks.push(Blk { parent, height, view: s.view, first });
        t.votes.push(0);
        let id = (t.blocks.len() - 1) as u8;
        if honest_leader {
            t.leader_tip = id;
        }
        Some((format!("propose b{id} on b{parent} (view {}, height {height})", s.view), t))
    }

    fn proposals(&self, s: &Cr1State, out: &mut Vec<(String, Cr1State)>) {
        let leader = s.view as usize % self.setup.n;
        let first_parents: Vec<u8> = if s.view == 0 {
            vec![GENESIS]
        } else {
            (0..s.blocks.len() as u8).filter(|&c| self.achievable(s, c)).collect()
        };
        if self.setup.faulty[leader] {
            for &p in &first_parents {
                out.extend(self.propose(s, p, true, false));
            }
            for p in 1..s.blocks.len() as u8 {
                if s.blocks[p as usize].view == s.view && self.certified(s, p) {
                    out.extend(self.propose(s, p, false, false));
                }
            }
        } else if s.leader_tip == NONE {
            for &p in &first_parents {
                out.extend(self.propose(s, p, true, true));
            }
        } else {
            let tip = s.leader_tip;
            let has_child = s.blocks.iter().any(|b| b.parent == tip && b.view == s.view);
            if self.certified(s, tip) && !has_child {
                out.extend(self.propose(s, tip, false, true));
            }
        }
    }

    /// Delivers one block to any number of eligible honest replicas at once,
    /// grouped by identical state.
    fn deliveries(&self, s: &Cr1State, out: &mut Vec<(String, Cr1State)>) {
        for b in 1..s.blocks.len() as u8 {
            let blk = s.blocks[b as usize];
            if blk.view != s.view {
                continue;
            }
            let mut classes: Vec<(usize, usize)> = Vec::new();
            let mut i = 0;
            while i < s.honest.len() {
                let mut j = i;
                while j < s.honest.len() && s.honest[j] == s.honest[i] {
                    j += 1;
                }
                let tip = s.honest[i].1;
                if tip == NONE || (!blk.first && tip == blk.parent) {
                    classes.push((i, j - i));
                }
                i = j;
            }
            if classes.is_empty() {
                continue;
            }
            let mut counts = vec![0usize; classes.len()];
            loop {
                let mut k = 0;
                while k < counts.len() {
                    if counts[k] < classes[k].1 {
                        counts[k] += 1;
                        break;
                    }
                    counts[k] = 0;
                    k += 1;
                }
                if k == counts.len() {
                    break;
                }
                let mut t = s.clone();
                let mut voters = 0;
                for (c, &(start, _)) in counts.iter().zip(&classes) {
                    for r in start..start + c {
                        let (lock, _) = t.honest[r];
                        let lock = if self.rank(&t, blk.parent) > self.rank(&t, lock) { blk.parent } else { lock };
                        t.honest[r] = (lock, b);
                        voters += 1;
                    }
                }
                t.votes[b as usize] += voters as u8;
                t.honest.sort_unstable();
                out.push((format!("deliver b{b} to {voters} honest"), t));
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cr2Setup {
    pub n: usize,
    /// Faulty replicas, the view leader among them; the rest are honest.
    pub f: usize,
    pub qr: usize,
    pub min: i16,
    pub bound: i16,
    pub max_height: u8,
    pub horizon: u8,
}

/// Times are kept relative to the current tick so that states differing
/// only by a clock shift coincide.
const NEVER: i16 = i16::MAX;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Rep {
    seen: u16,
    tip: u8,
    blamed: bool,
    lock_at: Vec<i16>,
    /// Earliest equivocation seen, by fork height.
    equiv: Vec<i16>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Cr2State {
    blocks: Vec<Blk>,
    votes: Vec<u8>,
    cert_at: Vec<i16>,
    reps: Vec<Rep>,
    /// (to, block, earliest, latest)
    pending: Vec<(u8, u8, i16, i16)>,
}

fn shift(t: &mut i16, by: i16) {
    if *t != NEVER {
        *t -= by;
    }
}

impl Cr2State {
    fn tick(&mut self) {
        // certificate times and earliest deliveries only matter once reached
        for t in &mut self.cert_at {
            if *t != NEVER {
                *t = (*t - 1).max(0);
            }
        }
        for rep in &mut self.reps {
            rep.lock_at.iter_mut().chain(rep.equiv.iter_mut()).for_each(|t| shift(t, 1));
        }
        for p in &mut self.pending {
            p.2 = (p.2 - 1).max(0);
            p.3 -= 1;
        }
    }
}

impl Cr2State {
    /// Relabels honest replicas into a sorted order; replicas with equal
    /// state and equal inbound traffic are interchangeable.
    fn canonical(mut self) -> Cr2State {
        let inbound = |r: usize| -> Vec<(u8, i16, i16)> {
            self.pending.iter().filter(|p| p.0 as usize == r).map(|p| (p.1, p.2, p.3)).collect()
        };
        let mut order: Vec<usize> = (0..self.reps.len()).collect();
        order.sort_by_cached_key(|&r| (self.reps[r].clone(), inbound(r)));
        let mut rename = vec![0u8; order.len()];
        for (new, &old) in order.iter().enumerate() {
            rename[old] = new as u8;
        }
        self.reps = order.iter().map(|&r| self.reps[r].clone()).collect();
        for p in &mut self.pending {
            p.0 = rename[p.0 as usize];
        }
        self.pending.sort_unstable();
        self
    }
}

struct Cr2Search<'a> {
    setup: &'a Cr2Setup,
    stop: u32,
    seen: HashMap<Cr2State, u8>,
    path: Vec<String>,
    clock: i16,
    found: Found,
}

impl Cr2Setup {
    /// Largest client delta for which two conflicting CR2 commits are
    /// reachable. The search stops early once `stop` is reached.
    pub fn explore(&self, stop: u32) -> Found {
        let honest = self.n - self.f;
        let h = self.max_height as usize + 2;
        let rep = Rep { seen: 1, tip: NONE, blamed: false, lock_at: vec![NEVER], equiv: vec![NEVER; h] };
        let s = Cr2State {
            blocks: vec![genesis()],
            votes: vec![0],
            cert_at: vec![0],
            reps: vec![rep; honest],
            pending: Vec::new(),
        };
        let mut search =
            Cr2Search { setup: self, stop, seen: HashMap::new(), path: Vec::new(), clock: 0, found: Found::default() };
        search.dfs(s, self.horizon);
        search.found.states = search.seen.len();
        search.found
    }
}

impl Cr2Search<'_> {
    fn certified(&self, s: &Cr2State, b: usize) -> bool {
        b == GENESIS as usize || s.votes[b] as usize + self.setup.f >= self.setup.qr
    }

    fn receive(&self, s: &mut Cr2State, r: usize, b: u8, now: i16) {
        let bit = 1u16 << b;
        if s.reps[r].seen & bit != 0 {
            return;
        }
        let blk = s.blocks[b as usize];
        for other in 0..s.reps.len() {
            if other != r && s.reps[other].seen & bit == 0 {
                s.pending.push((other as u8, b, now + self.setup.min, now + self.setup.bound));
            }
        }
        let rep = &mut s.reps[r];
        rep.seen |= bit;
        if blk.parent != GENESIS && rep.lock_at[blk.parent as usize] == NEVER {
            rep.lock_at[blk.parent as usize] = now;
        }
        for c in 1..s.blocks.len() as u8 {
            if c != b && rep.seen & (1 << c) != 0 && conflict(&s.blocks, b, c) {
                let h = fork_height(&s.blocks, b, c) as usize;
                rep.equiv[h] = rep.equiv[h].min(now);
                rep.blamed = true;
            }
        }
        if !rep.blamed && (rep.tip == NONE || rep.tip == blk.parent) {
            rep.tip = b;
            s.votes[b as usize] += 1;
            if self.certified(s, b as usize) && s.cert_at[b as usize] == NEVER {
                s.cert_at[b as usize] = now + self.setup.min;
            }
        }
        s.pending.sort_unstable();
        s.pending.dedup();
    }

    /// Lets every forwarded proposal land as late as allowed, then reads
    /// off the undisturbed windows.
    #[allow(clippy::needless_range_loop)]
    fn evaluate(&mut self, s: &Cr2State) {
        let mut t = s.clone();
        while !t.pending.is_empty() {
            let i = (0..t.pending.len()).min_by_key(|&i| t.pending[i].3).unwrap();
            let (to, b, _, hi) = t.pending.remove(i);
            self.receive(&mut t, to as usize, b, hi);
        }
        let nb = t.blocks.len();
        let certified: Vec<bool> = (0..nb).map(|b| self.certified(&t, b)).collect();
        // per block: undisturbed window of each honest replica on it or a descendant
        let mut windows: Vec<Vec<u32>> = vec![Vec::new(); nb];
        for rep in &t.reps {
            let mut best = vec![0u32; nb];
            for d in 1..nb {
                if !certified[d] || rep.lock_at[d] == NEVER {
                    continue;
                }
                let h = t.blocks[d].height as usize;
                let end = rep.equiv[..=h].iter().copied().min().unwrap_or(NEVER);
                let w = if end == NEVER { u32::MAX } else { (end - rep.lock_at[d]).max(0) as u32 };
                for b in 1..nb {
                    if extends(&t.blocks, d as u8, b as u8) {
                        best[b] = best[b].max(w);
                    }
                }
            }
            for b in 1..nb {
                windows[b].push(best[b]);
            }
        }
        // a block commits for delta when enough windows reach 2 * delta;
        // faulty replicas back any certified branch with made-up windows
        let mut strength = vec![0u32; nb];
        for b in 1..nb {
            let backed = (1..nb).any(|d| certified[d] && extends(&t.blocks, d as u8, b as u8));
            let need = self.setup.qr.saturating_sub(if backed { self.setup.f } else { 0 });
            let mut w = windows[b].clone();
            w.sort_unstable_by(|a, b| b.cmp(a));
            strength[b] = match need {
                0 => u32::MAX,
                k => w.get(k - 1).map_or(0, |&x| if x == u32::MAX { x } else { x / 2 }),
            };
        }
        let best = best_conflict(&t.blocks, &strength);
        if best > self.found.best {
            self.found.best = best;
            self.found.witness = self.path.clone();
        }
    }

    fn dfs(&mut self, s: Cr2State, depth: u8) {
        if self.found.best >= self.stop {
            return;
        }
        let s = s.canonical();
        match self.seen.get(&s) {
            Some(&d) if d >= depth => return,
            _ => {}
        }
        self.seen.insert(s.clone(), depth);
        self.evaluate(&s);
        if depth == 0 {
            return;
        }
        for (label, next, dt) in self.successors(&s) {
            self.path.push(label);
            self.clock += dt;
            self.dfs(next, depth - 1);
            self.clock -= dt;
            self.path.pop();
        }
    }

    fn successors(&self, s: &Cr2State) -> Vec<(String, Cr2State, i16)> {
        let now = self.clock;
        let mut out = Vec::new();
        if s.pending.iter().all(|p| p.3 > 0) {
            let mut t = s.clone();
            t.tick();
            out.push((format!("tick to {}", now + 1), t, 1));
        }
        // a forward that could land early is matched by the leader sending
        // the same block directly, so forwards only land when due
        for (i, &(to, b, _, hi)) in s.pending.iter().enumerate() {
            if hi <= 0 {
                let mut t = s.clone();
                t.pending.remove(i);
                self.receive(&mut t, to as usize, b, 0);
                out.push((format!("t={now} forward of b{b} reaches r{to}"), t, 0));
            }
        }
        // the leader sends an existing block, or a fresh child of a block it
        // holds a certificate for, straight to one honest replica
        let mut candidates: Vec<(Cr2State, u8)> = Vec::new();
        for b in 1..s.blocks.len() as u8 {
            candidates.push((s.clone(), b));
        }
        for p in 0..s.blocks.len() {
            let blk = s.blocks[p];
            let siblings = s.blocks.iter().filter(|b| b.parent == p as u8).count();
            if s.cert_at[p] <= 0 && blk.height < self.setup.max_height && siblings < 2 && s.blocks.len() < 15 {
                let mut t = s.clone();
                t.blocks.push(Blk { parent: p as u8, height: blk.height + 1, view: 0, first: p == 0 });
                t.votes.push(0);
                t.cert_at.push(NEVER);
                for rep in &mut t.reps {
                    rep.lock_at.push(NEVER);
                }
                let id = (t.blocks.len() - 1) as u8;
                candidates.push((t, id));
            }
        }
        for (base, b) in candidates {
            for r in 0..base.reps.len() {
                if base.reps[r].seen & (1 << b) == 0 {
                    let mut t = base.clone();
                    self.receive(&mut t, r, b, 0);
                    let parent = t.blocks[b as usize].parent;
                    out.push((format!("t={now} leader sends b{b} (parent b{parent}) to r{r}"), t, 0));
                }
            }
        }
        out
    }
}
