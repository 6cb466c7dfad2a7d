//! The run-time region store.
//!
//! Regions form a tree rooted at the heap. Each region carries a thread map
//! from thread ids to (region, lock) counts and a heap of cells. A region
//! whose region counts sum to zero is removed together with its subtree.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ast::{CapOp, Expr, LocationId, RegionId, ThreadId};
use crate::pretty::pretty;

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
pub enum Fault {
    #[error("region {0} is not live")]
    NotLive(RegionId),
    #[error("region {region} is not accessible to thread {thread}")]
    Inaccessible { region: RegionId, thread: ThreadId },
    #[error("unknown location {0}")]
    UnknownLocation(LocationId),
    #[error("count underflow on region {region} for thread {thread}")]
    CountUnderflow { region: RegionId, thread: ThreadId },
    #[error("thread {thread} lacks the counts to transfer on region {region}")]
    InsufficientDynamicCounts { region: RegionId, thread: ThreadId },
    #[error("malformed term: {0}")]
    MalformedTerm(String),
}

impl Fault {
    pub fn code(&self) -> &'static str {
        match self {
            Fault::NotLive(_) => "NotLive",
            Fault::Inaccessible { .. } => "Inaccessible",
            Fault::UnknownLocation(_) => "UnknownLocation",
            Fault::CountUnderflow { .. } => "CountUnderflow",
            Fault::InsufficientDynamicCounts { .. } => "InsufficientDynamicCounts",
            Fault::MalformedTerm(_) => "MalformedTerm",
        }
    }
}

/// A lock request that has to wait for `holder`, who holds a lock on
/// `region` (the requested region, an ancestor or a descendant).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blocked {
    pub region: RegionId,
    pub holder: ThreadId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CapOutcome {
    Done,
    Blocked(Blocked),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub parent: Option<RegionId>,
    pub threads: BTreeMap<ThreadId, (u32, u32)>,
    pub cells: BTreeMap<LocationId, Expr>,
    pub children: BTreeSet<RegionId>,
}

impl Region {
    fn new(parent: Option<RegionId>, owner: ThreadId, counts: (u32, u32)) -> Self {
        Region { parent, threads: [(owner, counts)].into_iter().collect(), cells: BTreeMap::new(), children: BTreeSet::new() }
    }

    pub fn region_sum(&self) -> u32 {
        self.threads.values().map(|c| c.0).sum()
    }

    pub fn counts(&self, n: ThreadId) -> (u32, u32) {
        self.threads.get(&n).copied().unwrap_or((0, 0))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Store {
    regions: BTreeMap<RegionId, Region>,
    next_region: u32,
    next_loc: u32,
}

impl Store {
    /// A store holding only the heap, owned by `main` with counts (1,0).
    pub fn new(main: ThreadId) -> Self {
        let mut regions = BTreeMap::new();
        regions.insert(RegionId::HEAP, Region::new(None, main, (1, 0)));
        Store { regions, next_region: RegionId::HEAP.0 + 1, next_loc: 0 }
    }

    pub fn region(&self, r: RegionId) -> Option<&Region> {
        self.regions.get(&r)
    }

    pub fn regions(&self) -> impl Iterator<Item = (RegionId, &Region)> {
        self.regions.iter().map(|(r, x)| (*r, x))
    }

    pub fn region_ids(&self) -> BTreeSet<RegionId> {
        self.regions.keys().copied().collect()
    }

    pub fn locations(&self) -> impl Iterator<Item = (LocationId, &Expr)> {
        self.regions.values().flat_map(|r| r.cells.iter().map(|(l, v)| (*l, v)))
    }

    /// `r` followed by its ancestors, nearest first.
    pub fn chain(&self, r: RegionId) -> Vec<RegionId> {
        let mut out = Vec::new();
        let mut cur = Some(r);
        while let Some(c) = cur {
            let Some(node) = self.regions.get(&c) else { break };
            out.push(c);
            cur = node.parent;
        }
        out
    }

    pub fn descendants(&self, r: RegionId) -> BTreeSet<RegionId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![r];
        while let Some(c) = stack.pop() {
            if let Some(node) = self.regions.get(&c) {
                for k in &node.children {
                    if out.insert(*k) {
                        stack.push(*k);
                    }
                }
            }
        }
        out
    }

    pub fn is_live(&self, r: RegionId) -> bool {
        let chain = self.chain(r);
        let reaches_root = chain.last().and_then(|c| self.regions.get(c)).is_some_and(|n| n.parent.is_none());
        !chain.is_empty() && reaches_root && chain.iter().all(|c| self.regions[c].region_sum() > 0)
    }

    pub fn is_accessible(&self, r: RegionId, n: ThreadId) -> bool {
        self.is_live(r) && self.chain(r).iter().any(|c| self.regions[c].counts(n).1 > 0)
    }

    /// Some thread other than `n` whose lock keeps `n` from locking `r`.
    pub fn lock_conflict(&self, r: RegionId, n: ThreadId) -> Option<Blocked> {
        let mut related = self.chain(r);
        related.extend(self.descendants(r));
        for c in related {
            for (m, (_, lk)) in &self.regions[&c].threads {
                if *m != n && *lk > 0 {
                    return Some(Blocked { region: c, holder: *m });
                }
            }
        }
        None
    }

    pub fn alloc(&mut self, r: RegionId, v: Expr) -> Result<LocationId, Fault> {
        if !self.is_live(r) {
            return Err(Fault::NotLive(r));
        }
        let l = LocationId { region: r, index: self.next_loc };
        self.next_loc += 1;
        self.regions.get_mut(&r).unwrap().cells.insert(l, v);
        Ok(l)
    }

    fn cell_region(&self, l: LocationId, n: ThreadId) -> Result<RegionId, Fault> {
        match self.regions.get(&l.region) {
            None => return Err(Fault::NotLive(l.region)),
            Some(r) if !r.cells.contains_key(&l) => return Err(Fault::UnknownLocation(l)),
            Some(_) => {}
        }
        if !self.is_live(l.region) {
            return Err(Fault::NotLive(l.region));
        }
        if !self.is_accessible(l.region, n) {
            return Err(Fault::Inaccessible { region: l.region, thread: n });
        }
        Ok(l.region)
    }

    pub fn lookup(&self, l: LocationId, n: ThreadId) -> Result<Expr, Fault> {
        let r = self.cell_region(l, n)?;
        Ok(self.regions[&r].cells[&l].clone())
    }

    pub fn update(&mut self, l: LocationId, v: Expr, n: ThreadId) -> Result<(), Fault> {
        let r = self.cell_region(l, n)?;
        self.regions.get_mut(&r).unwrap().cells.insert(l, v);
        Ok(())
    }

    pub fn newrgn(&mut self, parent: RegionId, n: ThreadId) -> Result<RegionId, Fault> {
        if !self.is_live(parent) {
            return Err(Fault::NotLive(parent));
        }
        let r = RegionId(self.next_region);
        self.next_region += 1;
        self.regions.insert(r, Region::new(Some(parent), n, (1, 1)));
        self.regions.get_mut(&parent).unwrap().children.insert(r);
        Ok(r)
    }

    pub fn updcap(&mut self, op: CapOp, r: RegionId, n: ThreadId) -> Result<CapOutcome, Fault> {
        if !self.is_live(r) {
            return Err(Fault::NotLive(r));
        }
        let (rc, lc) = self.regions[&r].counts(n);
        let underflow = Fault::CountUnderflow { region: r, thread: n };
        let new = match op {
            CapOp::RgPlus if rc == 0 => return Err(Fault::InsufficientDynamicCounts { region: r, thread: n }),
            CapOp::RgPlus => (rc + 1, lc),
            CapOp::RgMinus => (rc.checked_sub(1).ok_or(underflow)?, lc),
            CapOp::LkPlus => {
                if rc == 0 {
                    return Err(Fault::InsufficientDynamicCounts { region: r, thread: n });
                }
                if let Some(b) = self.lock_conflict(r, n) {
                    return Ok(CapOutcome::Blocked(b));
                }
                (rc, lc + 1)
            }
            CapOp::LkMinus => (rc, lc.checked_sub(1).ok_or(underflow)?),
        };
        self.set_counts(r, n, new);
        if op == CapOp::RgMinus && self.regions[&r].region_sum() == 0 {
            self.remove_subtree(r);
        }
        Ok(CapOutcome::Done)
    }

    fn set_counts(&mut self, r: RegionId, n: ThreadId, counts: (u32, u32)) {
        let threads = &mut self.regions.get_mut(&r).unwrap().threads;
        if counts == (0, 0) {
            threads.remove(&n);
        } else {
            threads.insert(n, counts);
        }
    }

    fn remove_subtree(&mut self, r: RegionId) {
        let doomed = self.descendants(r);
        if let Some(p) = self.regions.get(&r).and_then(|x| x.parent) {
            if let Some(pn) = self.regions.get_mut(&p) {
                pn.children.remove(&r);
            }
        }
        self.regions.remove(&r);
        for d in doomed {
            self.regions.remove(&d);
        }
    }

    /// Moves the given counts from thread `from` to thread `to`.
    pub fn transfer(&mut self, from: ThreadId, to: ThreadId, piece: &BTreeMap<RegionId, (u32, u32)>) -> Result<(), Fault> {
        for (r, (a, b)) in piece {
            let have = self.regions.get(r).map(|x| x.counts(from)).ok_or(Fault::NotLive(*r))?;
            if have.0 < *a || have.1 < *b {
                return Err(Fault::InsufficientDynamicCounts { region: *r, thread: from });
            }
        }
        for (r, (a, b)) in piece {
            let have = self.regions[r].counts(from);
            let got = self.regions[r].counts(to);
            self.set_counts(*r, from, (have.0 - a, have.1 - b));
            self.set_counts(*r, to, (got.0 + a, got.1 + b));
        }
        Ok(())
    }

    /// Overwrites one thread's counts; for building test fixtures.
    pub fn force_counts(&mut self, r: RegionId, n: ThreadId, counts: (u32, u32)) {
        if self.regions.contains_key(&r) {
            self.set_counts(r, n, counts);
        }
    }

    /// JSON view: the region tree with thread maps and cell contents.
    pub fn snapshot(&self) -> serde_json::Value {
        self.snapshot_region(RegionId::HEAP)
    }

    fn snapshot_region(&self, r: RegionId) -> serde_json::Value {
        let Some(node) = self.regions.get(&r) else { return serde_json::Value::Null };
        let threads: serde_json::Map<String, serde_json::Value> =
            node.threads.iter().map(|(t, (a, b))| (t.to_string(), serde_json::json!([a, b]))).collect();
        let cells: serde_json::Map<String, serde_json::Value> =
            node.cells.iter().map(|(l, v)| (l.to_string(), serde_json::Value::String(pretty(v)))).collect();
        let children: Vec<serde_json::Value> = node.children.iter().map(|c| self.snapshot_region(*c)).collect();
        serde_json::json!({ "region": r.to_string(), "threads": threads, "cells": cells, "children": children })
    }

    /// Canonical text form, used for state digests.
    pub fn canonical(&self) -> String {
        let mut out = format!("next {} {}\n", self.next_region, self.next_loc);
        for (r, node) in &self.regions {
            let parent = node.parent.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            out.push_str(&format!("{r} < {parent}"));
            for (t, (a, b)) in &node.threads {
                out.push_str(&format!(" {t}:{a},{b}"));
            }
            out.push('\n');
            for (l, v) in &node.cells {
                out.push_str(&format!("  {l} = {}\n", pretty(v)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T1: ThreadId = ThreadId(1);
    const T2: ThreadId = ThreadId(2);
    const H: RegionId = RegionId::HEAP;

    #[test]
    fn fresh_region_is_live_and_owned() {
        let mut s = Store::new(T1);
        let r = s.newrgn(H, T1).unwrap();
        assert!(s.is_live(r));
        assert_eq!(s.region(r).unwrap().counts(T1), (1, 1));
        assert_eq!(s.region(r).unwrap().parent, Some(H));
        assert!(s.is_accessible(r, T1));
        assert!(!s.is_accessible(r, T2));
    }

    #[test]
    fn liveness_needs_live_ancestors() {
        // Built by hand: a child with counts under a parent whose counts sum
        // to zero is dead, even though its own sum is positive.
        let mut s = Store::new(T1);
        let a = s.newrgn(H, T1).unwrap();
        let b = s.newrgn(a, T1).unwrap();
        let c = s.newrgn(b, T1).unwrap();
        s.force_counts(a, T1, (0, 0));
        assert!(!s.is_live(a));
        assert!(!s.is_live(b));
        assert!(!s.is_live(c));
        assert_eq!(s.region(c).unwrap().region_sum(), 1);
    }

    #[test]
    fn access_through_ancestor_lock() {
        let mut s = Store::new(T1);
        let a = s.newrgn(H, T1).unwrap();
        let b = s.newrgn(a, T1).unwrap();
        let c = s.newrgn(b, T1).unwrap();
        s.updcap(CapOp::LkMinus, b, T1).unwrap();
        s.updcap(CapOp::LkMinus, c, T1).unwrap();
        assert!(s.is_accessible(c, T1));
        s.updcap(CapOp::LkMinus, a, T1).unwrap();
        assert!(!s.is_accessible(c, T1));
    }

    #[test]
    fn alloc_lookup_update() {
        let mut s = Store::new(T1);
        let r = s.newrgn(H, T1).unwrap();
        let l1 = s.alloc(r, Expr::int(10)).unwrap();
        let l2 = s.alloc(r, Expr::int(11)).unwrap();
        assert_ne!(l1, l2);
        assert_eq!(s.lookup(l1, T1).unwrap(), Expr::int(10));
        s.update(l1, Expr::int(15), T1).unwrap();
        assert_eq!(s.lookup(l1, T1).unwrap(), Expr::int(15));
        assert_eq!(s.lookup(l2, T1).unwrap(), Expr::int(11));
        assert_eq!(s.lookup(l1, T2), Err(Fault::Inaccessible { region: r, thread: T2 }));
        assert_eq!(s.update(l1, Expr::int(0), T2), Err(Fault::Inaccessible { region: r, thread: T2 }));
        let bogus = LocationId { region: r, index: 99 };
        assert_eq!(s.lookup(bogus, T1), Err(Fault::UnknownLocation(bogus)));
    }

    #[test]
    fn freed_region_rejects_operations() {
        let mut s = Store::new(T1);
        let r = s.newrgn(H, T1).unwrap();
        s.updcap(CapOp::LkMinus, r, T1).unwrap();
        s.updcap(CapOp::RgMinus, r, T1).unwrap();
        assert!(s.region(r).is_none());
        assert_eq!(s.alloc(r, Expr::int(1)), Err(Fault::NotLive(r)));
        assert_eq!(s.newrgn(r, T1), Err(Fault::NotLive(r)));
    }

    #[test]
    fn reentrant_lock() {
        let mut s = Store::new(T1);
        let r = s.newrgn(H, T1).unwrap();
        s.updcap(CapOp::LkPlus, r, T1).unwrap();
        assert_eq!(s.region(r).unwrap().counts(T1), (1, 2));
        s.updcap(CapOp::LkMinus, r, T1).unwrap();
        assert!(s.is_accessible(r, T1));
        s.updcap(CapOp::LkMinus, r, T1).unwrap();
        assert!(!s.is_accessible(r, T1));
        assert_eq!(s.updcap(CapOp::LkMinus, r, T1), Err(Fault::CountUnderflow { region: r, thread: T1 }));
    }

    #[test]
    fn contended_locks_block() {
        let mut s = Store::new(T1);
        let a = s.newrgn(H, T1).unwrap();
        let b = s.newrgn(a, T1).unwrap();
        s.updcap(CapOp::RgPlus, a, T1).unwrap();
        s.updcap(CapOp::RgPlus, b, T1).unwrap();
        s.transfer(T1, T2, &[(a, (1, 0)), (b, (1, 0))].into_iter().collect()).unwrap();
        // T1 holds a's lock: T2 can neither lock a nor its child b.
        assert_eq!(s.updcap(CapOp::LkPlus, a, T2), Ok(CapOutcome::Blocked(Blocked { region: a, holder: T1 })));
        s.updcap(CapOp::LkMinus, b, T1).unwrap();
        assert_eq!(s.updcap(CapOp::LkPlus, b, T2), Ok(CapOutcome::Blocked(Blocked { region: a, holder: T1 })));
        s.updcap(CapOp::LkMinus, a, T1).unwrap();
        assert_eq!(s.updcap(CapOp::LkPlus, b, T2), Ok(CapOutcome::Done));
        // Now T2 holds b, so T1 cannot lock the ancestor a.
        assert_eq!(s.updcap(CapOp::LkPlus, a, T1), Ok(CapOutcome::Blocked(Blocked { region: b, holder: T2 })));
    }

    #[test]
    fn bulk_free_removes_subtree() {
        let mut s = Store::new(T1);
        let a = s.newrgn(H, T1).unwrap();
        let b = s.newrgn(a, T1).unwrap();
        let c = s.newrgn(a, T1).unwrap();
        let lc = s.alloc(c, Expr::int(3)).unwrap();
        s.updcap(CapOp::RgMinus, a, T1).unwrap();
        assert!(s.region(a).is_none() && s.region(b).is_none() && s.region(c).is_none());
        assert!(s.lookup(lc, T1).is_err());
        assert!(!s.region(H).unwrap().children.contains(&a));
    }

    #[test]
    fn transfer_moves_counts() {
        let mut s = Store::new(T1);
        let r = s.newrgn(H, T1).unwrap();
        s.transfer(T1, T2, &[(r, (1, 1))].into_iter().collect()).unwrap();
        assert_eq!(s.region(r).unwrap().counts(T1), (0, 0));
        assert_eq!(s.region(r).unwrap().counts(T2), (1, 1));
        let before = s.clone();
        s.transfer(T1, T2, &BTreeMap::new()).unwrap();
        assert_eq!(s, before);
        assert_eq!(
            s.transfer(T1, T2, &[(r, (1, 0))].into_iter().collect()),
            Err(Fault::InsufficientDynamicCounts { region: r, thread: T1 })
        );
    }

    #[test]
    fn share_then_transfer_leaves_half() {
        let mut s = Store::new(T1);
        let r = s.newrgn(H, T1).unwrap();
        s.updcap(CapOp::RgPlus, r, T1).unwrap();
        s.updcap(CapOp::LkMinus, r, T1).unwrap();
        s.transfer(T1, T2, &[(r, (1, 0))].into_iter().collect()).unwrap();
        assert_eq!(s.region(r).unwrap().counts(T1), (1, 0));
        assert_eq!(s.region(r).unwrap().counts(T2), (1, 0));
    }

    #[test]
    fn rg_plus_needs_a_count() {
        let mut s = Store::new(T1);
        let r = s.newrgn(H, T1).unwrap();
        assert_eq!(s.updcap(CapOp::RgPlus, r, T2), Err(Fault::InsufficientDynamicCounts { region: r, thread: T2 }));
    }
}
