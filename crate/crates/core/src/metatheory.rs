//! Run-time checks of the soundness invariants.
//!
//! The harness follows a run step by step. For every thread it keeps the
//! static effect the thread owns and one record per call in progress, and
//! re-derives both from each step. After every step it checks that each
//! thread still types, that static counts agree with the store, that stored
//! values type at their recorded types, and that no thread is stuck.

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::Serialize;

use crate::ast::{
    CallingMode, Capability, Effect, Expr, ExprKind, LocationId, Parent, Purity, RegionId, RegionName, ThreadId, Type,
};
use crate::capability::{apply_cap_op, check_par_constraints, effect_join, effect_subtract, SplitResult};
use crate::interp::{subterm, Config, Observer, Runtime, StepInfo, StepOutcome, Rule, MAIN_THREAD};
use crate::store::Store;
use crate::typeck::{check_runtime_expr, FrameRecord, RuntimeCtx, TypedProgram};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub check: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thread: Option<ThreadId>,
    pub message: String,
}

impl Violation {
    fn new(check: &'static str, thread: Option<ThreadId>, message: impl Into<String>) -> Self {
        Violation { check, thread, message: message.into() }
    }
}

type Check = Result<(), Violation>;

/// What the harness knows about one thread.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreadState {
    /// Everything the thread owns, as seen from its outermost context.
    pub effect: Effect,
    /// One record per call in progress, outermost first.
    pub frames: Vec<FrameRecord>,
    /// The effect the thread must end with.
    pub expected: Effect,
}

impl ThreadState {
    pub fn new(effect: Effect, expected: Effect) -> Self {
        ThreadState { effect, frames: Vec::new(), expected }
    }
}

/// Each thread types at unit, ending with the effect it owes.
pub fn check_thread_typing(
    globals: &BTreeMap<String, Type>,
    rt: &RuntimeCtx,
    threads: &BTreeMap<ThreadId, Expr>,
    states: &BTreeMap<ThreadId, ThreadState>,
) -> Check {
    for (n, e) in threads {
        let Some(st) = states.get(n) else {
            return Err(Violation::new("ThreadTyping", Some(*n), "thread has no effect assignment"));
        };
        let (t, out) = check_runtime_expr(globals, rt, &st.frames, e, &st.effect)
            .map_err(|d| Violation::new("ThreadTyping", Some(*n), d.to_string()))?;
        if t != Type::Unit {
            return Err(Violation::new("ThreadTyping", Some(*n), format!("thread has type {t}")));
        }
        if out != st.expected {
            return Err(Violation::new(
                "ThreadTyping",
                Some(*n),
                format!("thread ends with {out}, but owes {}", st.expected),
            ));
        }
    }
    Ok(())
}

fn literal(r: &RegionName, n: ThreadId, check: &'static str) -> Result<RegionId, Violation> {
    r.as_lit().ok_or_else(|| Violation::new(check, Some(n), format!("effect names region variable {r}")))
}

/// Region consistency, static-dynamic count consistency and mutual
/// exclusion between the static effects `delta` and the store.
pub fn check_store_consistency(store: &Store, delta: &BTreeMap<ThreadId, Effect>) -> Check {
    let mut static_locks: BTreeMap<RegionId, Vec<ThreadId>> = BTreeMap::new();
    for (n, g) in delta {
        for (r, e) in g.iter() {
            let id = literal(r, *n, "RegionConsistency")?;
            let Some(node) = store.region(id) else {
                return Err(Violation::new("RegionConsistency", Some(*n), format!("effect names {id}, absent from the store")));
            };
            let (dr, dl) = node.counts(*n);
            let (sr, sl) = e.cap.counts();
            if dr < sr || dl < sl {
                return Err(Violation::new(
                    "CountConsistency",
                    Some(*n),
                    format!("static counts {sr},{sl} on {id} exceed dynamic {dr},{dl}"),
                ));
            }
            if e.cap.purity == Purity::Pure && (dr, dl) != (sr, sl) {
                return Err(Violation::new(
                    "CountConsistency",
                    Some(*n),
                    format!("pure counts {sr},{sl} on {id} differ from dynamic {dr},{dl}"),
                ));
            }
            if sl > 0 {
                static_locks.entry(id).or_default().push(*n);
            }
        }
    }
    for (r, holders) in &static_locks {
        if holders.len() > 1 {
            return Err(Violation::new("MutualExclusion", Some(holders[1]), format!("several threads lock {r}")));
        }
        for a in store.chain(*r).into_iter().skip(1) {
            if let Some(other) = static_locks.get(&a).and_then(|h| h.iter().find(|m| **m != holders[0])) {
                return Err(Violation::new(
                    "MutualExclusion",
                    Some(*other),
                    format!("lock on {a} overlaps the lock of {} on its subregion {r}", holders[0]),
                ));
            }
        }
    }
    for (r, node) in store.regions() {
        let holders: Vec<ThreadId> = node.threads.iter().filter(|(_, c)| c.1 > 0).map(|(t, _)| *t).collect();
        if holders.len() > 1 {
            return Err(Violation::new("MutualExclusion", Some(holders[1]), format!("several threads hold {r}")));
        }
        for h in holders {
            for a in store.chain(r).into_iter().skip(1) {
                let other = store.region(a).unwrap().threads.iter().find(|(t, c)| **t != h && c.1 > 0);
                if let Some((m, _)) = other {
                    return Err(Violation::new("MutualExclusion", Some(*m), format!("{m} holds {a} while {h} holds {r}")));
                }
            }
        }
    }
    Ok(())
}

/// Every region and cell of the store is known, and every stored value is
/// closed and has its recorded type under empty effects.
pub fn check_store_typing(globals: &BTreeMap<String, Type>, rt: &RuntimeCtx, store: &Store) -> Check {
    for r in store.region_ids() {
        if !rt.regions.contains(&r) {
            return Err(Violation::new("StoreTyping", None, format!("region {r} was never allocated")));
        }
    }
    let empty = Effect::new();
    for (l, v) in store.locations() {
        let Some(expect) = rt.locs.get(&l) else {
            return Err(Violation::new("StoreTyping", None, format!("location {l} has no recorded type")));
        };
        let free = v.free_vars();
        if free.iter().any(|x| !globals.contains_key(x)) || !v.free_region_vars().is_empty() {
            return Err(Violation::new("StoreTyping", None, format!("value at {l} is not closed")));
        }
        let (t, out) = check_runtime_expr(globals, rt, &[], v, &empty)
            .map_err(|d| Violation::new("StoreTyping", None, format!("value at {l}: {d}")))?;
        if !t.alpha_eq(expect) || !out.is_empty() {
            return Err(Violation::new("StoreTyping", None, format!("value at {l} has type {t}, expected {expect}")));
        }
    }
    Ok(())
}

/// Every thread can step, finish or spawn, or waits for a lock held by a
/// thread that still exists.
pub fn check_not_stuck(c: &Config, outcomes: &BTreeMap<ThreadId, StepOutcome>) -> Check {
    for (n, o) in outcomes {
        match o {
            StepOutcome::Stuck { fault, .. } => {
                return Err(Violation::new("NotStuck", Some(*n), format!("{}: {fault}", fault.code())))
            }
            StepOutcome::Blocked { waiting_on, .. } if !c.threads.contains_key(&waiting_on.holder) => {
                return Err(Violation::new(
                    "NotStuck",
                    Some(*n),
                    format!("waits for {} held by finished thread {}", waiting_on.region, waiting_on.holder),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Follows a run of a checked program.
#[derive(Clone, Debug)]
pub struct Harness {
    globals: Rc<BTreeMap<String, Type>>,
    defs: Rc<Runtime>,
    pub rt: RuntimeCtx,
    pub threads: BTreeMap<ThreadId, ThreadState>,
    step: usize,
    schedule: Vec<ThreadId>,
}

impl Harness {
    pub fn new(p: &TypedProgram) -> Self {
        let heap = RegionName::Lit(RegionId::HEAP);
        let delta0 = Effect::new().with(heap.clone(), Capability::pure(1, 0), Parent::Bottom);
        let expected = match p.types.get("main") {
            Some(Type::Poly(v, body)) => match &**body {
                Type::Fn { output, .. } => output.subst_region(&RegionName::Var(v.clone()), &heap),
                _ => Effect::new(),
            },
            _ => Effect::new(),
        };
        Harness {
            globals: Rc::new(p.types.clone()),
            defs: Rc::new(Runtime::from_typed(p)),
            rt: RuntimeCtx::initial(),
            threads: [(MAIN_THREAD, ThreadState::new(delta0, expected))].into_iter().collect(),
            step: 0,
            schedule: Vec::new(),
        }
    }

    /// Starts from an arbitrary configuration, for tests.
    pub fn with_state(
        globals: BTreeMap<String, Type>,
        defs: Runtime,
        rt: RuntimeCtx,
        threads: BTreeMap<ThreadId, ThreadState>,
    ) -> Self {
        Harness { globals: Rc::new(globals), defs: Rc::new(defs), rt, threads, step: 0, schedule: Vec::new() }
    }

    pub fn delta(&self) -> BTreeMap<ThreadId, Effect> {
        self.threads.iter().map(|(t, s)| (*t, s.effect.clone())).collect()
    }

    /// All checks on one configuration.
    pub fn check_config(&self, c: &Config) -> Check {
        check_thread_typing(&self.globals, &self.rt, &c.threads, &self.threads)?;
        check_store_consistency(&c.store, &self.delta())?;
        check_store_typing(&self.globals, &self.rt, &c.store)?;
        for n in self.threads.keys() {
            if !c.threads.contains_key(n) {
                return Err(Violation::new("ThreadTyping", Some(*n), "effect assigned to a finished thread"));
            }
        }
        Ok(())
    }

    fn report(&self, v: Violation) -> serde_json::Value {
        serde_json::json!({ "step": self.step, "violation": v, "schedule": self.schedule })
    }

    fn callee<'a>(&'a self, f: &'a Expr) -> &'a Expr {
        match &f.kind {
            ExprKind::Var(x) => self.defs.defs.get(x).unwrap_or(f),
            _ => f,
        }
    }

    fn result_type(&self, f: &Expr, n: ThreadId) -> Result<Type, Violation> {
        let (t, _) = check_runtime_expr(&self.globals, &self.rt, &[], f, &Effect::new())
            .map_err(|d| Violation::new("Preservation", Some(n), d.to_string()))?;
        match t {
            Type::Fn { result, .. } => Ok(*result),
            other => Err(Violation::new("Preservation", Some(n), format!("callee has type {other}"))),
        }
    }

    /// Re-derives the effect assignment for the step `outcome` of thread `n`.
    pub fn advance(&mut self, n: ThreadId, outcome: &StepOutcome) -> Check {
        match outcome {
            StepOutcome::ThreadDone { .. } => {
                self.threads.remove(&n);
                Ok(())
            }
            StepOutcome::Stepped { info, config, .. } => self.advance_step(n, info, config),
            StepOutcome::Spawned { info, child, transferred, config, .. } => {
                let passed = self.advance_spawn(n, info, transferred)?;
                self.threads.insert(*child, ThreadState::new(passed, Effect::new()));
                let _ = config;
                Ok(())
            }
            StepOutcome::Blocked { .. } | StepOutcome::Stuck { .. } => Ok(()),
        }
    }

    fn cap_err(n: ThreadId, e: impl std::fmt::Display) -> Violation {
        Violation::new("Preservation", Some(n), e.to_string())
    }

    /// The effect seen at call depth `d`: index `k` holds the view inside
    /// the first `k` frames.
    fn views(st: &ThreadState, d: usize) -> Result<Vec<Effect>, String> {
        if d > st.frames.len() {
            return Err(format!("redex at call depth {d} but {} records", st.frames.len()));
        }
        let mut views = vec![st.effect.clone()];
        for k in 0..d {
            let next = st.frames[k].view_of(&views[k]);
            views.push(next);
        }
        Ok(views)
    }

    fn advance_step(&mut self, n: ThreadId, info: &StepInfo, after: &Config) -> Check {
        let mut st = self.threads.get(&n).cloned().ok_or_else(|| Violation::new("Preservation", Some(n), "unknown thread"))?;
        let d = info.redex.depth;
        let views = Self::views(&st, d).map_err(|m| Violation::new("Preservation", Some(n), m))?;
        let here = views[d].clone();
        let mut now = here.clone();
        match info.rule {
            Rule::App => {
                let ExprKind::App(f, _, CallingMode::Seq) = &info.before.kind else {
                    return Err(Violation::new("Preservation", Some(n), "E-A on a non-application"));
                };
                let callee = self.callee(f).clone();
                let ExprKind::Lambda(l) = &callee.kind else {
                    return Err(Violation::new("Preservation", Some(n), "E-A on a non-function"));
                };
                let Some(sig) = &l.sig else {
                    return Err(Violation::new("Preservation", Some(n), "unannotated function"));
                };
                let result = self.result_type(&callee, n)?;
                let split = effect_subtract(&here, &sig.input).map_err(|e| Self::cap_err(n, e))?;
                let reduct = subterm(&after.threads[&n], &info.redex.path);
                if matches!(reduct.kind, ExprKind::Ret(_)) {
                    if st.frames.len() != d {
                        return Err(Violation::new("Preservation", Some(n), "call below an unfinished call"));
                    }
                    st.frames.push(FrameRecord::from_split(&split, sig.output.clone(), result));
                } else {
                    now = effect_join(&split, &sig.output, false).map_err(|e| Self::cap_err(n, e))?;
                }
            }
            Rule::Ret => {
                if st.frames.len() != d + 1 {
                    return Err(Violation::new("Preservation", Some(n), "return from a call without a record"));
                }
                let frame = st.frames.pop().unwrap();
                let split = SplitResult {
                    passed: frame.view_of(&here),
                    retained: frame.retained.clone(),
                    abstracted: frame.abstracted.clone(),
                    original: here.clone(),
                };
                now = effect_join(&split, &frame.output, false).map_err(|e| Self::cap_err(n, e))?;
            }
            Rule::Cap => {
                let ExprKind::Cap(op, h) = &info.before.kind else { unreachable!() };
                let ExprKind::RgnVal(r) = h.kind else { unreachable!() };
                now = apply_cap_op(&here, &RegionName::Lit(r), *op).map_err(|e| Self::cap_err(n, e))?;
            }
            Rule::NewRgn => {
                let ExprKind::NewRgn { parent, .. } = &info.before.kind else { unreachable!() };
                let ExprKind::RgnVal(p) = parent.kind else { unreachable!() };
                let fresh = info.fresh_region.expect("fresh region");
                self.rt.regions.insert(fresh);
                now.insert(RegionName::Lit(fresh), Capability::pure(1, 1), Parent::Region(RegionName::Lit(p)));
            }
            Rule::NewRef => {
                let ExprKind::NewRef(v, _) = &info.before.kind else { unreachable!() };
                let (t, _) = check_runtime_expr(&self.globals, &self.rt, &[], v, &Effect::new())
                    .map_err(|d| Violation::new("StoreTyping", Some(n), d.to_string()))?;
                self.rt.locs.insert(info.fresh_loc.expect("fresh location"), t);
            }
            _ => {}
        }
        if now != here {
            for k in (0..d).rev() {
                now = st.frames[k].merge(&now);
            }
            st.effect = now;
        }
        self.threads.insert(n, st);
        Ok(())
    }

    fn advance_spawn(&mut self, n: ThreadId, info: &StepInfo, transferred: &Effect) -> Result<Effect, Violation> {
        let mut st = self.threads.get(&n).cloned().ok_or_else(|| Violation::new("Preservation", Some(n), "unknown thread"))?;
        let d = info.redex.depth;
        let views = Self::views(&st, d).map_err(|m| Violation::new("Preservation", Some(n), m))?;
        let here = &views[d];
        let ExprKind::App(f, _, CallingMode::Par(_)) = &info.before.kind else { unreachable!() };
        let callee = self.callee(f).clone();
        let ExprKind::Lambda(l) = &callee.kind else {
            return Err(Violation::new("Preservation", Some(n), "spawn of a non-function"));
        };
        let Some(sig) = &l.sig else {
            return Err(Violation::new("Preservation", Some(n), "unannotated function"));
        };
        let result = self.result_type(&callee, n)?;
        let split = effect_subtract(here, &sig.input).map_err(|e| Self::cap_err(n, e))?;
        check_par_constraints(&split.passed, &sig.output, result == Type::Unit).map_err(|e| Self::cap_err(n, e))?;
        if split.passed != *transferred {
            return Err(Violation::new(
                "Preservation",
                Some(n),
                format!("spawn moved {transferred}, but the callee takes {}", split.passed),
            ));
        }
        let mut now = effect_join(&split, &Effect::new(), true).map_err(|e| Self::cap_err(n, e))?;
        for k in (0..d).rev() {
            now = st.frames[k].merge(&now);
        }
        st.effect = now;
        self.threads.insert(n, st);
        Ok(split.passed)
    }
}

impl Observer for Harness {
    fn start(&mut self, c: &Config) -> Result<(), serde_json::Value> {
        self.check_config(c).map_err(|v| self.report(v))
    }

    fn observe(
        &mut self,
        before: &Config,
        outcomes: &BTreeMap<ThreadId, StepOutcome>,
        chosen: ThreadId,
    ) -> Result<(), serde_json::Value> {
        check_not_stuck(before, outcomes).map_err(|v| self.report(v))?;
        self.step += 1;
        self.schedule.push(chosen);
        let outcome = &outcomes[&chosen];
        let regions_before = self.rt.regions.clone();
        let locs_before: Vec<LocationId> = self.rt.locs.keys().copied().collect();
        self.advance(chosen, outcome).map_err(|v| self.report(v))?;
        if !regions_before.is_subset(&self.rt.regions) || !locs_before.iter().all(|l| self.rt.locs.contains_key(l)) {
            return Err(self.report(Violation::new("Preservation", Some(chosen), "region or location typing shrank")));
        }
        if let Some(after) = outcome.config() {
            self.check_config(after).map_err(|v| self.report(v))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::CapOp;
    use crate::interp::{all_outcomes, run_seeded, RunOptions, Terminal};
    use crate::parser::parse;
    use crate::typeck::typecheck_program;

    const T1: ThreadId = MAIN_THREAD;
    const T2: ThreadId = ThreadId(2);

    fn lit(r: RegionId) -> RegionName {
        RegionName::Lit(r)
    }

    fn checked(src: &str) -> TypedProgram {
        typecheck_program(&parse(src).unwrap()).unwrap_or_else(|d| panic!("{d:?}"))
    }

    const SHARE: &str = "
        def worker = Λρ. λ(h: rgn(ρ)) @ [{ρ^~{1,0}@⊥} -> {}] . lock h; unlock h; free h
        def main = Λρ. λ(heap: rgn(ρ)) @ [{ρ^{1,0}@⊥} -> {ρ^{1,0}@⊥}] .
            share heap; spawn worker[ρ](heap); lock heap; unlock heap";

    #[test]
    fn initial_configuration_checks() {
        let p = checked(SHARE);
        let h = Harness::new(&p);
        h.check_config(&Config::initial()).unwrap();
    }

    #[test]
    fn runs_stay_consistent() {
        let p = checked(SHARE);
        let rt = Runtime::from_typed(&p);
        for seed in 0..20 {
            let mut h = Harness::new(&p);
            let t = run_seeded(&rt, RunOptions::seeded(seed), &mut h);
            assert_eq!(t.terminal, Terminal::AllDone, "seed {seed}");
        }
    }

    #[test]
    fn empty_thread_list_is_fine() {
        let c = Config { threads: BTreeMap::new(), ..Config::initial() };
        let h = Harness::with_state(BTreeMap::new(), Runtime::default(), RuntimeCtx::initial(), BTreeMap::new());
        h.check_config(&c).unwrap();
        check_not_stuck(&c, &BTreeMap::new()).unwrap();
    }

    /// The store after the server shares and unlocks its region and gives
    /// half to the output thread.
    fn shared_store() -> (Store, RegionId) {
        let mut s = Store::new(T1);
        let r = s.newrgn(RegionId::HEAP, T1).unwrap();
        s.updcap(CapOp::RgPlus, r, T1).unwrap();
        s.updcap(CapOp::LkMinus, r, T1).unwrap();
        s.transfer(T1, T2, &[(r, (1, 0))].into_iter().collect()).unwrap();
        (s, r)
    }

    #[test]
    fn shared_region_accounts() {
        let (s, r) = shared_store();
        let piece = Effect::new().with(lit(r), Capability::impure(1, 0), Parent::Region(RegionName::heap()));
        let delta: BTreeMap<_, _> = [(T1, piece.clone()), (T2, piece)].into_iter().collect();
        check_store_consistency(&s, &delta).unwrap();
    }

    #[test]
    fn static_lock_without_dynamic_lock() {
        let (s, r) = shared_store();
        let claim = Effect::new().with(lit(r), Capability::impure(1, 1), Parent::Region(RegionName::heap()));
        let delta: BTreeMap<_, _> = [(T1, claim)].into_iter().collect();
        assert_eq!(check_store_consistency(&s, &delta).unwrap_err().check, "CountConsistency");
    }

    #[test]
    fn two_static_lock_holders() {
        let (mut s, r) = shared_store();
        s.force_counts(r, T1, (1, 1));
        s.force_counts(r, T2, (1, 1));
        let claim = Effect::new().with(lit(r), Capability::impure(1, 1), Parent::Region(RegionName::heap()));
        let delta: BTreeMap<_, _> = [(T1, claim.clone()), (T2, claim)].into_iter().collect();
        assert_eq!(check_store_consistency(&s, &delta).unwrap_err().check, "MutualExclusion");
    }

    #[test]
    fn effect_naming_missing_region() {
        let s = Store::new(T1);
        let claim = Effect::new().with(lit(RegionId(7)), Capability::pure(1, 1), Parent::Bottom);
        let delta: BTreeMap<_, _> = [(T1, claim)].into_iter().collect();
        assert_eq!(check_store_consistency(&s, &delta).unwrap_err().check, "RegionConsistency");
    }

    #[test]
    fn dropped_lock_count_is_caught() {
        // Run a program partway, then take the lock away behind its back.
        let p = checked(
            "def main = Λρ. λ(heap: rgn(ρ)) @ [{ρ^{1,0}@⊥} -> {ρ^{1,0}@⊥}] .
                 newrgn σ, h at heap in let z = new 1 at h in z := 2; free h",
        );
        let rt = Runtime::from_typed(&p);
        let mut h = Harness::new(&p);
        let mut c = Config::initial();
        h.start(&c).unwrap();
        let mut fresh = None;
        for _ in 0..4 {
            let outs = all_outcomes(&rt, &c);
            if let Some(StepOutcome::Stepped { info, .. }) = outs.get(&T1) {
                fresh = fresh.or(info.fresh_region);
            }
            h.observe(&c, &outs, T1).unwrap();
            c = outs[&T1].config().unwrap().clone();
        }
        let r = fresh.expect("region created");
        c.store.force_counts(r, T1, (1, 0));
        assert_eq!(h.check_config(&c).unwrap_err().check, "CountConsistency");
    }

    #[test]
    fn store_typing_cases() {
        let mut s = Store::new(T1);
        let r = s.newrgn(RegionId::HEAP, T1).unwrap();
        let l = s.alloc(r, Expr::int(3)).unwrap();
        let mut rt = RuntimeCtx::initial();
        rt.regions.insert(r);
        let globals = BTreeMap::new();
        assert_eq!(check_store_typing(&globals, &rt, &s).unwrap_err().check, "StoreTyping");
        rt.locs.insert(l, Type::int());
        check_store_typing(&globals, &rt, &s).unwrap();
        rt.locs.insert(l, Type::bool());
        assert!(check_store_typing(&globals, &rt, &s).is_err());
    }

    #[test]
    fn stored_function_types_under_empty_effects() {
        let mut s = Store::new(T1);
        let r = s.newrgn(RegionId::HEAP, T1).unwrap();
        let f = crate::parser::parse_expr("λ(x: ref(int, ρ)) @ [{ρ^~{1,1}@?} -> {ρ^~{1,1}@?}]. deref x").unwrap();
        let f = f.subst_region(&RegionName::var("ρ"), &lit(r));
        let l = s.alloc(r, f.clone()).unwrap();
        let mut rt = RuntimeCtx::initial();
        rt.regions.insert(r);
        let (t, _) = check_runtime_expr(&BTreeMap::new(), &rt, &[], &f, &Effect::new()).unwrap();
        rt.locs.insert(l, t);
        check_store_typing(&BTreeMap::new(), &rt, &s).unwrap();
    }

    #[test]
    fn unlocked_deref_is_stuck() {
        let mut c = Config::initial();
        let r = c.store.newrgn(RegionId::HEAP, T1).unwrap();
        let l = c.store.alloc(r, Expr::int(0)).unwrap();
        c.store.updcap(CapOp::LkMinus, r, T1).unwrap();
        c.threads.insert(T1, Expr::deref(Expr::loc_val(l)));
        let outs = all_outcomes(&Runtime::default(), &c);
        assert_eq!(check_not_stuck(&c, &outs).unwrap_err().check, "NotStuck");
    }

    #[test]
    fn all_done_is_not_stuck() {
        let c = Config { threads: BTreeMap::new(), ..Config::initial() };
        check_not_stuck(&c, &BTreeMap::new()).unwrap();
    }

    #[test]
    fn spawn_splits_effects() {
        let p = checked(SHARE);
        let rt = Runtime::from_typed(&p);
        let mut h = Harness::new(&p);
        let mut c = Config::initial();
        h.start(&c).unwrap();
        loop {
            let outs = all_outcomes(&rt, &c);
            let o = &outs[&T1];
            h.observe(&c, &outs, T1).unwrap();
            c = o.config().unwrap().clone();
            if let StepOutcome::Spawned { child, .. } = o {
                let heap = RegionName::heap();
                assert_eq!(h.threads[child].effect, Effect::new().with(heap.clone(), Capability::impure(1, 0), Parent::Bottom));
                assert_eq!(h.threads[&T1].effect, Effect::new().with(heap, Capability::pure(1, 0), Parent::Bottom));
                break;
            }
        }
    }
}
