//! Random inputs and property bodies shared by the property suite and the
//! acceptance runner.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use reglock::ast::{
    CapOp, Capability, Effect, Expr, ExprKind, LocationId, Parent, RegionId, RegionName,
    ThreadId,
};
use reglock::capability::{apply_cap_op, cap_split, effect_join, effect_subtract, is_accessible_static, is_live_static};
use reglock::interp::{decompose, step_thread, Config, Runtime, StepOutcome, MAIN_THREAD};
use reglock::metatheory::check_store_consistency;
use reglock::store::Store;

pub fn capability() -> impl Strategy<Value = Capability> {
    (any::<bool>(), 0u32..5, 0u32..5).prop_map(|(pure, region, lock)| {
        if pure {
            Capability::pure(region, lock)
        } else {
            Capability::impure(region, lock)
        }
    })
}

pub fn cap_split_conservation((have, need): (Capability, Capability)) -> Result<(), TestCaseError> {
    match cap_split(have, need) {
        Ok((given, kept)) => {
            prop_assert_eq!(given.region + kept.region, have.region);
            prop_assert_eq!(given.lock + kept.lock, have.lock);
            prop_assert_eq!(given.counts(), need.counts());
            if need.is_pure() {
                prop_assert!(have.is_pure() && have.counts() == need.counts());
            }
        }
        Err(_) => {
            let fits = need.region <= have.region && need.lock <= have.lock;
            let pure_ok = !need.is_pure() || (have.is_pure() && have.counts() == need.counts());
            prop_assert!(!(fits && pure_ok), "feasible split of {have} by {need} rejected");
        }
    }
    Ok(())
}

fn rname(i: usize) -> RegionName {
    RegionName::var(format!("r{i}"))
}

/// A well-formed effect over `r0..rn`, each region's parent either ⊥ or an
/// earlier region.
pub fn effect_forest() -> impl Strategy<Value = Effect> {
    prop::collection::vec((any::<prop::sample::Index>(), any::<bool>(), capability()), 1..7).prop_map(|specs| {
        let mut g = Effect::new();
        for (i, (pidx, root, cap)) in specs.into_iter().enumerate() {
            let parent = if i == 0 || root { Parent::Bottom } else { Parent::Region(rname(pidx.index(i))) };
            let cap = Capability { region: cap.region.max(1), ..cap };
            g.insert(rname(i), cap, parent);
        }
        g
    })
}

/// One choice per region of how much of it a callee takes.
#[derive(Clone, Debug)]
pub enum Take {
    Nothing,
    Whole { hide_parent: bool },
    Part { region: u32, lock: u32, hide_parent: bool },
}

pub fn forest_with_takes() -> impl Strategy<Value = (Effect, Vec<Take>)> {
    effect_forest().prop_flat_map(|g| {
        let takes: Vec<BoxedStrategy<Take>> = g
            .iter()
            .map(|(_, e)| {
                let (r, l) = e.cap.counts();
                prop_oneof![
                    Just(Take::Nothing),
                    any::<bool>().prop_map(|hide_parent| Take::Whole { hide_parent }),
                    (1..=r, 0..=l, any::<bool>())
                        .prop_map(|(region, lock, hide_parent)| Take::Part { region, lock, hide_parent }),
                ]
                .boxed()
            })
            .collect();
        (Just(g), takes)
    })
}

/// The callee input described by `takes`.
pub fn input_of(g: &Effect, takes: &[Take]) -> Effect {
    let mut input = Effect::new();
    for ((r, e), t) in g.iter().zip(takes) {
        let parent = |hide: bool| if hide { Parent::Unknown } else { e.parent.clone() };
        match t {
            Take::Nothing => {}
            Take::Whole { hide_parent } => {
                let cap = if e.cap.is_pure() { e.cap } else { Capability::impure(e.cap.region, e.cap.lock) };
                input.insert(r.clone(), cap, parent(*hide_parent));
            }
            Take::Part { region, lock, hide_parent } => {
                input.insert(r.clone(), Capability::impure(*region, *lock), parent(*hide_parent));
            }
        }
    }
    input
}

/// A callee that hands back exactly what it was given leaves the caller's
/// effect as it was.
pub fn split_join_round_trip((g, takes): (Effect, Vec<Take>)) -> Result<(), TestCaseError> {
    let input = input_of(&g, &takes);
    let split = effect_subtract(&g, &input).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(&split.passed, &input);
    let back = effect_join(&split, &split.passed, false).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(back, g);
    Ok(())
}

pub fn share_then_free_is_identity((g, pick): (Effect, prop::sample::Index)) -> Result<(), TestCaseError> {
    let r = g.regions().nth(pick.index(g.len())).unwrap().clone();
    let up = apply_cap_op(&g, &r, CapOp::RgPlus).unwrap();
    let down = apply_cap_op(&up, &r, CapOp::RgMinus).unwrap();
    prop_assert_eq!(down, g);
    Ok(())
}

pub fn accessible_implies_live((g, name): (Effect, usize)) -> Result<(), TestCaseError> {
    let r = rname(name);
    if is_accessible_static(&g, &r) {
        prop_assert!(is_live_static(&g, &r));
    }
    Ok(())
}

/// Every region whose parent chain in `g` passes through `r`.
fn below(g: &Effect, r: &RegionName) -> BTreeSet<RegionName> {
    g.regions()
        .filter(|x| {
            let mut cur = (*x).clone();
            let mut steps = 0;
            while let Some(Parent::Region(p)) = g.get(&cur).map(|e| e.parent.clone()) {
                if &p == r {
                    return true;
                }
                cur = p;
                steps += 1;
                if steps > g.len() {
                    break;
                }
            }
            false
        })
        .cloned()
        .collect()
}

pub fn static_bulk_removal((g, pick): (Effect, prop::sample::Index)) -> Result<(), TestCaseError> {
    let r = g.regions().nth(pick.index(g.len())).unwrap().clone();
    let mut g1 = g.clone();
    g1.get_mut(&r).unwrap().cap.region = 1;
    let doomed = below(&g1, &r);
    let out = apply_cap_op(&g1, &r, CapOp::RgMinus).unwrap();
    prop_assert!(!out.contains(&r));
    for d in &doomed {
        prop_assert!(!out.contains(d), "{d} survived the removal of its ancestor {r}");
    }
    for x in g1.regions() {
        if *x != r && !doomed.contains(x) {
            prop_assert!(out.contains(x));
        }
    }
    prop_assert!(out.well_formed().is_ok());
    Ok(())
}

/// A store operation by one of three threads on a region picked by index.
#[derive(Clone, Debug)]
pub enum Op {
    NewRgn(usize, u32),
    Cap(usize, u32, CapOp),
    Transfer(usize, u32, u32, u32, u32),
    Alloc(usize),
}

fn cap_op() -> impl Strategy<Value = CapOp> {
    prop_oneof![Just(CapOp::RgPlus), Just(CapOp::RgMinus), Just(CapOp::LkPlus), Just(CapOp::LkMinus)]
}

pub fn ops() -> impl Strategy<Value = Vec<Op>> {
    let op = prop_oneof![
        (0usize..8, 1u32..4).prop_map(|(r, t)| Op::NewRgn(r, t)),
        (0usize..8, 1u32..4, cap_op()).prop_map(|(r, t, o)| Op::Cap(r, t, o)),
        (0usize..8, 1u32..4, 1u32..4, 0u32..3, 0u32..3).prop_map(|(r, a, b, x, y)| Op::Transfer(r, a, b, x, y)),
        (0usize..8).prop_map(Op::Alloc),
    ];
    prop::collection::vec(op, 1..40)
}

fn pick(s: &Store, i: usize) -> RegionId {
    let ids: Vec<RegionId> = s.region_ids().into_iter().collect();
    ids[i % ids.len()]
}

fn totals(s: &Store) -> BTreeMap<RegionId, (u32, u32)> {
    s.regions()
        .map(|(r, n)| (r, n.threads.values().fold((0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1))))
        .collect()
}

/// The region tree reached from the heap covers every region exactly once
/// and parent links agree with child links.
fn tree_shaped(s: &Store) -> Result<(), TestCaseError> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![RegionId::HEAP];
    while let Some(r) = stack.pop() {
        prop_assert!(seen.insert(r), "{r} reached twice");
        let node = s.region(r).unwrap();
        for c in &node.children {
            let child = s.region(*c);
            prop_assert!(child.is_some(), "dangling child {c}");
            prop_assert_eq!(child.unwrap().parent, Some(r));
            stack.push(*c);
        }
    }
    prop_assert_eq!(seen, s.region_ids());
    Ok(())
}

/// Runs `ops` against a fresh store, handing every step to `check` with
/// the store before and after.
fn drive(
    ops: &[Op],
    mut check: impl FnMut(&Op, &Store, &Store, bool) -> Result<(), TestCaseError>,
) -> Result<(), TestCaseError> {
    let mut s = Store::new(MAIN_THREAD);
    for op in ops {
        let before = s.clone();
        let ok = match op {
            // Creating a locked child under another thread's lock is outside
            // what a checked program can reach; leave it out.
            Op::NewRgn(r, t) if s.lock_conflict(pick(&s, *r), ThreadId(*t)).is_some() => continue,
            Op::NewRgn(r, t) => s.newrgn(pick(&s, *r), ThreadId(*t)).is_ok(),
            Op::Cap(r, t, o) => s.updcap(*o, pick(&s, *r), ThreadId(*t)).is_ok(),
            Op::Transfer(r, a, b, x, y) => {
                let (r, from) = (pick(&s, *r), ThreadId(*a));
                let mut counts = (*x, *y);
                if *y > 0 {
                    // Like a spawn: a lock only moves with the sender's whole
                    // capability, and not out from under its other locks.
                    let mut near = s.descendants(r);
                    near.extend(s.chain(r).into_iter().skip(1));
                    if near.iter().any(|d| s.region(*d).unwrap().counts(from).1 > 0) {
                        continue;
                    }
                    counts = s.region(r).unwrap().counts(from);
                }
                let piece = [(r, counts)].into_iter().collect();
                a != b && s.transfer(from, ThreadId(*b), &piece).is_ok()
            }
            Op::Alloc(r) => s.alloc(pick(&s, *r), Expr::int(1)).is_ok(),
        };
        if !ok {
            prop_assert_eq!(&s, &before, "failed {:?} changed the store", op);
        }
        check(op, &before, &s, ok)?;
        if s.region(RegionId::HEAP).is_none() {
            prop_assert!(s.region_ids().is_empty(), "regions outlived the heap");
            break;
        }
        tree_shaped(&s)?;
    }
    Ok(())
}

pub fn transfer_conservation(ops: Vec<Op>) -> Result<(), TestCaseError> {
    drive(&ops, |op, before, after, _| {
        if let Op::Transfer(..) = op {
            prop_assert_eq!(totals(before), totals(after));
        }
        Ok(())
    })
}

pub fn mutual_exclusion(ops: Vec<Op>) -> Result<(), TestCaseError> {
    drive(&ops, |_, _, after, _| {
        if after.region(RegionId::HEAP).is_some() {
            check_store_consistency(after, &BTreeMap::new()).map_err(|v| TestCaseError::fail(v.message))?;
        }
        Ok(())
    })
}

pub fn subtree_removal(ops: Vec<Op>) -> Result<(), TestCaseError> {
    drive(&ops, |op, before, after, ok| {
        let Op::Cap(_, _, CapOp::RgMinus) = op else { return Ok(()) };
        if !ok {
            return Ok(());
        }
        for (r, _) in before.regions() {
            if after.region(r).is_some() {
                continue;
            }
            let mut doomed = before.descendants(r);
            doomed.insert(r);
            let cells: Vec<LocationId> =
                before.locations().filter(|(l, _)| doomed.contains(&l.region)).map(|(l, _)| l).collect();
            for d in &doomed {
                prop_assert!(after.region(*d).is_none(), "{d} survived");
            }
            for l in cells {
                for n in 1..4 {
                    prop_assert!(after.lookup(l, ThreadId(n)).is_err(), "{l} still resolves");
                }
            }
        }
        Ok(())
    })
}

/// A random closed run-time term built from values and redex shapes.
pub fn runtime_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0i64..5).prop_map(Expr::int),
        any::<bool>().prop_map(Expr::bool),
        Just(Expr::unit()),
        (0u32..3).prop_map(|r| Expr::rgn_val(RegionId(r))),
        (0u32..3).prop_map(|i| Expr::loc_val(LocationId { region: RegionId(1), index: i })),
        Just(reglock::parser::parse_expr("λ(x: int). x").unwrap()),
    ];
    leaf.prop_recursive(5, 40, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::app(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::prim(reglock::ast::PrimOp::Add, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::seq(a, b)),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(c, t, e)| Expr::if_(c, t, e)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::assign(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new_ref(a, b)),
            inner.clone().prop_map(Expr::deref),
            inner.clone().prop_map(|a| Expr::cap(CapOp::LkPlus, a)),
            inner.clone().prop_map(|a| Expr::new(ExprKind::Ret(Box::new(a)), Default::default())),
            (inner.clone(), inner.clone()).prop_map(|(c, b)| Expr::while_(c, b)),
        ]
    })
}

/// Positions `p` where the term can step: every node on the way is entered
/// through a position it evaluates, everything evaluated before it there is
/// a value, and the node at `p` is not a value while everything it
/// evaluates is.
fn redex_positions(e: &Expr, here: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    use ExprKind::*;
    if e.is_value() {
        return;
    }
    let evaluated: &[usize] = match &e.kind {
        Var(_) | Const(_) | RgnVal(_) | LocVal(_) | Lambda(_) | RegionLambda(..) | While(..) => &[],
        Deref(_) | Cap(..) | RegionApp(..) | Ret(_) | NewRgn { .. } | If(..) | Seq(..) => &[0],
        Prim(..) | App(..) | NewRef(..) | Assign(..) => &[0, 1],
    };
    let kids = e.children();
    if evaluated.iter().all(|i| kids[*i].is_value()) {
        out.push(here.clone());
    }
    for &i in evaluated {
        if kids[..i].iter().all(|k| k.is_value()) {
            here.push(i);
            redex_positions(kids[i], here, out);
            here.pop();
        }
    }
}

pub fn unique_decomposition(e: Expr) -> Result<(), TestCaseError> {
    let mut all = Vec::new();
    redex_positions(&e, &mut Vec::new(), &mut all);
    match decompose(&Runtime::default(), &e) {
        None => prop_assert!(e.is_value() && all.is_empty()),
        Some(r) => {
            prop_assert_eq!(all.len(), 1, "redexes at {:?}", all);
            prop_assert_eq!(&r.path, &all[0]);
        }
    }
    Ok(())
}

/// A spawn moves counts between threads without changing any total.
pub fn spawn_conservation((counts, take): (Vec<(u32, u32)>, Vec<(u32, u32)>)) -> Result<(), TestCaseError> {
    let mut c = Config::initial();
    let mut transfer = Effect::new();
    for (i, ((r, l), (a, b))) in counts.iter().zip(&take).enumerate() {
        let id = c.store.newrgn(RegionId::HEAP, MAIN_THREAD).unwrap();
        c.store.force_counts(id, MAIN_THREAD, (*r, *l));
        if i % 2 == 0 || (*a, *b) != (0, 0) {
            transfer.insert(RegionName::Lit(id), Capability::impure(*a, *b), Parent::Region(RegionName::heap()));
        }
    }
    let before = totals(&c.store);
    let f = reglock::parser::parse_expr("λ(x: int). ()").unwrap();
    c.threads.insert(MAIN_THREAD, Expr::spawn(f, Expr::int(0), Some(transfer)));
    let fits = counts.iter().zip(&take).all(|((r, l), (a, b))| a <= r && b <= l);
    match step_thread(&Runtime::default(), &c, MAIN_THREAD) {
        StepOutcome::Spawned { config, .. } => {
            prop_assert!(fits);
            prop_assert_eq!(totals(&config.store), before);
        }
        StepOutcome::Stuck { .. } => prop_assert!(!fits),
        other => prop_assert!(false, "unexpected {other:?}"),
    }
    Ok(())
}

pub fn count_pairs() -> impl Strategy<Value = (Vec<(u32, u32)>, Vec<(u32, u32)>)> {
    (1usize..4).prop_flat_map(|n| {
        (prop::collection::vec((1u32..4, 0u32..3), n), prop::collection::vec((0u32..4, 0u32..3), n))
    })
}

/// A random surface term with no run-time forms.
pub fn surface_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0i64..100).prop_map(Expr::int),
        any::<bool>().prop_map(Expr::bool),
        Just(Expr::unit()),
        prop::sample::select(vec!["x", "y", "h", "heap"]).prop_map(Expr::var),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::app(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::prim(reglock::ast::PrimOp::Add, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::prim(reglock::ast::PrimOp::Lt, a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::seq(a, b)),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(c, t, e)| Expr::if_(c, t, e)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::assign(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::new_ref(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::while_(a, b)),
            inner.clone().prop_map(Expr::deref),
            (cap_op(), inner.clone()).prop_map(|(o, a)| Expr::cap(o, a)),
            inner.clone().prop_map(|a| Expr::rapp(a, RegionName::var("ρ"))),
            (inner.clone(), inner.clone()).prop_map(|(p, b)| Expr::newrgn("ρ1", "h1", p, b)),
            inner.clone().prop_map(|b| Expr::rlambda("ρ2", b)),
        ]
    })
}

pub fn parse_pretty_round_trip(e: Expr) -> Result<(), TestCaseError> {
    let text = reglock::pretty::pretty(&e);
    let back = reglock::parser::parse_expr(&text).map_err(|err| TestCaseError::fail(format!("{text}: {err}")))?;
    prop_assert_eq!(back, e, "through {}", text);
    Ok(())
}

/// Substituting a closed value twice is the same as substituting once, and
/// leaves the variable free nowhere.
pub fn substitution_idempotent((e, x, v): (Expr, &'static str, Expr)) -> Result<(), TestCaseError> {
    let once = e.subst_var(x, &v);
    prop_assert!(!once.free_vars().contains(x));
    prop_assert_eq!(once.subst_var(x, &v), once.clone());
    let r = RegionName::var("ρ");
    let lit = RegionName::Lit(RegionId(7));
    let ronce = once.subst_region(&r, &lit);
    prop_assert!(!ronce.free_region_vars().contains("ρ"));
    prop_assert_eq!(ronce.subst_region(&r, &lit), ronce);
    Ok(())
}

pub fn substitution_case() -> impl Strategy<Value = (Expr, &'static str, Expr)> {
    (
        surface_expr(),
        prop::sample::select(vec!["x", "y", "h"]),
        prop_oneof![(0i64..9).prop_map(Expr::int), Just(Expr::unit()), (1u32..4).prop_map(|r| Expr::rgn_val(RegionId(r)))],
    )
}
