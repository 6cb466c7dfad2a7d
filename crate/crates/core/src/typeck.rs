//! The type-and-effect checker.
//!
//! Checking elaborates the program as it goes: lambdas introduced by `let`
//! get their annotation filled in, and every `spawn` records the effect it
//! transfers to the new thread.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::ast::{
    CallingMode, Capability, Const, Effect, Expr, ExprKind, Lambda, LambdaSig, LocationId, Loc, Parent,
    PrimOp, Purity, RegionId, RegionName, Type, fresh_region_var,
};
use crate::capability::{
    apply_cap_op, check_par_constraints, effect_join, effect_subtract, is_accessible_static, is_live_static,
    SplitResult,
};
use crate::diag::Diagnostic;
use crate::parser::{Def, Program};

/// A call in progress, as seen from the caller: what the caller kept, how
/// the passed regions look to the callee, and what the callee promised to
/// hand back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub retained: Effect,
    /// Purity and parent of each passed region inside the callee.
    pub view: BTreeMap<RegionName, (Purity, Parent)>,
    /// Purity and parent of each region in the caller's effect at the call.
    pub outer: BTreeMap<RegionName, (Purity, Parent)>,
    pub abstracted: BTreeMap<RegionName, RegionName>,
    pub output: Effect,
    pub result: Type,
}

impl FrameRecord {
    pub fn from_split(split: &SplitResult, output: Effect, result: Type) -> Self {
        FrameRecord {
            retained: split.retained.clone(),
            view: split.passed.iter().map(|(r, e)| (r.clone(), (e.cap.purity, e.parent.clone()))).collect(),
            outer: split.original.iter().map(|(r, e)| (r.clone(), (e.cap.purity, e.parent.clone()))).collect(),
            abstracted: split.abstracted.clone(),
            output,
            result,
        }
    }

    /// The callee's effect, given the caller-level effect `outer`.
    pub fn view_of(&self, outer: &Effect) -> Effect {
        let mut inner = Effect::new();
        for (r, e) in outer.iter() {
            let (kr, kl) = self.retained.get(r).map(|k| k.cap.counts()).unwrap_or((0, 0));
            let (rc, lc) = (e.cap.region.saturating_sub(kr), e.cap.lock.saturating_sub(kl));
            if rc == 0 {
                continue;
            }
            let (purity, parent) = self.view.get(r).cloned().unwrap_or((e.cap.purity, e.parent.clone()));
            inner.insert(r.clone(), Capability { region: rc, lock: lc, purity }, parent);
        }
        inner
    }

    /// The caller-level effect obtained by putting the retained part back
    /// around the callee's effect `inner`. Retained regions whose parent
    /// disappeared are dropped from the record as well.
    pub fn merge(&mut self, inner: &Effect) -> Effect {
        let mut out = Effect::new();
        for (r, k) in self.retained.iter() {
            let (ir, il) = inner.get(r).map(|e| e.cap.counts()).unwrap_or((0, 0));
            let (purity, parent) = self.outer.get(r).cloned().unwrap_or((k.cap.purity, k.parent.clone()));
            out.insert(r.clone(), Capability { region: k.cap.region + ir, lock: k.cap.lock + il, purity }, parent);
        }
        for (r, e) in inner.iter() {
            if self.retained.contains(r) {
                continue;
            }
            let (purity, parent) = self.outer.get(r).cloned().unwrap_or((e.cap.purity, e.parent.clone()));
            out.insert(r.clone(), Capability { purity, ..e.cap }, parent);
        }
        loop {
            let lost: Vec<RegionName> = out
                .iter()
                .filter(|(_, e)| matches!(&e.parent, Parent::Region(p) if self.outer.contains_key(p) && !out.contains(p)))
                .map(|(r, _)| r.clone())
                .collect();
            if lost.is_empty() {
                break;
            }
            for r in lost {
                out.remove(&r);
                self.retained.remove(&r);
            }
        }
        out
    }
}

/// An effect observed after a statement, for effect listings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Checkpoint {
    pub def: String,
    pub line: u32,
    /// Ordering key within the line; later statements win.
    pub col: u32,
    pub effect: Effect,
}

#[derive(Clone, Debug)]
pub struct TypedProgram {
    pub defs: Vec<Def>,
    pub types: BTreeMap<String, Type>,
    pub checkpoints: Vec<Checkpoint>,
}

impl TypedProgram {
    pub fn program(&self) -> Program {
        Program { defs: self.defs.clone() }
    }

    pub fn body(&self, name: &str) -> Option<&Expr> {
        self.defs.iter().find(|d| d.name == name).map(|d| &d.body)
    }

    /// The effect after the last statement ending on each line.
    pub fn effects_by_line(&self) -> Vec<(String, u32, Effect)> {
        let mut best: BTreeMap<(u32, String), (u32, usize)> = BTreeMap::new();
        for (i, c) in self.checkpoints.iter().enumerate() {
            let key = (c.line, c.def.clone());
            match best.get(&key) {
                Some((col, _)) if *col > c.col => {}
                _ => {
                    best.insert(key, (c.col, i));
                }
            }
        }
        best.into_iter()
            .map(|((line, def), (_, i))| (def, line, self.checkpoints[i].effect.clone()))
            .collect()
    }
}

/// Region and location typing for run-time terms.
#[derive(Clone, Debug, Default)]
pub struct RuntimeCtx {
    pub regions: BTreeSet<RegionId>,
    pub locs: BTreeMap<LocationId, Type>,
}

impl RuntimeCtx {
    pub fn initial() -> Self {
        RuntimeCtx { regions: [RegionId::HEAP].into_iter().collect(), locs: BTreeMap::new() }
    }
}

type TResult<T> = Result<T, Diagnostic>;

struct Scope {
    rvars: Vec<String>,
    vars: Vec<(String, Type)>,
}

impl Scope {
    fn new() -> Self {
        Scope { rvars: Vec::new(), vars: Vec::new() }
    }

    fn lookup(&self, x: &str) -> Option<&Type> {
        self.vars.iter().rev().find(|(n, _)| n == x).map(|(_, t)| t)
    }
}

struct Checker<'a> {
    globals: &'a BTreeMap<String, Type>,
    rt: &'a RuntimeCtx,
    frames: &'a [FrameRecord],
    next_frame: usize,
    record: Option<String>,
    checkpoints: Vec<Checkpoint>,
}

fn diag(code: &'static str, msg: impl Into<String>, loc: Loc, eff: &Effect) -> Diagnostic {
    Diagnostic::new(code, msg, loc, Some(eff.clone()))
}

impl<'a> Checker<'a> {
    fn checkpoint(&mut self, line: u32, col: u32, eff: &Effect) {
        if let Some(def) = &self.record {
            if line > 0 {
                self.checkpoints.push(Checkpoint { def: def.clone(), line, col, effect: eff.clone() });
            }
        }
    }

    fn region_in_scope(&self, sc: &Scope, r: &RegionName) -> bool {
        match r {
            RegionName::Var(v) => sc.rvars.contains(v),
            RegionName::Lit(id) => self.rt.regions.contains(id),
        }
    }

    fn check_regions_bound(&self, sc: &Scope, regions: BTreeSet<RegionName>, loc: Loc, eff: &Effect) -> TResult<()> {
        for r in regions {
            if !self.region_in_scope(sc, &r) {
                return Err(diag("UnboundRegion", format!("region {r} is not in scope"), loc, eff));
            }
        }
        Ok(())
    }

    fn check(&mut self, sc: &mut Scope, e: &Expr, g: &Effect) -> TResult<(Expr, Type, Effect)> {
        let (e2, t, out) = self.check_inner(sc, e, g)?;
        if let Err(msg) = out.well_formed() {
            return Err(diag("IllFormedEffect", msg, e.loc, &out));
        }
        Ok((e2, t, out))
    }

    fn check_inner(&mut self, sc: &mut Scope, e: &Expr, g: &Effect) -> TResult<(Expr, Type, Effect)> {
        let loc = e.loc;
        let rebuild = |kind: ExprKind| Expr { kind, loc };
        match &e.kind {
            ExprKind::Const(c) => {
                let t = match c {
                    Const::Int(_) => Type::int(),
                    Const::Bool(_) => Type::bool(),
                    Const::Unit => Type::Unit,
                };
                Ok((e.clone(), t, g.clone()))
            }
            ExprKind::Var(x) => {
                let t = sc
                    .lookup(x)
                    .or_else(|| self.globals.get(x))
                    .cloned()
                    .ok_or_else(|| diag("UnboundVariable", format!("unbound variable `{x}`"), loc, g))?;
                Ok((e.clone(), t, g.clone()))
            }
            ExprKind::RgnVal(id) => {
                if !self.rt.regions.contains(id) {
                    return Err(diag("UnboundRegion", format!("region {id} is not allocated"), loc, g));
                }
                Ok((e.clone(), Type::Rgn(RegionName::Lit(*id)), g.clone()))
            }
            ExprKind::LocVal(l) => {
                let t = self
                    .rt
                    .locs
                    .get(l)
                    .cloned()
                    .ok_or_else(|| diag("UnboundLocation", format!("location {l} is not allocated"), loc, g))?;
                Ok((e.clone(), Type::Ref(Box::new(t), RegionName::Lit(l.region)), g.clone()))
            }
            ExprKind::Prim(op, a, b) => {
                let (a2, ta, g1) = self.check(sc, a, g)?;
                let (b2, tb, g2) = self.check(sc, b, &g1)?;
                let t = match op {
                    PrimOp::Add | PrimOp::Sub | PrimOp::Lt => {
                        for (t, n) in [(&ta, a), (&tb, b)] {
                            if *t != Type::int() {
                                return Err(diag("TypeMismatch", format!("expected int, found {t}"), n.loc, &g2));
                            }
                        }
                        if *op == PrimOp::Lt { Type::bool() } else { Type::int() }
                    }
                    PrimOp::Eq => {
                        if !(matches!(ta, Type::Base(_)) && ta == tb) {
                            return Err(diag("TypeMismatch", format!("cannot compare {ta} with {tb}"), loc, &g2));
                        }
                        Type::bool()
                    }
                };
                Ok((rebuild(ExprKind::Prim(*op, Box::new(a2), Box::new(b2))), t, g2))
            }
            ExprKind::Lambda(l) => {
                let Some(sig) = &l.sig else {
                    return Err(diag("MissingAnnotation", "function parameter needs a type annotation", loc, g));
                };
                let mut mentioned = sig.param_ty.free_regions();
                mentioned.extend(sig.input.free_regions());
                mentioned.extend(sig.output.free_regions());
                self.check_regions_bound(sc, mentioned, loc, g)?;
                for eff in [&sig.input, &sig.output] {
                    if let Err(msg) = eff.well_formed() {
                        return Err(diag("IllFormedEffect", msg, loc, eff));
                    }
                }
                sc.vars.push((l.param.clone(), sig.param_ty.clone()));
                let res = self.check(sc, &l.body, &sig.input);
                sc.vars.pop();
                let (body, tr, out) = res?;
                if out != sig.output {
                    return Err(diag(
                        "EffectMismatch",
                        format!("function body ends with effect {out}, but {} was declared", sig.output),
                        l.body.loc,
                        &out,
                    ));
                }
                let t = Type::Fn {
                    param: Box::new(sig.param_ty.clone()),
                    input: sig.input.clone(),
                    output: sig.output.clone(),
                    result: Box::new(tr),
                };
                let lam = Lambda { param: l.param.clone(), sig: Some(sig.clone()), body };
                Ok((rebuild(ExprKind::Lambda(Box::new(lam))), t, g.clone()))
            }
            ExprKind::RegionLambda(v, body) => {
                if !body.is_value() {
                    return Err(diag("TypeMismatch", "the body of a region abstraction must be a value", loc, g));
                }
                let (v, body) = self.fresh_binder(sc, v, body);
                sc.rvars.push(v.clone());
                let res = self.check(sc, &body, g);
                sc.rvars.pop();
                let (body2, t, _) = res?;
                Ok((rebuild(ExprKind::RegionLambda(v.clone(), Box::new(body2))), Type::Poly(v, Box::new(t)), g.clone()))
            }
            ExprKind::RegionApp(f, r) => {
                let (f2, tf, g1) = self.check(sc, f, g)?;
                if !self.region_in_scope(sc, r) {
                    return Err(diag("UnboundRegion", format!("region {r} is not in scope"), loc, &g1));
                }
                let Type::Poly(v, body) = tf else {
                    return Err(diag("TypeMismatch", format!("expected a region abstraction, found {tf}"), f.loc, &g1));
                };
                let var = RegionName::Var(v);
                if body.alias_conflict(&var, r) {
                    return Err(diag(
                        "PurityViolation",
                        format!("instantiating with {r} would alias a pure capability"),
                        loc,
                        &g1,
                    ));
                }
                let t = body.subst_region(&var, r);
                Ok((rebuild(ExprKind::RegionApp(Box::new(f2), r.clone())), t, g1))
            }
            ExprKind::App(f, a, mode) => self.check_app(sc, e, f, a, mode, g),
            ExprKind::NewRef(init, h) => {
                let (i2, ti, g1) = self.check(sc, init, g)?;
                let (h2, th, g2) = self.check(sc, h, &g1)?;
                let Type::Rgn(r) = th else {
                    return Err(diag("TypeMismatch", format!("expected a region handle, found {th}"), h.loc, &g2));
                };
                if !is_live_static(&g2, &r) {
                    return Err(diag("NotLive", format!("region {r} is not live"), loc, &g2));
                }
                self.checkpoint(loc.end_line, loc.end_col, &g2);
                Ok((rebuild(ExprKind::NewRef(Box::new(i2), Box::new(h2))), Type::Ref(Box::new(ti), r), g2))
            }
            ExprKind::Deref(x) => {
                let (x2, tx, g1) = self.check(sc, x, g)?;
                let Type::Ref(t, r) = tx else {
                    return Err(diag("TypeMismatch", format!("expected a reference, found {tx}"), x.loc, &g1));
                };
                self.require_accessible(&g1, &r, loc)?;
                Ok((rebuild(ExprKind::Deref(Box::new(x2))), *t, g1))
            }
            ExprKind::Assign(l, r) => {
                let (l2, tl, g1) = self.check(sc, l, g)?;
                let (r2, tr, g2) = self.check(sc, r, &g1)?;
                let Type::Ref(t, rg) = tl else {
                    return Err(diag("TypeMismatch", format!("expected a reference, found {tl}"), l.loc, &g2));
                };
                if !t.alpha_eq(&tr) {
                    return Err(diag("TypeMismatch", format!("cannot assign {tr} to a reference of {t}"), loc, &g2));
                }
                self.require_accessible(&g2, &rg, loc)?;
                self.checkpoint(loc.end_line, loc.end_col, &g2);
                Ok((rebuild(ExprKind::Assign(Box::new(l2), Box::new(r2))), Type::Unit, g2))
            }
            ExprKind::NewRgn { var, handle, parent, body } => {
                let (p2, tp, g1) = self.check(sc, parent, g)?;
                let Type::Rgn(rp) = tp else {
                    return Err(diag("TypeMismatch", format!("expected a region handle, found {tp}"), parent.loc, &g1));
                };
                if !is_live_static(&g1, &rp) {
                    return Err(diag("NotLive", format!("parent region {rp} is not live"), parent.loc, &g1));
                }
                let (var, body) = self.fresh_binder(sc, var, body);
                let rv = RegionName::Var(var.clone());
                let inner = g1.clone().with(rv.clone(), Capability::pure(1, 1), Parent::Region(rp));
                self.checkpoint(loc.line, u32::MAX, &inner);
                sc.rvars.push(var.clone());
                sc.vars.push((handle.clone(), Type::Rgn(rv.clone())));
                let res = self.check(sc, &body, &inner);
                sc.vars.pop();
                sc.rvars.pop();
                let (b2, tb, g2) = res?;
                if tb.free_regions().contains(&rv) {
                    return Err(diag("RegionEscapes", format!("result type {tb} mentions {rv}"), loc, &g2));
                }
                if g2.free_regions().contains(&rv) {
                    return Err(diag("RegionEscapes", format!("region {rv} is not consumed by the end of its scope"), loc, &g2));
                }
                let kind =
                    ExprKind::NewRgn { var, handle: handle.clone(), parent: Box::new(p2), body: Box::new(b2) };
                Ok((rebuild(kind), tb, g2))
            }
            ExprKind::Cap(op, h) => {
                let (h2, th, g1) = self.check(sc, h, g)?;
                let Type::Rgn(r) = th else {
                    return Err(diag("TypeMismatch", format!("expected a region handle, found {th}"), h.loc, &g1));
                };
                let g2 = apply_cap_op(&g1, &r, *op).map_err(|err| Diagnostic::from_cap(err, loc, &g1))?;
                self.checkpoint(loc.end_line, loc.end_col, &g2);
                Ok((rebuild(ExprKind::Cap(*op, Box::new(h2))), Type::Unit, g2))
            }
            ExprKind::If(c, t, el) => {
                let (c2, tc, g1) = self.check(sc, c, g)?;
                if tc != Type::bool() {
                    return Err(diag("TypeMismatch", format!("condition has type {tc}, expected bool"), c.loc, &g1));
                }
                let (t2, tt, gt) = self.check(sc, t, &g1)?;
                let (e2, te, ge) = self.check(sc, el, &g1)?;
                if !tt.alpha_eq(&te) {
                    return Err(diag("TypeMismatch", format!("branches have types {tt} and {te}"), loc, &g1));
                }
                if gt != ge {
                    return Err(diag("EffectMismatch", format!("branches end with effects {gt} and {ge}"), loc, &g1));
                }
                Ok((rebuild(ExprKind::If(Box::new(c2), Box::new(t2), Box::new(e2))), tt, gt))
            }
            ExprKind::While(c, b) => {
                let (c2, tc, g1) = self.check(sc, c, g)?;
                if tc != Type::bool() {
                    return Err(diag("TypeMismatch", format!("condition has type {tc}, expected bool"), c.loc, &g1));
                }
                let (b2, _, g2) = self.check(sc, b, &g1)?;
                if &g2 != g {
                    return Err(diag(
                        "EffectMismatch",
                        format!("loop body ends with effect {g2}, but the loop started with {g}"),
                        loc,
                        &g2,
                    ));
                }
                Ok((rebuild(ExprKind::While(Box::new(c2), Box::new(b2))), Type::Unit, g1))
            }
            ExprKind::Seq(a, b) => {
                let (a2, _, g1) = self.check(sc, a, g)?;
                let (b2, tb, g2) = self.check(sc, b, &g1)?;
                Ok((rebuild(ExprKind::Seq(Box::new(a2), Box::new(b2))), tb, g2))
            }
            ExprKind::Ret(body) => {
                let Some(frame) = self.frames.get(self.next_frame).cloned() else {
                    return Err(diag("FrameMismatch", "call frame without a matching record", loc, g));
                };
                self.next_frame += 1;
                let inner = frame.view_of(g);
                let (b2, tb, out) = self.check(sc, body, &inner)?;
                if !tb.alpha_eq(&frame.result) {
                    return Err(diag(
                        "FrameMismatch",
                        format!("call body has type {tb}, expected {}", frame.result),
                        loc,
                        &out,
                    ));
                }
                if out != frame.output {
                    return Err(diag(
                        "FrameMismatch",
                        format!("call body ends with effect {out}, expected {}", frame.output),
                        loc,
                        &out,
                    ));
                }
                let split = SplitResult {
                    passed: inner,
                    retained: frame.retained.clone(),
                    abstracted: frame.abstracted.clone(),
                    original: g.clone(),
                };
                let g2 = effect_join(&split, &frame.output, false).map_err(|err| Diagnostic::from_cap(err, loc, g))?;
                Ok((rebuild(ExprKind::Ret(Box::new(b2))), tb, g2))
            }
        }
    }

    fn require_accessible(&self, g: &Effect, r: &RegionName, loc: Loc) -> TResult<()> {
        if !is_live_static(g, r) {
            return Err(diag("NotLive", format!("region {r} is not live"), loc, g));
        }
        if !is_accessible_static(g, r) {
            return Err(diag("InaccessibleRegion", format!("region {r} is not locked"), loc, g));
        }
        Ok(())
    }

    /// Renames a region binder that would shadow one already in scope.
    fn fresh_binder(&self, sc: &Scope, v: &str, body: &Expr) -> (String, Expr) {
        if !sc.rvars.iter().any(|x| x == v) {
            return (v.to_string(), body.clone());
        }
        let used = body.free_region_vars();
        let fresh = fresh_region_var(v, |c| sc.rvars.iter().any(|x| x == c) || used.contains(c));
        let renamed = body.subst_region(&RegionName::Var(v.to_string()), &RegionName::Var(fresh.clone()));
        (fresh, renamed)
    }

    fn check_app(
        &mut self,
        sc: &mut Scope,
        e: &Expr,
        f: &Expr,
        a: &Expr,
        mode: &CallingMode,
        g: &Effect,
    ) -> TResult<(Expr, Type, Effect)> {
        let loc = e.loc;
        // `let x = a in body`: the binding's annotation is whatever `a`
        // produces, and the body runs on the whole remaining effect.
        if let (ExprKind::Lambda(l), CallingMode::Seq) = (&f.kind, mode) {
            if l.sig.is_none() {
                let (a2, ta, g1) = self.check(sc, a, g)?;
                sc.vars.push((l.param.clone(), ta.clone()));
                let res = self.check(sc, &l.body, &g1);
                sc.vars.pop();
                let (body, tb, g2) = res?;
                let sig = LambdaSig { param_ty: ta, input: g1.clone(), output: g2.clone() };
                let lam = Expr { kind: ExprKind::Lambda(Box::new(Lambda { param: l.param.clone(), sig: Some(sig), body })), loc: f.loc };
                let split = effect_subtract(&g1, &g1).map_err(|err| Diagnostic::from_cap(err, loc, &g1))?;
                let g3 = effect_join(&split, &g2, false).map_err(|err| Diagnostic::from_cap(err, loc, &g1))?;
                return Ok((Expr { kind: ExprKind::App(Box::new(lam), Box::new(a2), CallingMode::Seq), loc }, tb, g3));
            }
        }
        let (f2, tf, g1) = self.check(sc, f, g)?;
        let (a2, ta, g2) = self.check(sc, a, &g1)?;
        let Type::Fn { param, input, output, result } = tf else {
            return Err(diag("TypeMismatch", format!("expected a function, found {tf}"), f.loc, &g2));
        };
        if !param.alpha_eq(&ta) {
            return Err(diag("TypeMismatch", format!("argument has type {ta}, expected {param}"), a.loc, &g2));
        }
        let split = effect_subtract(&g2, &input).map_err(|err| Diagnostic::from_cap(err, loc, &g2))?;
        let (mode2, g3) = match mode {
            CallingMode::Seq => {
                let g3 = effect_join(&split, &output, false).map_err(|err| Diagnostic::from_cap(err, loc, &g2))?;
                (CallingMode::Seq, g3)
            }
            CallingMode::Par(explicit) => {
                check_par_constraints(&split.passed, &output, *result == Type::Unit)
                    .map_err(|err| Diagnostic::from_cap(err, loc, &g2))?;
                if let Some(t) = explicit {
                    if *t != split.passed {
                        return Err(diag(
                            "TransferMismatch",
                            format!("spawn transfers {}, but {t} was written", split.passed),
                            loc,
                            &g2,
                        ));
                    }
                }
                let g3 = effect_join(&split, &Effect::new(), true).map_err(|err| Diagnostic::from_cap(err, loc, &g2))?;
                (CallingMode::Par(Some(split.passed.clone())), g3)
            }
        };
        let is_inner_curried = matches!(mode2, CallingMode::Seq) && matches!(*result, Type::Fn { .. });
        if !is_inner_curried {
            self.checkpoint(loc.end_line, loc.end_col, &g3);
        }
        let t = if matches!(mode2, CallingMode::Par(_)) { Type::Unit } else { *result };
        Ok((Expr { kind: ExprKind::App(Box::new(f2), Box::new(a2), mode2), loc }, t, g3))
    }
}

/// Checks a closed run-time expression (a thread body) under `input`.
///
/// `frames` supplies one record per call in progress, outermost first.
pub fn check_runtime_expr(
    globals: &BTreeMap<String, Type>,
    rt: &RuntimeCtx,
    frames: &[FrameRecord],
    e: &Expr,
    input: &Effect,
) -> Result<(Type, Effect), Diagnostic> {
    let mut ck = Checker { globals, rt, frames, next_frame: 0, record: None, checkpoints: Vec::new() };
    let (_, t, out) = ck.check(&mut Scope::new(), e, input)?;
    if ck.next_frame != frames.len() {
        return Err(Diagnostic::new(
            "FrameMismatch",
            format!("{} call records but {} calls in progress", frames.len(), ck.next_frame),
            e.loc,
            Some(input.clone()),
        ));
    }
    Ok((t, out))
}

/// Checks an open source expression with no free variables other than
/// definitions, returning its elaboration.
pub fn check_expr(
    globals: &BTreeMap<String, Type>,
    rt: &RuntimeCtx,
    e: &Expr,
    input: &Effect,
) -> Result<(Expr, Type, Effect), Diagnostic> {
    let mut ck = Checker { globals, rt, frames: &[], next_frame: 0, record: None, checkpoints: Vec::new() };
    ck.check(&mut Scope::new(), e, input)
}

/// The type every `main` must have, for heap variable `v` and an output
/// that either gives the heap capability up or keeps it.
fn main_type_ok(t: &Type) -> bool {
    let Type::Poly(v, body) = t else { return false };
    let heap = RegionName::Var(v.clone());
    let Type::Fn { param, input, output, result } = &**body else { return false };
    let entry = Effect::new().with(heap.clone(), Capability::pure(1, 0), Parent::Bottom);
    **param == Type::Rgn(heap) && *input == entry && (output.is_empty() || *output == entry) && **result == Type::Unit
}

pub fn main_type_display() -> &'static str {
    "∀ρ. fn(rgn(ρ)) @ [{ρ^{1,0}@⊥} -> {}] -> unit"
}

/// Checks every definition and `main`'s type.
pub fn typecheck_program(p: &Program) -> Result<TypedProgram, Vec<Diagnostic>> {
    let rt = RuntimeCtx::initial();
    let mut types: BTreeMap<String, Type> =
        p.defs.iter().filter_map(|d| d.ty.clone().map(|t| (d.name.clone(), t))).collect();
    let mut diags = Vec::new();
    let mut elaborated: BTreeMap<String, Expr> = BTreeMap::new();
    let mut checkpoints = Vec::new();

    for d in &p.defs {
        if !d.body.is_value() {
            diags.push(Diagnostic::new("DefNotValue", format!("definition `{}` is not a value", d.name), d.body.loc, None));
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    // Unannotated definitions are checked once everything they mention has
    // a type; annotated ones can be checked in any order.
    let mut failed: BTreeSet<String> = BTreeSet::new();
    let mut pending: Vec<&Def> = p.defs.iter().collect();
    loop {
        let before = pending.len();
        let mut still = Vec::new();
        for d in pending {
            let deps = d.body.free_vars();
            if d.ty.is_none() && deps.iter().any(|x| failed.contains(x)) {
                failed.insert(d.name.clone());
                continue;
            }
            if d.ty.is_none() && deps.iter().any(|x| !types.contains_key(x) && p.get(x).is_some()) {
                still.push(d);
                continue;
            }
            let mut ck = Checker {
                globals: &types,
                rt: &rt,
                frames: &[],
                next_frame: 0,
                record: Some(d.name.clone()),
                checkpoints: Vec::new(),
            };
            match ck.check(&mut Scope::new(), &d.body, &Effect::new()) {
                Ok((body, t, _)) => {
                    if let Some(ann) = &d.ty {
                        if !ann.alpha_eq(&t) {
                            diags.push(Diagnostic::new(
                                "TypeMismatch",
                                format!("`{}` has type {t}, but was annotated {ann}", d.name),
                                d.loc,
                                None,
                            ));
                        }
                    }
                    checkpoints.extend(ck.checkpoints);
                    types.entry(d.name.clone()).or_insert(t);
                    elaborated.insert(d.name.clone(), body);
                }
                Err(err) => {
                    diags.push(err);
                    failed.insert(d.name.clone());
                }
            }
        }
        if still.is_empty() {
            break;
        }
        if still.len() == before {
            for d in still {
                diags.push(Diagnostic::new(
                    "RecursiveDefinition",
                    format!("`{}` is recursive and needs a type annotation", d.name),
                    d.loc,
                    None,
                ));
            }
            break;
        }
        pending = still;
    }

    if let Some(t) = types.get("main") {
        if !main_type_ok(t) {
            let loc = p.main().map(|d| d.loc).unwrap_or_default();
            diags.push(Diagnostic::new(
                "BadMainType",
                format!("`main` has type {t}, expected {}", main_type_display()),
                loc,
                None,
            ));
        }
    }
    if !diags.is_empty() {
        diags.sort_by_key(|d| (d.loc.line, d.loc.col));
        return Err(diags);
    }
    let defs = p
        .defs
        .iter()
        .map(|d| Def { name: d.name.clone(), ty: d.ty.clone(), body: elaborated.remove(&d.name).expect("checked"), loc: d.loc })
        .collect();
    Ok(TypedProgram { defs, types, checkpoints })
}
