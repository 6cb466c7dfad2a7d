//! Abstract syntax shared by the checker, the interpreter and the harness.
//!
//! Region names come in two disjoint namespaces: region variables bound by
//! `Λ` and `newrgn`, and region literals that only exist at run time (the
//! global heap is literal `0`, printed `ιH`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// A region literal, allocated by the store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId(pub u32);

impl RegionId {
    pub const HEAP: RegionId = RegionId(0);
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == RegionId::HEAP {
            write!(f, "ιH")
        } else {
            write!(f, "ι{}", self.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThreadId(pub u32);

impl fmt::Display for ThreadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// A heap location. Locations remember the region they were allocated in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocationId {
    pub region: RegionId,
    pub index: u32,
}

impl fmt::Display for LocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ℓ{}", self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegionName {
    Var(String),
    Lit(RegionId),
}

impl RegionName {
    pub fn var(name: impl Into<String>) -> Self {
        RegionName::Var(name.into())
    }

    pub fn heap() -> Self {
        RegionName::Lit(RegionId::HEAP)
    }

    pub fn is_var(&self) -> bool {
        matches!(self, RegionName::Var(_))
    }

    pub fn as_lit(&self) -> Option<RegionId> {
        match self {
            RegionName::Lit(id) => Some(*id),
            RegionName::Var(_) => None,
        }
    }
}

impl fmt::Display for RegionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionName::Var(v) => f.write_str(v),
            RegionName::Lit(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parent {
    Region(RegionName),
    /// The physical root.
    Bottom,
    /// An ancestor abstracted away for the duration of a call.
    Unknown,
}

impl Parent {
    pub fn region(&self) -> Option<&RegionName> {
        match self {
            Parent::Region(r) => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for Parent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parent::Region(r) => write!(f, "{r}"),
            Parent::Bottom => f.write_str("⊥"),
            Parent::Unknown => f.write_str("?"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purity {
    Pure,
    Impure,
}

/// A static region/lock count pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Capability {
    pub region: u32,
    pub lock: u32,
    pub purity: Purity,
}

impl Capability {
    pub const fn pure(region: u32, lock: u32) -> Self {
        Capability { region, lock, purity: Purity::Pure }
    }

    pub const fn impure(region: u32, lock: u32) -> Self {
        Capability { region, lock, purity: Purity::Impure }
    }

    pub fn is_pure(&self) -> bool {
        self.purity == Purity::Pure
    }

    pub fn counts(&self) -> (u32, u32) {
        (self.region, self.lock)
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.purity {
            Purity::Pure => write!(f, "^{{{},{}}}", self.region, self.lock),
            Purity::Impure => write!(f, "^~{{{},{}}}", self.region, self.lock),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EffectEntry {
    pub cap: Capability,
    pub parent: Parent,
}

/// A map from regions to the capability held for them and their parent.
///
/// Entries are kept sorted by region name, so equality is insensitive to
/// the order in which entries were written.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Effect(BTreeMap<RegionName, EffectEntry>);

impl Effect {
    pub fn new() -> Self {
        Effect(BTreeMap::new())
    }

    pub fn with(mut self, region: RegionName, cap: Capability, parent: Parent) -> Self {
        self.insert(region, cap, parent);
        self
    }

    pub fn insert(&mut self, region: RegionName, cap: Capability, parent: Parent) {
        self.0.insert(region, EffectEntry { cap, parent });
    }

    pub fn get(&self, region: &RegionName) -> Option<&EffectEntry> {
        self.0.get(region)
    }

    pub fn get_mut(&mut self, region: &RegionName) -> Option<&mut EffectEntry> {
        self.0.get_mut(region)
    }

    pub fn remove(&mut self, region: &RegionName) -> Option<EffectEntry> {
        self.0.remove(region)
    }

    pub fn contains(&self, region: &RegionName) -> bool {
        self.0.contains_key(region)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RegionName, &EffectEntry)> {
        self.0.iter()
    }

    pub fn regions(&self) -> impl Iterator<Item = &RegionName> {
        self.0.keys()
    }

    /// Every region name mentioned, including parents.
    pub fn free_regions(&self) -> BTreeSet<RegionName> {
        let mut out = BTreeSet::new();
        for (r, e) in &self.0 {
            out.insert(r.clone());
            if let Parent::Region(p) = &e.parent {
                out.insert(p.clone());
            }
        }
        out
    }

    /// Parent chain of `region` inside this effect, nearest first. Stops at a
    /// root, at a parent missing from the domain, or on a cycle.
    pub fn ancestors(&self, region: &RegionName) -> Vec<RegionName> {
        let mut out = Vec::new();
        let mut cur = region.clone();
        while let Some(entry) = self.0.get(&cur) {
            match &entry.parent {
                Parent::Region(p) if self.0.contains_key(p) && !out.contains(p) && p != region => {
                    out.push(p.clone());
                    cur = p.clone();
                }
                _ => break,
            }
        }
        out
    }

    /// Checks the liveness invariant: every concrete parent is itself in the
    /// domain, parent chains are acyclic and no entry has a zero region count.
    pub fn well_formed(&self) -> Result<(), String> {
        for (r, e) in &self.0 {
            if e.cap.region == 0 {
                return Err(format!("region {r} has region count 0"));
            }
            if let Parent::Region(p) = &e.parent {
                if !self.0.contains_key(p) {
                    return Err(format!("parent {p} of {r} is not live"));
                }
            }
        }
        for r in self.0.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = r.clone();
            seen.insert(cur.clone());
            while let Some(Parent::Region(p)) = self.0.get(&cur).map(|e| &e.parent) {
                if !seen.insert(p.clone()) {
                    return Err(format!("parent chain of {r} is cyclic"));
                }
                cur = p.clone();
            }
        }
        Ok(())
    }

    /// Removes every entry whose parent chain does not reach a root inside
    /// the domain. Returns the removed regions.
    pub fn prune_dangling(&mut self) -> Vec<RegionName> {
        let mut removed = Vec::new();
        loop {
            let dangling: Vec<RegionName> = self
                .0
                .iter()
                .filter(|(_, e)| matches!(&e.parent, Parent::Region(p) if !self.0.contains_key(p)))
                .map(|(r, _)| r.clone())
                .collect();
            if dangling.is_empty() {
                break;
            }
            for r in dangling {
                self.0.remove(&r);
                removed.push(r);
            }
        }
        removed
    }

    /// Regions reachable from `region` by following parent links downwards,
    /// `region` itself excluded.
    pub fn descendants(&self, region: &RegionName) -> BTreeSet<RegionName> {
        let mut out = BTreeSet::new();
        let mut frontier = vec![region.clone()];
        while let Some(cur) = frontier.pop() {
            for (r, e) in &self.0 {
                if e.parent.region() == Some(&cur) && r != region && out.insert(r.clone()) {
                    frontier.push(r.clone());
                }
            }
        }
        out
    }

    /// Renames `var` to `with`. When both are in the domain the two entries
    /// are merged: counts are summed and the result is impure.
    pub fn subst_region(&self, var: &RegionName, with: &RegionName) -> Effect {
        if var == with {
            return self.clone();
        }
        let mut out: BTreeMap<RegionName, EffectEntry> = BTreeMap::new();
        for (r, e) in &self.0 {
            let r2 = if r == var { with.clone() } else { r.clone() };
            let parent = match &e.parent {
                Parent::Region(p) if p == var => Parent::Region(with.clone()),
                other => other.clone(),
            };
            match out.get_mut(&r2) {
                Some(existing) => {
                    existing.cap = Capability::impure(
                        existing.cap.region + e.cap.region,
                        existing.cap.lock + e.cap.lock,
                    );
                    if existing.parent == Parent::Unknown {
                        existing.parent = parent;
                    }
                }
                None => {
                    out.insert(r2, EffectEntry { cap: e.cap, parent });
                }
            }
        }
        Effect(out)
    }

    /// True when renaming `var` to `with` would merge two entries one of
    /// which is pure. A pure capability cannot be one of several aliases.
    pub fn alias_conflict(&self, var: &RegionName, with: &RegionName) -> bool {
        if var == with {
            return false;
        }
        match (self.0.get(var), self.0.get(with)) {
            (Some(a), Some(b)) => a.cap.is_pure() || b.cap.is_pure(),
            _ => false,
        }
    }
}

impl FromIterator<(RegionName, Capability, Parent)> for Effect {
    fn from_iter<I: IntoIterator<Item = (RegionName, Capability, Parent)>>(iter: I) -> Self {
        let mut eff = Effect::new();
        for (r, c, p) in iter {
            eff.insert(r, c, p);
        }
        eff
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (r, e)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{r}{}@{}", e.cap, e.parent)?;
        }
        f.write_str("}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseType {
    Int,
    Bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Type {
    Base(BaseType),
    Unit,
    Fn {
        param: Box<Type>,
        input: Effect,
        output: Effect,
        result: Box<Type>,
    },
    /// `∀ρ. τ`
    Poly(String, Box<Type>),
    Ref(Box<Type>, RegionName),
    Rgn(RegionName),
}

impl Type {
    pub fn int() -> Type {
        Type::Base(BaseType::Int)
    }

    pub fn bool() -> Type {
        Type::Base(BaseType::Bool)
    }

    pub fn free_regions(&self) -> BTreeSet<RegionName> {
        let mut out = BTreeSet::new();
        self.collect_free_regions(&mut out);
        out
    }

    fn collect_free_regions(&self, out: &mut BTreeSet<RegionName>) {
        match self {
            Type::Base(_) | Type::Unit => {}
            Type::Fn { param, input, output, result } => {
                param.collect_free_regions(out);
                out.extend(input.free_regions());
                out.extend(output.free_regions());
                result.collect_free_regions(out);
            }
            Type::Poly(v, body) => {
                let mut inner = body.free_regions();
                inner.remove(&RegionName::Var(v.clone()));
                out.extend(inner);
            }
            Type::Ref(t, r) => {
                t.collect_free_regions(out);
                out.insert(r.clone());
            }
            Type::Rgn(r) => {
                out.insert(r.clone());
            }
        }
    }

    /// Capture-avoiding substitution of region variable `var` by `with`.
    pub fn subst_region(&self, var: &RegionName, with: &RegionName) -> Type {
        let swap = |r: &RegionName| if r == var { with.clone() } else { r.clone() };
        match self {
            Type::Base(_) | Type::Unit => self.clone(),
            Type::Fn { param, input, output, result } => Type::Fn {
                param: Box::new(param.subst_region(var, with)),
                input: input.subst_region(var, with),
                output: output.subst_region(var, with),
                result: Box::new(result.subst_region(var, with)),
            },
            Type::Poly(v, body) => {
                let bound = RegionName::Var(v.clone());
                if &bound == var {
                    return self.clone();
                }
                if &bound == with {
                    let fresh = fresh_region_var(v, |c| {
                        let n = RegionName::Var(c.to_string());
                        body.free_regions().contains(&n) || &n == with || &n == var
                    });
                    let renamed = body.subst_region(&bound, &RegionName::Var(fresh.clone()));
                    return Type::Poly(fresh, Box::new(renamed.subst_region(var, with)));
                }
                Type::Poly(v.clone(), Box::new(body.subst_region(var, with)))
            }
            Type::Ref(t, r) => Type::Ref(Box::new(t.subst_region(var, with)), swap(r)),
            Type::Rgn(r) => Type::Rgn(swap(r)),
        }
    }

    /// Whether instantiating `var` with `with` anywhere inside this type
    /// would alias a pure capability.
    pub fn alias_conflict(&self, var: &RegionName, with: &RegionName) -> bool {
        match self {
            Type::Base(_) | Type::Unit | Type::Ref(..) | Type::Rgn(_) => false,
            Type::Fn { param, input, output, result } => {
                input.alias_conflict(var, with)
                    || output.alias_conflict(var, with)
                    || param.alias_conflict(var, with)
                    || result.alias_conflict(var, with)
            }
            Type::Poly(v, body) => {
                if &RegionName::Var(v.clone()) == var {
                    false
                } else {
                    body.alias_conflict(var, with)
                }
            }
        }
    }

    /// Equality up to renaming of `∀`-bound region variables.
    pub fn alpha_eq(&self, other: &Type) -> bool {
        match (self, other) {
            (Type::Poly(a, ta), Type::Poly(b, tb)) => {
                if a == b {
                    return ta.alpha_eq(tb);
                }
                let fresh = fresh_region_var(a, |c| {
                    let n = RegionName::Var(c.to_string());
                    ta.free_regions().contains(&n) || tb.free_regions().contains(&n)
                });
                let f = RegionName::Var(fresh);
                ta.subst_region(&RegionName::Var(a.clone()), &f)
                    .alpha_eq(&tb.subst_region(&RegionName::Var(b.clone()), &f))
            }
            (
                Type::Fn { param: p1, input: i1, output: o1, result: r1 },
                Type::Fn { param: p2, input: i2, output: o2, result: r2 },
            ) => p1.alpha_eq(p2) && i1 == i2 && o1 == o2 && r1.alpha_eq(r2),
            (Type::Ref(t1, r1), Type::Ref(t2, r2)) => r1 == r2 && t1.alpha_eq(t2),
            _ => self == other,
        }
    }
}

/// Appends primes to `base` until `taken` rejects the candidate.
pub fn fresh_region_var(base: &str, taken: impl Fn(&str) -> bool) -> String {
    let mut cand = format!("{base}'");
    while taken(&cand) {
        cand.push('\'');
    }
    cand
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Base(BaseType::Int) => f.write_str("int"),
            Type::Base(BaseType::Bool) => f.write_str("bool"),
            Type::Unit => f.write_str("unit"),
            Type::Fn { param, input, output, result } => {
                write!(f, "fn({param})")?;
                if !(input.is_empty() && output.is_empty()) {
                    write!(f, " @ [{input} -> {output}]")?;
                }
                write!(f, " -> {result}")
            }
            Type::Poly(v, body) => write!(f, "∀{v}. {body}"),
            Type::Ref(t, r) => write!(f, "ref({t}, {r})"),
            Type::Rgn(r) => write!(f, "rgn({r})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CapOp {
    RgPlus,
    RgMinus,
    LkPlus,
    LkMinus,
}

impl CapOp {
    pub fn keyword(self) -> &'static str {
        match self {
            CapOp::RgPlus => "share",
            CapOp::RgMinus => "free",
            CapOp::LkPlus => "lock",
            CapOp::LkMinus => "unlock",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Const {
    Int(i64),
    Bool(bool),
    Unit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrimOp {
    Add,
    Sub,
    Lt,
    Eq,
}

impl PrimOp {
    pub fn symbol(self) -> &'static str {
        match self {
            PrimOp::Add => "+",
            PrimOp::Sub => "-",
            PrimOp::Lt => "<",
            PrimOp::Eq => "==",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CallingMode {
    Seq,
    /// Spawn. The transfer effect is filled in by the checker when omitted.
    Par(Option<Effect>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LambdaSig {
    pub param_ty: Type,
    pub input: Effect,
    pub output: Effect,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lambda {
    pub param: String,
    /// `None` only for the lambda a `let` desugars to, until the checker
    /// elaborates it.
    pub sig: Option<LambdaSig>,
    pub body: Expr,
}

/// Source position of a node: start line/column and end line/column, all
/// 1-based. Synthetic nodes carry the default (all zero).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Loc {
    pub line: u32,
    pub col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExprKind {
    Var(String),
    Const(Const),
    Prim(PrimOp, Box<Expr>, Box<Expr>),
    Lambda(Box<Lambda>),
    RegionLambda(String, Box<Expr>),
    App(Box<Expr>, Box<Expr>, CallingMode),
    RegionApp(Box<Expr>, RegionName),
    NewRef(Box<Expr>, Box<Expr>),
    Deref(Box<Expr>),
    Assign(Box<Expr>, Box<Expr>),
    NewRgn {
        var: String,
        handle: String,
        parent: Box<Expr>,
        body: Box<Expr>,
    },
    Cap(CapOp, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Seq(Box<Expr>, Box<Expr>),
    While(Box<Expr>, Box<Expr>),
    /// Run-time only: a region handle value.
    RgnVal(RegionId),
    /// Run-time only: a location value.
    LocVal(LocationId),
    /// Run-time only: the body of a function call in progress.
    Ret(Box<Expr>),
}

/// An expression node. Equality ignores source locations.
#[derive(Clone, Debug, Eq, Serialize, Deserialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub loc: Loc,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl std::hash::Hash for Expr {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.kind.hash(state)
    }
}

impl From<ExprKind> for Expr {
    fn from(kind: ExprKind) -> Self {
        Expr { kind, loc: Loc::default() }
    }
}

fn bx(e: Expr) -> Box<Expr> {
    Box::new(e)
}

impl Expr {
    pub fn new(kind: ExprKind, loc: Loc) -> Self {
        Expr { kind, loc }
    }

    pub fn var(name: impl Into<String>) -> Expr {
        ExprKind::Var(name.into()).into()
    }

    pub fn int(n: i64) -> Expr {
        ExprKind::Const(Const::Int(n)).into()
    }

    pub fn bool(b: bool) -> Expr {
        ExprKind::Const(Const::Bool(b)).into()
    }

    pub fn unit() -> Expr {
        ExprKind::Const(Const::Unit).into()
    }

    pub fn lambda(param: impl Into<String>, sig: Option<LambdaSig>, body: Expr) -> Expr {
        ExprKind::Lambda(Box::new(Lambda { param: param.into(), sig, body })).into()
    }

    pub fn rlambda(var: impl Into<String>, body: Expr) -> Expr {
        ExprKind::RegionLambda(var.into(), bx(body)).into()
    }

    pub fn app(f: Expr, arg: Expr) -> Expr {
        ExprKind::App(bx(f), bx(arg), CallingMode::Seq).into()
    }

    pub fn spawn(f: Expr, arg: Expr, transfer: Option<Effect>) -> Expr {
        ExprKind::App(bx(f), bx(arg), CallingMode::Par(transfer)).into()
    }

    pub fn rapp(f: Expr, r: RegionName) -> Expr {
        ExprKind::RegionApp(bx(f), r).into()
    }

    pub fn new_ref(init: Expr, handle: Expr) -> Expr {
        ExprKind::NewRef(bx(init), bx(handle)).into()
    }

    pub fn deref(e: Expr) -> Expr {
        ExprKind::Deref(bx(e)).into()
    }

    pub fn assign(l: Expr, r: Expr) -> Expr {
        ExprKind::Assign(bx(l), bx(r)).into()
    }

    pub fn newrgn(var: impl Into<String>, handle: impl Into<String>, parent: Expr, body: Expr) -> Expr {
        ExprKind::NewRgn { var: var.into(), handle: handle.into(), parent: bx(parent), body: bx(body) }.into()
    }

    pub fn cap(op: CapOp, h: Expr) -> Expr {
        ExprKind::Cap(op, bx(h)).into()
    }

    pub fn seq(a: Expr, b: Expr) -> Expr {
        ExprKind::Seq(bx(a), bx(b)).into()
    }

    pub fn if_(c: Expr, t: Expr, e: Expr) -> Expr {
        ExprKind::If(bx(c), bx(t), bx(e)).into()
    }

    pub fn while_(c: Expr, b: Expr) -> Expr {
        ExprKind::While(bx(c), bx(b)).into()
    }

    pub fn prim(op: PrimOp, a: Expr, b: Expr) -> Expr {
        ExprKind::Prim(op, bx(a), bx(b)).into()
    }

    pub fn rgn_val(r: RegionId) -> Expr {
        ExprKind::RgnVal(r).into()
    }

    pub fn loc_val(l: LocationId) -> Expr {
        ExprKind::LocVal(l).into()
    }

    pub fn let_(x: impl Into<String>, bound: Expr, body: Expr) -> Expr {
        Expr::app(Expr::lambda(x, None, body), bound)
    }

    pub fn at(mut self, loc: Loc) -> Expr {
        self.loc = loc;
        self
    }

    pub fn is_value(&self) -> bool {
        matches!(
            self.kind,
            ExprKind::Const(_)
                | ExprKind::Lambda(_)
                | ExprKind::RegionLambda(..)
                | ExprKind::RgnVal(_)
                | ExprKind::LocVal(_)
        )
    }

    pub fn is_unit(&self) -> bool {
        matches!(self.kind, ExprKind::Const(Const::Unit))
    }

    /// Direct subexpressions, in evaluation order.
    pub fn children(&self) -> Vec<&Expr> {
        use ExprKind::*;
        match &self.kind {
            Var(_) | Const(_) | RgnVal(_) | LocVal(_) => vec![],
            Lambda(l) => vec![&l.body],
            RegionLambda(_, b) | Deref(b) | Cap(_, b) | Ret(b) | RegionApp(b, _) => vec![b],
            Prim(_, a, b) | App(a, b, _) | NewRef(a, b) | Assign(a, b) | Seq(a, b) | While(a, b) => {
                vec![a, b]
            }
            NewRgn { parent, body, .. } => vec![parent, body],
            If(c, t, e) => vec![c, t, e],
        }
    }

    pub fn child_mut(&mut self, i: usize) -> Option<&mut Expr> {
        use ExprKind::*;
        match (&mut self.kind, i) {
            (Lambda(l), 0) => Some(&mut l.body),
            (RegionLambda(_, b) | Deref(b) | Cap(_, b) | Ret(b) | RegionApp(b, _), 0) => Some(b),
            (Prim(_, a, _) | App(a, _, _) | NewRef(a, _) | Assign(a, _) | Seq(a, _) | While(a, _), 0) => {
                Some(a)
            }
            (Prim(_, _, b) | App(_, b, _) | NewRef(_, b) | Assign(_, b) | Seq(_, b) | While(_, b), 1) => {
                Some(b)
            }
            (NewRgn { parent, .. }, 0) => Some(parent),
            (NewRgn { body, .. }, 1) => Some(body),
            (If(c, _, _), 0) => Some(c),
            (If(_, t, _), 1) => Some(t),
            (If(_, _, e), 2) => Some(e),
            _ => None,
        }
    }

    /// Whether any run-time-only node occurs in this expression.
    pub fn has_runtime_forms(&self) -> bool {
        matches!(self.kind, ExprKind::RgnVal(_) | ExprKind::LocVal(_) | ExprKind::Ret(_))
            || self.children().into_iter().any(Expr::has_runtime_forms)
    }

    /// Free term variables.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free_vars(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free_vars(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match &self.kind {
            ExprKind::Var(x) => {
                if !bound.contains(x) {
                    out.insert(x.clone());
                }
            }
            ExprKind::Lambda(l) => {
                bound.push(l.param.clone());
                l.body.collect_free_vars(bound, out);
                bound.pop();
            }
            ExprKind::NewRgn { handle, parent, body, .. } => {
                parent.collect_free_vars(bound, out);
                bound.push(handle.clone());
                body.collect_free_vars(bound, out);
                bound.pop();
            }
            _ => {
                for c in self.children() {
                    c.collect_free_vars(bound, out);
                }
            }
        }
    }

    /// Free region variables, including those inside annotations.
    pub fn free_region_vars(&self) -> BTreeSet<String> {
        let mut names = BTreeSet::new();
        self.collect_regions(&mut names);
        names
            .into_iter()
            .filter_map(|r| match r {
                RegionName::Var(v) => Some(v),
                RegionName::Lit(_) => None,
            })
            .collect()
    }

    fn collect_regions(&self, out: &mut BTreeSet<RegionName>) {
        match &self.kind {
            ExprKind::Lambda(l) => {
                if let Some(sig) = &l.sig {
                    out.extend(sig.param_ty.free_regions());
                    out.extend(sig.input.free_regions());
                    out.extend(sig.output.free_regions());
                }
                l.body.collect_regions(out);
            }
            ExprKind::RegionLambda(v, b) => {
                let mut inner = BTreeSet::new();
                b.collect_regions(&mut inner);
                inner.remove(&RegionName::Var(v.clone()));
                out.extend(inner);
            }
            ExprKind::NewRgn { var, parent, body, .. } => {
                parent.collect_regions(out);
                let mut inner = BTreeSet::new();
                body.collect_regions(&mut inner);
                inner.remove(&RegionName::Var(var.clone()));
                out.extend(inner);
            }
            ExprKind::RegionApp(f, r) => {
                f.collect_regions(out);
                out.insert(r.clone());
            }
            ExprKind::App(f, a, mode) => {
                f.collect_regions(out);
                a.collect_regions(out);
                if let CallingMode::Par(Some(eff)) = mode {
                    out.extend(eff.free_regions());
                }
            }
            ExprKind::RgnVal(id) => {
                out.insert(RegionName::Lit(*id));
            }
            ExprKind::LocVal(l) => {
                out.insert(RegionName::Lit(l.region));
            }
            _ => {
                for c in self.children() {
                    c.collect_regions(out);
                }
            }
        }
    }

    /// Substitutes the closed value `with` for free occurrences of `name`.
    pub fn subst_var(&self, name: &str, with: &Expr) -> Expr {
        let kind = match &self.kind {
            ExprKind::Var(x) if x == name => return with.clone(),
            ExprKind::Lambda(l) if l.param == name => return self.clone(),
            ExprKind::Lambda(l) => ExprKind::Lambda(Box::new(Lambda {
                param: l.param.clone(),
                sig: l.sig.clone(),
                body: l.body.subst_var(name, with),
            })),
            ExprKind::NewRgn { var, handle, parent, body } => ExprKind::NewRgn {
                var: var.clone(),
                handle: handle.clone(),
                parent: bx(parent.subst_var(name, with)),
                body: if handle == name { body.clone() } else { bx(body.subst_var(name, with)) },
            },
            _ => return self.map_children(|c| c.subst_var(name, with)),
        };
        Expr { kind, loc: self.loc }
    }

    /// Capture-avoiding substitution of region variable `var` by `with`,
    /// reaching into every annotation.
    pub fn subst_region(&self, var: &RegionName, with: &RegionName) -> Expr {
        let kind = match &self.kind {
            ExprKind::Lambda(l) => ExprKind::Lambda(Box::new(Lambda {
                param: l.param.clone(),
                sig: l.sig.as_ref().map(|s| LambdaSig {
                    param_ty: s.param_ty.subst_region(var, with),
                    input: s.input.subst_region(var, with),
                    output: s.output.subst_region(var, with),
                }),
                body: l.body.subst_region(var, with),
            })),
            ExprKind::RegionLambda(v, b) => {
                let bound = RegionName::Var(v.clone());
                if &bound == var {
                    return self.clone();
                }
                let (v2, b2) = self.avoid_capture(v, b, with);
                ExprKind::RegionLambda(v2, bx(b2.subst_region(var, with)))
            }
            ExprKind::NewRgn { var: v, handle, parent, body } => {
                let bound = RegionName::Var(v.clone());
                let parent = bx(parent.subst_region(var, with));
                if &bound == var {
                    ExprKind::NewRgn { var: v.clone(), handle: handle.clone(), parent, body: body.clone() }
                } else {
                    let (v2, b2) = self.avoid_capture(v, body, with);
                    ExprKind::NewRgn {
                        var: v2,
                        handle: handle.clone(),
                        parent,
                        body: bx(b2.subst_region(var, with)),
                    }
                }
            }
            ExprKind::RegionApp(f, r) => ExprKind::RegionApp(
                bx(f.subst_region(var, with)),
                if r == var { with.clone() } else { r.clone() },
            ),
            ExprKind::App(f, a, mode) => ExprKind::App(
                bx(f.subst_region(var, with)),
                bx(a.subst_region(var, with)),
                match mode {
                    CallingMode::Par(Some(eff)) => CallingMode::Par(Some(eff.subst_region(var, with))),
                    m => m.clone(),
                },
            ),
            _ => return self.map_children(|c| c.subst_region(var, with)),
        };
        Expr { kind, loc: self.loc }
    }

    fn avoid_capture(&self, bound: &str, body: &Expr, with: &RegionName) -> (String, Expr) {
        if &RegionName::Var(bound.to_string()) != with {
            return (bound.to_string(), body.clone());
        }
        let used = body.free_region_vars();
        let fresh = fresh_region_var(bound, |c| used.contains(c) || c == bound);
        let renamed = body.subst_region(&RegionName::Var(bound.to_string()), &RegionName::Var(fresh.clone()));
        (fresh, renamed)
    }

    /// Rebuilds this node with every direct child mapped through `f`.
    /// Binders are left untouched, so callers handle them first.
    pub fn map_children(&self, mut f: impl FnMut(&Expr) -> Expr) -> Expr {
        use ExprKind::*;
        let kind = match &self.kind {
            Var(_) | Const(_) | RgnVal(_) | LocVal(_) => self.kind.clone(),
            Lambda(l) => Lambda(Box::new(self::Lambda { param: l.param.clone(), sig: l.sig.clone(), body: f(&l.body) })),
            RegionLambda(v, b) => RegionLambda(v.clone(), bx(f(b))),
            Prim(op, a, b) => Prim(*op, bx(f(a)), bx(f(b))),
            App(a, b, m) => App(bx(f(a)), bx(f(b)), m.clone()),
            RegionApp(a, r) => RegionApp(bx(f(a)), r.clone()),
            NewRef(a, b) => NewRef(bx(f(a)), bx(f(b))),
            Deref(a) => Deref(bx(f(a))),
            Assign(a, b) => Assign(bx(f(a)), bx(f(b))),
            NewRgn { var, handle, parent, body } => {
                NewRgn { var: var.clone(), handle: handle.clone(), parent: bx(f(parent)), body: bx(f(body)) }
            }
            Cap(op, a) => Cap(*op, bx(f(a))),
            If(c, t, e) => If(bx(f(c)), bx(f(t)), bx(f(e))),
            Seq(a, b) => Seq(bx(f(a)), bx(f(b))),
            While(a, b) => While(bx(f(a)), bx(f(b))),
            Ret(a) => Ret(bx(f(a))),
        };
        Expr { kind, loc: self.loc }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(s: &str) -> RegionName {
        RegionName::var(s)
    }

    fn lit(n: u32) -> RegionName {
        RegionName::Lit(RegionId(n))
    }

    #[test]
    fn subst_region_replaces_occurrence() {
        let t = Type::Ref(Box::new(Type::int()), rv("ρ1"));
        assert_eq!(t.subst_region(&rv("ρ1"), &lit(3)), Type::Ref(Box::new(Type::int()), lit(3)));
    }

    #[test]
    fn subst_region_leaves_other_vars() {
        let t = Type::Ref(Box::new(Type::int()), rv("ρ2"));
        assert_eq!(t.subst_region(&rv("ρ1"), &lit(3)), t);
    }

    #[test]
    fn subst_region_respects_shadowing() {
        let t = Type::Poly("ρ1".into(), Box::new(Type::Ref(Box::new(Type::int()), rv("ρ1"))));
        assert_eq!(t.subst_region(&rv("ρ1"), &lit(3)), t);
    }

    #[test]
    fn subst_region_avoids_capture() {
        // ∀ρ2. ref(int, ρ1) with ρ1 := ρ2 must not capture
        let t = Type::Poly("ρ2".into(), Box::new(Type::Ref(Box::new(Type::int()), rv("ρ1"))));
        let s = t.subst_region(&rv("ρ1"), &rv("ρ2"));
        match &s {
            Type::Poly(v, body) => {
                assert_ne!(v, "ρ2");
                assert_eq!(**body, Type::Ref(Box::new(Type::int()), rv("ρ2")));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn subst_var_cases() {
        let five = Expr::int(5);
        assert_eq!(Expr::var("x").subst_var("x", &five), five);
        assert_eq!(Expr::var("y").subst_var("x", &five), Expr::var("y"));
        let sig = LambdaSig { param_ty: Type::int(), input: Effect::new(), output: Effect::new() };
        let lam = Expr::lambda("x", Some(sig), Expr::var("x"));
        assert_eq!(lam.subst_var("x", &five), lam);
    }

    #[test]
    fn free_regions_of_types() {
        assert_eq!(
            Type::Ref(Box::new(Type::int()), rv("ρ")).free_regions(),
            [rv("ρ")].into_iter().collect()
        );
        assert!(Type::Unit.free_regions().is_empty());
        let f = Type::Fn {
            param: Box::new(Type::int()),
            input: Effect::new().with(rv("ρ1"), Capability::pure(1, 1), Parent::Region(rv("ρH"))),
            output: Effect::new(),
            result: Box::new(Type::Unit),
        };
        assert_eq!(f.free_regions(), [rv("ρ1"), rv("ρH")].into_iter().collect());
    }

    #[test]
    fn effect_merge_on_alias() {
        let eff = Effect::new()
            .with(rv("ρ1"), Capability::impure(1, 1), Parent::Unknown)
            .with(rv("ρ2"), Capability::impure(1, 1), Parent::Unknown);
        let merged = eff.subst_region(&rv("ρ1"), &rv("ρ")).subst_region(&rv("ρ2"), &rv("ρ"));
        assert_eq!(merged, Effect::new().with(rv("ρ"), Capability::impure(2, 2), Parent::Unknown));
        let pure = Effect::new()
            .with(rv("ρ1"), Capability::pure(1, 1), Parent::Unknown)
            .with(rv("ρ2"), Capability::impure(1, 1), Parent::Unknown);
        assert!(pure.alias_conflict(&rv("ρ1"), &rv("ρ2")));
    }

    #[test]
    fn well_formedness_detects_dead_parent_and_cycles() {
        let ok = Effect::new()
            .with(rv("ρH"), Capability::pure(1, 0), Parent::Bottom)
            .with(rv("ρ"), Capability::pure(1, 1), Parent::Region(rv("ρH")));
        assert!(ok.well_formed().is_ok());
        let dangling = Effect::new().with(rv("ρ"), Capability::pure(1, 1), Parent::Region(rv("ρH")));
        assert!(dangling.well_formed().is_err());
        let cyc = Effect::new()
            .with(rv("a"), Capability::pure(1, 1), Parent::Region(rv("b")))
            .with(rv("b"), Capability::pure(1, 1), Parent::Region(rv("a")));
        assert!(cyc.well_formed().is_err());
    }

    #[test]
    fn alpha_equivalence_of_poly_types() {
        let a = Type::Poly("ρ".into(), Box::new(Type::Rgn(rv("ρ"))));
        let b = Type::Poly("σ".into(), Box::new(Type::Rgn(rv("σ"))));
        assert!(a.alpha_eq(&b));
        assert_ne!(a, b);
    }
}
