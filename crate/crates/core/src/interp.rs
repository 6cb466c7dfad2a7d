//! Small-step execution: expression steps inside evaluation contexts, thread
//! steps, a seeded random scheduler and exhaustive interleaving search.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ast::{
    CallingMode, Const as Lit, Effect, Expr, ExprKind, LocationId, PrimOp, RegionId, RegionName, ThreadId,
};
use crate::pretty::pretty;
use crate::store::{Blocked, CapOutcome, Fault, Store};

pub const MAIN_THREAD: ThreadId = ThreadId(1);
pub const DEFAULT_MAX_STEPS: usize = 10_000;
pub const DEFAULT_MAX_THREADS: usize = 3;
pub const DEFAULT_MAX_STATES: usize = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Rule {
    #[serde(rename = "E-A")]
    App,
    #[serde(rename = "E-RP")]
    RegionApp,
    #[serde(rename = "E-NR")]
    NewRef,
    #[serde(rename = "E-AS")]
    Assign,
    #[serde(rename = "E-D")]
    Deref,
    #[serde(rename = "E-NG")]
    NewRgn,
    #[serde(rename = "E-C")]
    Cap,
    #[serde(rename = "E-RET")]
    Ret,
    #[serde(rename = "E-IF")]
    If,
    #[serde(rename = "E-SEQ")]
    Seq,
    #[serde(rename = "E-WHILE")]
    While,
    #[serde(rename = "E-PRIM")]
    Prim,
    #[serde(rename = "E-SN")]
    Spawn,
    #[serde(rename = "E-T")]
    Done,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::App => "E-A",
            Rule::RegionApp => "E-RP",
            Rule::NewRef => "E-NR",
            Rule::Assign => "E-AS",
            Rule::Deref => "E-D",
            Rule::NewRgn => "E-NG",
            Rule::Cap => "E-C",
            Rule::Ret => "E-RET",
            Rule::If => "E-IF",
            Rule::Seq => "E-SEQ",
            Rule::While => "E-WHILE",
            Rule::Prim => "E-PRIM",
            Rule::Spawn => "E-SN",
            Rule::Done => "E-T",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The definitions a program runs against.
#[derive(Clone, Debug, Default)]
pub struct Runtime {
    pub defs: BTreeMap<String, Expr>,
}

impl Runtime {
    pub fn new(defs: impl IntoIterator<Item = (String, Expr)>) -> Self {
        Runtime { defs: defs.into_iter().collect() }
    }

    pub fn from_program(p: &crate::parser::Program) -> Self {
        Runtime::new(p.defs.iter().map(|d| (d.name.clone(), d.body.clone())))
    }

    pub fn from_typed(p: &crate::typeck::TypedProgram) -> Self {
        Runtime::new(p.defs.iter().map(|d| (d.name.clone(), d.body.clone())))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    pub store: Store,
    pub threads: BTreeMap<ThreadId, Expr>,
    pub next_thread: u32,
}

impl Config {
    /// The heap owned by the main thread with counts (1,0), and the main
    /// thread about to call `main[ιH](rgn ιH)`.
    pub fn initial() -> Self {
        let heap = RegionName::Lit(RegionId::HEAP);
        let body = Expr::app(Expr::rapp(Expr::var("main"), heap), Expr::rgn_val(RegionId::HEAP));
        Config {
            store: Store::new(MAIN_THREAD),
            threads: [(MAIN_THREAD, body)].into_iter().collect(),
            next_thread: MAIN_THREAD.0 + 1,
        }
    }

    /// Canonical text, with threads and regions in id order.
    pub fn canonical(&self) -> String {
        let mut out = self.store.canonical();
        out.push_str(&format!("threads next {}\n", self.next_thread));
        for (t, e) in &self.threads {
            out.push_str(&format!("{t}: {}\n", pretty(e)));
        }
        out
    }

    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// How many leading children of a node are evaluated before the node.
fn evaluated_children(e: &Expr) -> usize {
    use ExprKind::*;
    match &e.kind {
        Var(_) | Const(_) | RgnVal(_) | LocVal(_) | Lambda(_) | RegionLambda(..) | While(..) => 0,
        Deref(_) | Cap(..) | RegionApp(..) | Ret(_) | NewRgn { .. } | If(..) | Seq(..) => 1,
        Prim(..) | App(..) | NewRef(..) | Assign(..) => 2,
    }
}

/// Where the next step happens in `e`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Redex {
    /// Child indices from the root to the redex.
    pub path: Vec<usize>,
    /// Number of call frames (`ret` nodes) strictly above the redex.
    pub depth: usize,
}

impl Runtime {
    /// Values, counting references to definitions.
    pub fn is_value(&self, e: &Expr) -> bool {
        e.is_value() || matches!(&e.kind, ExprKind::Var(x) if self.defs.contains_key(x))
    }

    /// A function value with definition names looked up.
    fn resolve<'a>(&'a self, e: &'a Expr) -> &'a Expr {
        match &e.kind {
            ExprKind::Var(x) => self.defs.get(x).unwrap_or(e),
            _ => e,
        }
    }
}

/// Left-to-right call-by-value decomposition; `None` for values.
pub fn decompose(rt: &Runtime, e: &Expr) -> Option<Redex> {
    if rt.is_value(e) {
        return None;
    }
    let (mut path, mut depth, mut cur) = (Vec::new(), 0, e);
    loop {
        let kids = cur.children();
        match kids[..evaluated_children(cur)].iter().position(|c| !rt.is_value(c)) {
            Some(i) => {
                if matches!(cur.kind, ExprKind::Ret(_)) {
                    depth += 1;
                }
                path.push(i);
                cur = kids[i];
            }
            None => return Some(Redex { path, depth }),
        }
    }
}

pub fn subterm<'a>(e: &'a Expr, path: &[usize]) -> &'a Expr {
    path.iter().fold(e, |cur, i| cur.children()[*i])
}

fn subterm_mut<'a>(e: &'a mut Expr, path: &[usize]) -> &'a mut Expr {
    let mut cur = e;
    for i in path {
        cur = cur.child_mut(*i).expect("path into evaluated position");
    }
    cur
}

/// Why an expression could not step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Halt {
    Blocked(Blocked),
    Fault(Fault),
}

impl From<Fault> for Halt {
    fn from(f: Fault) -> Self {
        Halt::Fault(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepInfo {
    pub rule: Rule,
    pub redex: Redex,
    /// The redex before the step.
    pub before: Expr,
    pub fresh_region: Option<RegionId>,
    pub fresh_loc: Option<LocationId>,
}

fn malformed(e: &Expr) -> Fault {
    Fault::MalformedTerm(pretty(e))
}

fn region_of(e: &Expr) -> Result<RegionId, Fault> {
    match e.kind {
        ExprKind::RgnVal(r) => Ok(r),
        _ => Err(malformed(e)),
    }
}

fn loc_of(e: &Expr) -> Result<LocationId, Fault> {
    match e.kind {
        ExprKind::LocVal(l) => Ok(l),
        _ => Err(malformed(e)),
    }
}

/// One expression-level step of thread `n` on the redex `r`.
fn step_redex(
    rt: &Runtime,
    store: &mut Store,
    n: ThreadId,
    r: &Expr,
) -> Result<(Expr, Rule, Option<RegionId>, Option<LocationId>), Halt> {
    use ExprKind::*;
    let loc = r.loc;
    let plain = |e: Expr, rule| Ok((e, rule, None, None));
    match &r.kind {
        App(f, a, CallingMode::Seq) => match &rt.resolve(f).kind {
            Lambda(l) => {
                let body = l.body.subst_var(&l.param, a);
                if rt.is_value(&body) {
                    plain(body, Rule::App)
                } else {
                    plain(Expr::new(Ret(Box::new(body)), loc), Rule::App)
                }
            }
            _ => Err(malformed(r).into()),
        },
        App(_, _, CallingMode::Par(_)) => Err(malformed(r).into()),
        RegionApp(f, reg) => match (&rt.resolve(f).kind, reg) {
            (RegionLambda(v, body), RegionName::Lit(_)) => {
                plain(body.subst_region(&RegionName::Var(v.clone()), reg), Rule::RegionApp)
            }
            _ => Err(malformed(r).into()),
        },
        NewRef(v, h) => {
            let l = store.alloc(region_of(h)?, (**v).clone())?;
            Ok((Expr::new(LocVal(l), loc), Rule::NewRef, None, Some(l)))
        }
        Deref(x) => plain(store.lookup(loc_of(x)?, n)?, Rule::Deref),
        Assign(x, v) => {
            store.update(loc_of(x)?, (**v).clone(), n)?;
            plain(Expr::unit().at(loc), Rule::Assign)
        }
        NewRgn { var, handle, parent, body } => {
            let j = store.newrgn(region_of(parent)?, n)?;
            let body = body.subst_region(&RegionName::Var(var.clone()), &RegionName::Lit(j));
            let body = body.subst_var(handle, &Expr::rgn_val(j));
            Ok((body, Rule::NewRgn, Some(j), None))
        }
        Cap(op, h) => match store.updcap(*op, region_of(h)?, n)? {
            CapOutcome::Done => plain(Expr::unit().at(loc), Rule::Cap),
            CapOutcome::Blocked(b) => Err(Halt::Blocked(b)),
        },
        If(c, t, e) => match c.kind {
            Const(Lit::Bool(true)) => plain((**t).clone(), Rule::If),
            Const(Lit::Bool(false)) => plain((**e).clone(), Rule::If),
            _ => Err(malformed(r).into()),
        },
        Seq(_, b) => plain((**b).clone(), Rule::Seq),
        While(c, b) => {
            let again = Expr::new(Seq(b.clone(), Box::new(r.clone())), loc);
            plain(Expr::new(If(c.clone(), Box::new(again), Box::new(Expr::unit().at(loc))), loc), Rule::While)
        }
        Prim(op, a, b) => {
            let v = match (op, &a.kind, &b.kind) {
                (PrimOp::Add, Const(Lit::Int(x)), Const(Lit::Int(y))) => Lit::Int(x.wrapping_add(*y)),
                (PrimOp::Sub, Const(Lit::Int(x)), Const(Lit::Int(y))) => Lit::Int(x.wrapping_sub(*y)),
                (PrimOp::Lt, Const(Lit::Int(x)), Const(Lit::Int(y))) => Lit::Bool(x < y),
                (PrimOp::Eq, Const(x), Const(y)) => Lit::Bool(x == y),
                _ => return Err(malformed(r).into()),
            };
            plain(Expr::new(Const(v), loc), Rule::Prim)
        }
        Ret(v) => plain((**v).clone(), Rule::Ret),
        Var(_) | Const(_) | Lambda(_) | RegionLambda(..) | RgnVal(_) | LocVal(_) => Err(malformed(r).into()),
    }
}

/// The store piece named by a spawn annotation.
pub fn transfer_piece(g: &Effect) -> Result<BTreeMap<RegionId, (u32, u32)>, Fault> {
    g.iter()
        .map(|(r, e)| match r {
            RegionName::Lit(id) => Ok((*id, e.cap.counts())),
            RegionName::Var(v) => Err(Fault::MalformedTerm(format!("spawn transfer names region variable {v}"))),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Stepped { config: Config, thread: ThreadId, info: StepInfo },
    ThreadDone { config: Config, thread: ThreadId },
    Spawned { config: Config, parent: ThreadId, child: ThreadId, transferred: Effect, info: StepInfo },
    Blocked { thread: ThreadId, waiting_on: Blocked },
    Stuck { thread: ThreadId, fault: Fault },
}

impl StepOutcome {
    pub fn config(&self) -> Option<&Config> {
        match self {
            StepOutcome::Stepped { config, .. }
            | StepOutcome::ThreadDone { config, .. }
            | StepOutcome::Spawned { config, .. } => Some(config),
            _ => None,
        }
    }

    pub fn rule(&self) -> Option<Rule> {
        match self {
            StepOutcome::Stepped { info, .. } | StepOutcome::Spawned { info, .. } => Some(info.rule),
            StepOutcome::ThreadDone { .. } => Some(Rule::Done),
            _ => None,
        }
    }

    pub fn is_blocked(&self) -> bool {
        matches!(self, StepOutcome::Blocked { .. })
    }
}

/// One step of thread `n`.
pub fn step_thread(rt: &Runtime, c: &Config, n: ThreadId) -> StepOutcome {
    let Some(e) = c.threads.get(&n) else {
        return StepOutcome::Stuck { thread: n, fault: Fault::MalformedTerm(format!("no thread {n}")) };
    };
    let Some(redex) = decompose(rt, e) else {
        if e.is_unit() {
            let mut config = c.clone();
            config.threads.remove(&n);
            return StepOutcome::ThreadDone { config, thread: n };
        }
        return StepOutcome::Stuck { thread: n, fault: malformed(e) };
    };
    let r = subterm(e, &redex.path);
    if let ExprKind::App(f, a, CallingMode::Par(transfer)) = &r.kind {
        if !matches!(rt.resolve(f).kind, ExprKind::Lambda(_)) {
            return StepOutcome::Stuck { thread: n, fault: malformed(r) };
        }
        let transferred = transfer.clone().unwrap_or_default();
        let mut config = c.clone();
        let child = ThreadId(config.next_thread);
        config.next_thread += 1;
        let moved = transfer_piece(&transferred).and_then(|p| config.store.transfer(n, child, &p));
        if let Err(fault) = moved {
            return StepOutcome::Stuck { thread: n, fault };
        }
        let body = Expr::new(ExprKind::App(f.clone(), a.clone(), CallingMode::Seq), r.loc);
        config.threads.insert(child, body);
        let mut e2 = e.clone();
        *subterm_mut(&mut e2, &redex.path) = Expr::unit().at(r.loc);
        config.threads.insert(n, e2);
        let info = StepInfo { rule: Rule::Spawn, redex, before: r.clone(), fresh_region: None, fresh_loc: None };
        return StepOutcome::Spawned { config, parent: n, child, transferred, info };
    }
    let mut config = c.clone();
    match step_redex(rt, &mut config.store, n, r) {
        Ok((new, rule, fresh_region, fresh_loc)) => {
            let mut e2 = e.clone();
            *subterm_mut(&mut e2, &redex.path) = new;
            config.threads.insert(n, e2);
            let info = StepInfo { rule, redex, before: r.clone(), fresh_region, fresh_loc };
            StepOutcome::Stepped { config, thread: n, info }
        }
        Err(Halt::Blocked(b)) => StepOutcome::Blocked { thread: n, waiting_on: b },
        Err(Halt::Fault(fault)) => StepOutcome::Stuck { thread: n, fault },
    }
}

/// Outcomes of stepping each thread from `c`.
pub fn all_outcomes(rt: &Runtime, c: &Config) -> BTreeMap<ThreadId, StepOutcome> {
    c.threads.keys().map(|n| (*n, step_thread(rt, c, *n))).collect()
}

/// A cycle in the wait-for graph, if the blocked threads form one.
pub fn detect_deadlock(waiting: &BTreeMap<ThreadId, Blocked>) -> Option<Vec<ThreadId>> {
    for start in waiting.keys() {
        let mut seen = vec![*start];
        let mut cur = *start;
        while let Some(b) = waiting.get(&cur) {
            cur = b.holder;
            if let Some(pos) = seen.iter().position(|t| *t == cur) {
                let mut cycle = seen[pos..].to_vec();
                let min = cycle.iter().enumerate().min_by_key(|(_, t)| **t).map(|(i, _)| i).unwrap();
                cycle.rotate_left(min);
                return Some(cycle);
            }
            seen.push(cur);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status")]
pub enum Terminal {
    AllDone,
    Deadlock { cycle: Vec<ThreadId> },
    /// Every thread waits, but on a lock whose holder has finished.
    Orphaned { waiting: Vec<ThreadId> },
    Stuck { thread: ThreadId, fault: Fault },
    StepLimit,
    Violation { report: serde_json::Value },
}

impl Terminal {
    pub fn exit_code(&self) -> i32 {
        match self {
            Terminal::AllDone => 0,
            Terminal::Deadlock { .. } => 3,
            Terminal::Orphaned { .. } | Terminal::Stuck { .. } | Terminal::Violation { .. } => 4,
            Terminal::StepLimit => 5,
        }
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::AllDone => write!(f, "all threads done"),
            Terminal::Deadlock { cycle } => {
                let names: Vec<String> = cycle.iter().map(|t| t.to_string()).collect();
                write!(f, "deadlock: {}", names.join(" -> "))
            }
            Terminal::Orphaned { waiting } => {
                let names: Vec<String> = waiting.iter().map(|t| t.to_string()).collect();
                write!(f, "blocked on finished threads: {}", names.join(", "))
            }
            Terminal::Stuck { thread, fault } => write!(f, "stuck: thread {thread}: {} ({fault})", fault.code()),
            Terminal::StepLimit => write!(f, "step limit reached"),
            Terminal::Violation { report } => write!(f, "metatheory violation: {report}"),
        }
    }
}

/// The terminal status of a configuration where nothing can be chosen, or
/// `None` if some thread can move.
fn halted(c: &Config, outcomes: &BTreeMap<ThreadId, StepOutcome>) -> Option<Terminal> {
    if c.threads.is_empty() {
        return Some(Terminal::AllDone);
    }
    if !outcomes.values().all(StepOutcome::is_blocked) {
        return None;
    }
    let waiting: BTreeMap<ThreadId, Blocked> = outcomes
        .iter()
        .filter_map(|(t, o)| match o {
            StepOutcome::Blocked { waiting_on, .. } => Some((*t, *waiting_on)),
            _ => None,
        })
        .collect();
    Some(match detect_deadlock(&waiting) {
        Some(cycle) => Terminal::Deadlock { cycle },
        None => Terminal::Orphaned { waiting: waiting.keys().copied().collect() },
    })
}

/// Watches a run; an error ends it with a violation.
pub trait Observer: Clone {
    fn start(&mut self, _c: &Config) -> Result<(), serde_json::Value> {
        Ok(())
    }

    /// Called before thread `chosen` takes `outcomes[chosen]`.
    fn observe(
        &mut self,
        _before: &Config,
        _outcomes: &BTreeMap<ThreadId, StepOutcome>,
        _chosen: ThreadId,
    ) -> Result<(), serde_json::Value> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoObserver;

impl Observer for NoObserver {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub thread: ThreadId,
    pub rule: Rule,
    pub digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub seed: u64,
    pub steps: Vec<TraceStep>,
    pub terminal: Terminal,
}

impl Trace {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&format!("{} {} {} {}\n", s.step, s.thread, s.rule, s.digest));
        }
        out.push_str(&format!("result: {}\n", self.terminal));
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub seed: u64,
    pub max_steps: usize,
    pub snapshots: bool,
}

impl RunOptions {
    pub fn seeded(seed: u64) -> Self {
        RunOptions { seed, max_steps: DEFAULT_MAX_STEPS, snapshots: false }
    }
}

/// Runs from the initial configuration, choosing uniformly among threads
/// that are not blocked.
pub fn run_seeded<O: Observer>(rt: &Runtime, opts: RunOptions, obs: &mut O) -> Trace {
    run_from(rt, Config::initial(), opts, obs)
}

pub fn run_from<O: Observer>(rt: &Runtime, mut c: Config, opts: RunOptions, obs: &mut O) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut steps = Vec::new();
    let finish = |steps, terminal| Trace { seed: opts.seed, steps, terminal };
    if let Err(report) = obs.start(&c) {
        return finish(steps, Terminal::Violation { report });
    }
    for step in 1..=opts.max_steps {
        let outcomes = all_outcomes(rt, &c);
        if let Some(t) = halted(&c, &outcomes) {
            return finish(steps, t);
        }
        let ready: Vec<ThreadId> = outcomes.iter().filter(|(_, o)| !o.is_blocked()).map(|(t, _)| *t).collect();
        let chosen = ready[rng.gen_range(0..ready.len())];
        if let Err(report) = obs.observe(&c, &outcomes, chosen) {
            return finish(steps, Terminal::Violation { report });
        }
        let outcome = outcomes.into_iter().find(|(t, _)| *t == chosen).map(|(_, o)| o).unwrap();
        let rule = outcome.rule();
        match outcome {
            StepOutcome::Stuck { thread, fault } => return finish(steps, Terminal::Stuck { thread, fault }),
            StepOutcome::Stepped { config, .. }
            | StepOutcome::ThreadDone { config, .. }
            | StepOutcome::Spawned { config, .. } => c = config,
            StepOutcome::Blocked { .. } => unreachable!("blocked threads are not chosen"),
        }
        let snapshot = opts.snapshots.then(|| c.store.snapshot());
        steps.push(TraceStep { step, thread: chosen, rule: rule.unwrap(), digest: c.digest(), snapshot });
    }
    let outcomes = all_outcomes(rt, &c);
    let terminal = halted(&c, &outcomes).unwrap_or(Terminal::StepLimit);
    finish(steps, terminal)
}

#[derive(Clone, Copy, Debug)]
pub struct ExploreOptions {
    /// Longest schedule explored.
    pub max_steps: usize,
    pub max_threads: usize,
    pub max_states: usize,
}

impl ExploreOptions {
    pub fn new(max_steps: usize) -> Self {
        ExploreOptions { max_steps, max_threads: DEFAULT_MAX_THREADS, max_states: DEFAULT_MAX_STATES }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ExploreReport {
    pub states: usize,
    pub terminals: usize,
    pub all_done: usize,
    pub deadlocks: usize,
    pub stuck: usize,
    /// Stuck terminals by fault code.
    pub stuck_by_fault: BTreeMap<&'static str, usize>,
    pub other: usize,
    pub budget_exceeded: bool,
    /// More threads were alive at once than allowed.
    pub too_many_threads: bool,
    pub deepest: usize,
    /// Distinct terminal outcomes with one schedule reaching each.
    pub examples: Vec<(Terminal, Vec<ThreadId>)>,
}

impl ExploreReport {
    pub fn exit_code(&self) -> i32 {
        if self.stuck > 0 || self.other > 0 {
            4
        } else if self.budget_exceeded || self.too_many_threads {
            5
        } else {
            0
        }
    }

    fn record(&mut self, t: Terminal, schedule: &[ThreadId]) {
        self.terminals += 1;
        match &t {
            Terminal::AllDone => self.all_done += 1,
            Terminal::Deadlock { .. } => self.deadlocks += 1,
            Terminal::Stuck { fault, .. } => {
                self.stuck += 1;
                *self.stuck_by_fault.entry(fault.code()).or_default() += 1;
            }
            _ => self.other += 1,
        }
        if !self.examples.iter().any(|(e, _)| *e == t) && self.examples.len() < 16 {
            self.examples.push((t, schedule.to_vec()));
        }
    }
}

/// Depth-first search over all interleavings, merging configurations with
/// equal digests.
pub fn explore<O: Observer>(rt: &Runtime, opts: ExploreOptions, obs: O) -> ExploreReport {
    explore_from(rt, Config::initial(), opts, obs)
}

pub fn explore_from<O: Observer>(rt: &Runtime, start: Config, opts: ExploreOptions, mut obs: O) -> ExploreReport {
    let mut report = ExploreReport::default();
    if let Err(report_json) = obs.start(&start) {
        report.record(Terminal::Violation { report: report_json }, &[]);
        return report;
    }
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(start.digest());
    let mut stack: Vec<(Config, Vec<ThreadId>, O)> = vec![(start, Vec::new(), obs)];
    while let Some((c, schedule, obs)) = stack.pop() {
        report.states += 1;
        report.deepest = report.deepest.max(schedule.len());
        let outcomes = all_outcomes(rt, &c);
        if let Some(t) = halted(&c, &outcomes) {
            report.record(t, &schedule);
            continue;
        }
        if schedule.len() >= opts.max_steps {
            report.budget_exceeded = true;
            continue;
        }
        for (t, outcome) in outcomes.iter().rev() {
            if outcome.is_blocked() {
                continue;
            }
            let mut path = schedule.clone();
            path.push(*t);
            let mut obs2 = obs.clone();
            if let Err(r) = obs2.observe(&c, &outcomes, *t) {
                report.record(Terminal::Violation { report: r }, &path);
                continue;
            }
            let next = match outcome {
                StepOutcome::Stuck { thread, fault } => {
                    report.record(Terminal::Stuck { thread: *thread, fault: fault.clone() }, &path);
                    continue;
                }
                other => other.config().unwrap().clone(),
            };
            if next.threads.len() > opts.max_threads {
                report.too_many_threads = true;
                continue;
            }
            if seen.len() >= opts.max_states {
                report.budget_exceeded = true;
                continue;
            }
            if seen.insert(next.digest()) {
                stack.push((next, path, obs2));
            }
        }
    }
    report
}
