//! Capability arithmetic and effect splitting/joining at call sites.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ast::{CapOp, Capability, Effect, EffectEntry, Parent, Purity, RegionName};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CapError {
    #[error("insufficient capability for {region}: have {have}, need {need}")]
    InsufficientCapability { region: RegionName, have: Capability, need: Capability },
    #[error("capability for {region} cannot be passed pure")]
    PurityViolation { region: RegionName },
    #[error("region {0} is not in the current effect")]
    UnknownRegion(RegionName),
    #[error("parent of {region} is {actual}, but {declared} was declared")]
    ParentMismatch { region: RegionName, declared: Parent, actual: Parent },
    #[error("abstracted parent {0} is not live after the call")]
    AbstractedParentDead(RegionName),
    #[error("call output mentions {0}, which was not live before the call")]
    DomainViolation(RegionName),
    #[error("capability for {0} changes purity across the call")]
    ConsistencyViolation(RegionName),
    #[error("impure capability with positive lock count for {0} cannot be given to a new thread")]
    ImpureLockEscape(RegionName),
    #[error("region {0} with an abstracted parent cannot be given to a new thread")]
    HierarchyAbstractionInPar(RegionName),
    #[error("a spawned function must have an empty output effect")]
    NonEmptyThreadOutput,
    #[error("a spawned function must return unit")]
    NonUnitThreadResult,
    #[error("lock count of {0} would become negative")]
    CountUnderflow(RegionName),
    #[error("region {0} is not live")]
    RegionNotLive(RegionName),
}

impl CapError {
    pub fn code(&self) -> &'static str {
        match self {
            CapError::InsufficientCapability { .. } => "InsufficientCapability",
            CapError::PurityViolation { .. } => "PurityViolation",
            CapError::UnknownRegion(_) => "UnknownRegion",
            CapError::ParentMismatch { .. } => "ParentMismatch",
            CapError::AbstractedParentDead(_) => "AbstractedParentDead",
            CapError::DomainViolation(_) => "DomainViolation",
            CapError::ConsistencyViolation(_) => "ConsistencyViolation",
            CapError::ImpureLockEscape(_) => "ImpureLockEscape",
            CapError::HierarchyAbstractionInPar(_) => "HierarchyAbstractionInPar",
            CapError::NonEmptyThreadOutput => "NonEmptyThreadOutput",
            CapError::NonUnitThreadResult => "NonUnitThreadResult",
            CapError::CountUnderflow(_) => "CountUnderflow",
            CapError::RegionNotLive(_) => "RegionNotLive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("counts too small")]
    Insufficient,
    #[error("a pure capability can only be passed whole")]
    Purity,
}

/// Splits `have` into the part handed to a callee and the part kept.
///
/// The kept part is returned even when its region count is zero, so that
/// `given + kept == have` always holds; callers drop such entries.
pub fn cap_split(have: Capability, need: Capability) -> Result<(Capability, Capability), SplitError> {
    if have.region < need.region || have.lock < need.lock {
        return Err(SplitError::Insufficient);
    }
    if need.is_pure() {
        if have.is_pure() && have.counts() == need.counts() {
            return Ok((have, Capability::impure(0, 0)));
        }
        return Err(SplitError::Purity);
    }
    Ok((
        Capability::impure(need.region, need.lock),
        Capability::impure(have.region - need.region, have.lock - need.lock),
    ))
}

/// The outcome of subtracting a callee's input effect from the caller's.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitResult {
    /// What the callee receives, with the parents it declared.
    pub passed: Effect,
    /// What the caller keeps. Entries whose region count drops to zero are
    /// omitted.
    pub retained: Effect,
    /// Regions whose parent was hidden from the callee, mapped to the
    /// actual parent.
    pub abstracted: BTreeMap<RegionName, RegionName>,
    /// The caller's effect before the split.
    pub original: Effect,
}

impl SplitResult {
    /// Counts kept by the caller for `region`, including zero-count pieces
    /// omitted from `retained`.
    pub fn kept(&self, region: &RegionName) -> Option<(u32, u32)> {
        let orig = self.original.get(region)?;
        match self.passed.get(region) {
            None => Some(orig.cap.counts()),
            Some(p) if p.cap.is_pure() => None,
            Some(p) => Some((orig.cap.region - p.cap.region, orig.cap.lock - p.cap.lock)),
        }
    }
}

/// Subtracts the (already instantiated) input effect of a callee from the
/// current effect.
pub fn effect_subtract(current: &Effect, input: &Effect) -> Result<SplitResult, CapError> {
    let mut passed = Effect::new();
    let mut retained = current.clone();
    let mut abstracted = BTreeMap::new();
    for (r, need) in input.iter() {
        let have = current.get(r).ok_or_else(|| CapError::UnknownRegion(r.clone()))?;
        match (&need.parent, &have.parent) {
            (Parent::Unknown, Parent::Region(p)) => {
                abstracted.insert(r.clone(), p.clone());
            }
            (Parent::Unknown, _) => {}
            (declared, actual) if declared != actual => {
                return Err(CapError::ParentMismatch {
                    region: r.clone(),
                    declared: declared.clone(),
                    actual: actual.clone(),
                });
            }
            _ => {}
        }
        let (given, kept) = cap_split(have.cap, need.cap).map_err(|e| match e {
            SplitError::Insufficient => {
                CapError::InsufficientCapability { region: r.clone(), have: have.cap, need: need.cap }
            }
            SplitError::Purity => CapError::PurityViolation { region: r.clone() },
        })?;
        passed.insert(r.clone(), given, need.parent.clone());
        if kept.region == 0 {
            retained.remove(r);
        } else if let Some(e) = retained.get_mut(r) {
            e.cap = kept;
        }
    }
    Ok(SplitResult { passed, retained, abstracted, original: current.clone() })
}

/// Joins the callee's (instantiated) output effect back into what the
/// caller retained.
///
/// Parents are restored to their pre-call values and every region keeps the
/// purity it had before the call.
pub fn effect_join(split: &SplitResult, output: &Effect, par: bool) -> Result<Effect, CapError> {
    let mut result = Effect::new();
    for (r, orig) in split.original.iter() {
        if let Some((rc, lc)) = split.kept(r) {
            if rc > 0 || lc > 0 {
                result.insert(r.clone(), Capability { region: rc, lock: lc, purity: orig.cap.purity }, orig.parent.clone());
            }
        }
    }
    if !par {
        for (r, out) in output.iter() {
            let orig = split.original.get(r).ok_or_else(|| CapError::DomainViolation(r.clone()))?;
            if let Some(passed) = split.passed.get(r) {
                if passed.cap.purity != out.cap.purity {
                    return Err(CapError::ConsistencyViolation(r.clone()));
                }
            } else if out.cap.purity != orig.cap.purity {
                return Err(CapError::ConsistencyViolation(r.clone()));
            }
            if let Parent::Region(_) | Parent::Bottom = &out.parent {
                if out.parent != orig.parent {
                    return Err(CapError::ParentMismatch {
                        region: r.clone(),
                        declared: out.parent.clone(),
                        actual: orig.parent.clone(),
                    });
                }
            }
            let base = result.get(r).map(|e| e.cap.counts()).unwrap_or((0, 0));
            result.insert(
                r.clone(),
                Capability { region: base.0 + out.cap.region, lock: base.1 + out.cap.lock, purity: orig.cap.purity },
                orig.parent.clone(),
            );
        }
        for p in split.abstracted.values() {
            if split.original.contains(p) && !result.contains(p) {
                return Err(CapError::AbstractedParentDead(p.clone()));
            }
        }
    }
    // Zero region counts can appear when only a lock piece was kept.
    let zero: Vec<RegionName> =
        result.iter().filter(|(_, e)| e.cap.region == 0).map(|(r, _)| r.clone()).collect();
    for r in zero {
        result.remove(&r);
    }
    prune_lost_parents(&mut result, &split.original);
    Ok(result)
}

/// Drops entries whose parent was live before the call but is gone now,
/// together with their descendants.
fn prune_lost_parents(result: &mut Effect, original: &Effect) {
    loop {
        let lost: Vec<RegionName> = result
            .iter()
            .filter(|(_, e)| matches!(&e.parent, Parent::Region(p) if original.contains(p) && !result.contains(p)))
            .map(|(r, _)| r.clone())
            .collect();
        if lost.is_empty() {
            return;
        }
        for r in lost {
            result.remove(&r);
        }
    }
}

/// Checks the extra conditions on the effect handed to a new thread.
pub fn check_par_constraints(passed: &Effect, output: &Effect, result_is_unit: bool) -> Result<(), CapError> {
    for (r, e) in passed.iter() {
        if e.cap.purity == Purity::Impure && e.cap.lock > 0 {
            return Err(CapError::ImpureLockEscape(r.clone()));
        }
        if e.parent == Parent::Unknown {
            return Err(CapError::HierarchyAbstractionInPar(r.clone()));
        }
    }
    if !output.is_empty() {
        return Err(CapError::NonEmptyThreadOutput);
    }
    if !result_is_unit {
        return Err(CapError::NonUnitThreadResult);
    }
    Ok(())
}

pub fn is_live_static(gamma: &Effect, r: &RegionName) -> bool {
    gamma.contains(r)
}

pub fn is_accessible_static(gamma: &Effect, r: &RegionName) -> bool {
    let Some(entry) = gamma.get(r) else { return false };
    entry.cap.lock > 0 || gamma.ancestors(r).iter().any(|a| gamma.get(a).is_some_and(|e| e.cap.lock > 0))
}

/// Applies a capability operator to the static effect.
pub fn apply_cap_op(gamma: &Effect, r: &RegionName, op: CapOp) -> Result<Effect, CapError> {
    let mut out = gamma.clone();
    let entry: &mut EffectEntry = out.get_mut(r).ok_or_else(|| CapError::RegionNotLive(r.clone()))?;
    match op {
        CapOp::RgPlus => entry.cap.region += 1,
        CapOp::LkPlus => entry.cap.lock += 1,
        CapOp::LkMinus => {
            if entry.cap.lock == 0 {
                return Err(CapError::CountUnderflow(r.clone()));
            }
            entry.cap.lock -= 1;
        }
        CapOp::RgMinus => {
            entry.cap.region -= 1;
            if entry.cap.region == 0 {
                for d in gamma.descendants(r) {
                    out.remove(&d);
                }
                out.remove(r);
            }
        }
    }
    Ok(out)
}
