//! Student-proposing deferred acceptance and stability.
//!
//! Rounds are simultaneous: every student not currently held proposes the
//! best acceptable contract not yet rejected, and each college that received
//! a proposal evaluates `Ch_c(held ∪ new)`. Contracts it does not choose are
//! rejected for good, so a college can never recall an earlier rejection. The
//! run stops after the first round without a rejection.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::audit::{self, AuditReport, Axiom, Witness};
use crate::error::{Error, Result};
use crate::model::{Allocation, Caps, CollegeId, Contract, ContractSet, Market, PreferenceProfile};
use crate::profiles::{advance, Coverage, ProfileSpace};
use crate::subset::{self, Mask};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaRound {
    pub proposals: ContractSet,
    /// Holdings of every college at the end of the round.
    pub held: BTreeMap<CollegeId, ContractSet>,
    /// Contracts each college rejected in this round.
    pub rejected: BTreeMap<CollegeId, ContractSet>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaTrace {
    pub rounds: Vec<DaRound>,
    /// Order in which each college received proposals: by round, then by
    /// global contract order within a round.
    pub arrivals: BTreeMap<CollegeId, Vec<Contract>>,
    pub outcome: Allocation,
}

/// A coalition `Z ⊆ X_c` with `Z = Ch_c(Y ∪ Z) ≠ Y_c` whose students all
/// weakly prefer their contract in `Z` to their assignment in `Y`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockWitness {
    pub college: CollegeId,
    pub coalition: ContractSet,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum StabilityViolation {
    /// `Y_c ≠ Ch_c(Y_c)`.
    NotChosen {
        college: CollegeId,
        held: ContractSet,
        choice: ContractSet,
    },
    /// A student holds a contract ranked below the outside option.
    Unacceptable {
        contract: Contract,
    },
    Blocked(BlockWitness),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum StabilityVerdict {
    Stable,
    Unstable(StabilityViolation),
}

impl StabilityVerdict {
    pub fn is_stable(&self) -> bool {
        matches!(self, StabilityVerdict::Stable)
    }
}

const UNRANKED: u32 = u32::MAX;

/// Index-level deferred acceptance and stability over a fixed market.
pub(crate) struct Engine<'a> {
    market: &'a Market,
    /// Global index of each college's first contract.
    offsets: Vec<usize>,
}

pub(crate) struct RawRound {
    pub proposals: Vec<usize>,
    pub held: Vec<Mask>,
    pub rejected: Vec<Mask>,
}

pub(crate) enum RawViolation {
    NotChosen { college: usize, choice: Mask },
    Unacceptable { contract: usize },
    Blocked { college: usize, coalition: Mask },
}

impl<'a> Engine<'a> {
    pub fn new(market: &'a Market) -> Self {
        let mut offsets = vec![0; market.colleges().len()];
        let mut seen = vec![false; offsets.len()];
        for g in 0..market.universe().len() {
            let c = market.college_of(g);
            if !seen[c] {
                seen[c] = true;
                offsets[c] = g;
            }
        }
        Engine { market, offsets }
    }

    #[inline]
    fn global(&self, college: usize, i: usize) -> usize {
        self.offsets[college] + i
    }

    /// Acceptable lists as global indices, aligned with the market's students.
    pub fn lists(&self, prefs: &PreferenceProfile) -> Result<Vec<Vec<usize>>> {
        prefs.validate(self.market)?;
        Ok(self
            .market
            .students()
            .iter()
            .map(|s| {
                prefs
                    .acceptable(s)
                    .iter()
                    .map(|c| self.market.contract_index(c).expect("validated"))
                    .collect()
            })
            .collect())
    }

    /// Position of each contract in its student's list.
    pub fn ranks(&self, lists: &[&[usize]]) -> Vec<u32> {
        let mut rank = vec![UNRANKED; self.market.universe().len()];
        for list in lists {
            for (p, &g) in list.iter().enumerate() {
                rank[g] = p as u32;
            }
        }
        rank
    }

    /// Final holdings per college.
    pub fn run(&self, lists: &[&[usize]], mut log: Option<&mut Vec<RawRound>>) -> Vec<Mask> {
        let m = self.market;
        let nc = m.colleges().len();
        let mut held = vec![0 as Mask; nc];
        let mut next = vec![0usize; lists.len()];
        let mut holding = vec![false; lists.len()];
        loop {
            let mut new = vec![0 as Mask; nc];
            let mut proposals = Vec::new();
            for (s, list) in lists.iter().enumerate() {
                if holding[s] {
                    continue;
                }
                if let Some(&g) = list.get(next[s]) {
                    next[s] += 1;
                    new[m.college_of(g)] |= subset::bit(m.bit_of(g));
                    proposals.push(g);
                }
            }
            let mut rejected = vec![0 as Mask; nc];
            let mut any = false;
            for c in 0..nc {
                if new[c] == 0 {
                    continue;
                }
                let offer = held[c] | new[c];
                let chosen = m.profile()[c].choose_mask(offer);
                let rej = offer & !chosen;
                for i in subset::bits(rej) {
                    holding[m.student_of(self.global(c, i))] = false;
                }
                for i in subset::bits(chosen) {
                    holding[m.student_of(self.global(c, i))] = true;
                }
                held[c] = chosen;
                rejected[c] = rej;
                any |= rej != 0;
            }
            if let Some(log) = log.as_deref_mut() {
                proposals.sort_unstable();
                log.push(RawRound {
                    proposals,
                    held: held.clone(),
                    rejected,
                });
            }
            if !any {
                return held;
            }
        }
    }

    /// Each student's contract (global index) under the holdings `held`.
    pub fn assignment(&self, held: &[Mask]) -> Vec<Option<usize>> {
        let mut out = vec![None; self.market.students().len()];
        for (c, &h) in held.iter().enumerate() {
            for i in subset::bits(h) {
                let g = self.global(c, i);
                out[self.market.student_of(g)] = Some(g);
            }
        }
        out
    }

    pub fn to_set(&self, held: &[Mask]) -> ContractSet {
        held.iter()
            .zip(self.market.profile())
            .flat_map(|(&h, cf)| cf.domain().set_of(h))
            .collect()
    }

    pub fn to_allocation(&self, held: &[Mask]) -> Allocation {
        Allocation::new(self.to_set(held)).expect("holdings give one contract per student")
    }

    pub fn masks_of(&self, alloc: &ContractSet) -> Result<Vec<Mask>> {
        let mut held = vec![0 as Mask; self.market.colleges().len()];
        for c in alloc {
            let g = self
                .market
                .contract_index(c)
                .ok_or_else(|| Error::Domain(format!("contract {c} is not in the universe")))?;
            held[self.market.college_of(g)] |= subset::bit(self.market.bit_of(g));
        }
        Ok(held)
    }

    /// First stability violation of `held`, in the documented order.
    pub fn violation(&self, rank: &[u32], held: &[Mask]) -> Option<RawViolation> {
        let m = self.market;
        for (c, &h) in held.iter().enumerate() {
            let choice = m.profile()[c].choose_mask(h);
            if choice != h {
                return Some(RawViolation::NotChosen { college: c, choice });
            }
        }
        let current = self.assignment(held);
        for cur in current.iter().flatten() {
            if rank[*cur] == UNRANKED {
                return Some(RawViolation::Unacceptable { contract: *cur });
            }
        }
        for (c, &h) in held.iter().enumerate() {
            if let Some(z) = self.block_at(rank, &current, c, h) {
                return Some(RawViolation::Blocked {
                    college: c,
                    coalition: z,
                });
            }
        }
        None
    }

    /// Lexicographically first blocking coalition at college `c`.
    fn block_at(
        &self,
        rank: &[u32],
        current: &[Option<usize>],
        c: usize,
        held: Mask,
    ) -> Option<Mask> {
        let cf = &self.market.profile()[c];
        let dom = cf.domain();
        let mut candidates = 0;
        for i in 0..dom.len() {
            let g = self.global(c, i);
            let r = rank[g];
            let weakly_better = match current[self.market.student_of(g)] {
                None => r != UNRANKED,
                Some(cur) => r != UNRANKED && r <= rank[cur],
            };
            if weakly_better {
                candidates |= subset::bit(i);
            }
        }
        fn dfs(
            dom: &crate::model::Domain,
            cf: &crate::choice::ChoiceFunction,
            candidates: Mask,
            held: Mask,
            start: usize,
            z: Mask,
            used_students: Mask,
        ) -> Option<Mask> {
            if z != held && cf.choose_mask(held | z) == z {
                return Some(z);
            }
            for i in subset::bits(candidates & !subset::full(start)) {
                let s = dom.student_of(i);
                if subset::contains(used_students, s) {
                    continue;
                }
                if let Some(w) = dfs(
                    dom,
                    cf,
                    candidates,
                    held,
                    i + 1,
                    z | subset::bit(i),
                    used_students | subset::bit(s),
                ) {
                    return Some(w);
                }
            }
            None
        }
        dfs(dom, cf, candidates, held, 0, 0, 0)
    }

    pub fn to_violation(&self, raw: RawViolation, held: &[Mask]) -> StabilityViolation {
        let m = self.market;
        match raw {
            RawViolation::NotChosen { college, choice } => {
                let dom = m.profile()[college].domain();
                StabilityViolation::NotChosen {
                    college: m.colleges()[college].clone(),
                    held: dom.set_of(held[college]),
                    choice: dom.set_of(choice),
                }
            }
            RawViolation::Unacceptable { contract } => StabilityViolation::Unacceptable {
                contract: m.universe()[contract].clone(),
            },
            RawViolation::Blocked { college, coalition } => {
                StabilityViolation::Blocked(BlockWitness {
                    college: m.colleges()[college].clone(),
                    coalition: m.profile()[college].domain().set_of(coalition),
                })
            }
        }
    }

    /// Every allocation inside the universe, as per-college masks, in mixed-radix
    /// order over students (unmatched first, then the student's contracts in
    /// global order).
    pub fn all_allocations(&self, caps: &Caps) -> Result<Vec<Vec<Mask>>> {
        let m = self.market;
        let options: Vec<Vec<usize>> = (0..m.students().len())
            .map(|s| {
                (0..m.universe().len())
                    .filter(|&g| m.student_of(g) == s)
                    .collect()
            })
            .collect();
        let count = options
            .iter()
            .fold(1u128, |acc, o| acc.saturating_mul(o.len() as u128 + 1));
        if count > caps.profiles as u128 {
            return Err(Error::capacity(
                "candidate allocations",
                count.min(u64::MAX as u128) as u64,
                caps.profiles,
            ));
        }
        let radices: Vec<usize> = options.iter().map(|o| o.len() + 1).collect();
        let mut digits = vec![0; radices.len()];
        let mut out = Vec::with_capacity(count as usize);
        loop {
            let mut held = vec![0 as Mask; m.colleges().len()];
            for (s, &d) in digits.iter().enumerate() {
                if d > 0 {
                    let g = options[s][d - 1];
                    held[m.college_of(g)] |= subset::bit(m.bit_of(g));
                }
            }
            out.push(held);
            if !advance(&mut digits, &radices) {
                return Ok(out);
            }
        }
    }

    pub fn stable(&self, rank: &[u32], candidates: &[Vec<Mask>]) -> Vec<Vec<Mask>> {
        candidates
            .iter()
            .filter(|h| self.violation(rank, h).is_none())
            .cloned()
            .collect()
    }
}

/// Runs deferred acceptance and records every round.
pub fn run_da(market: &Market, prefs: &PreferenceProfile) -> Result<DaTrace> {
    let engine = Engine::new(market);
    let lists = engine.lists(prefs)?;
    let refs: Vec<&[usize]> = lists.iter().map(Vec::as_slice).collect();
    let mut log = Vec::new();
    let held = engine.run(&refs, Some(&mut log));

    let by_college = |masks: &[Mask]| -> BTreeMap<CollegeId, ContractSet> {
        market
            .colleges()
            .iter()
            .zip(market.profile())
            .zip(masks)
            .map(|((c, cf), &h)| (c.clone(), cf.domain().set_of(h)))
            .collect()
    };
    let mut arrivals: BTreeMap<CollegeId, Vec<Contract>> = market
        .colleges()
        .iter()
        .map(|c| (c.clone(), Vec::new()))
        .collect();
    let rounds = log
        .iter()
        .map(|r| {
            for &g in &r.proposals {
                let c = &market.colleges()[market.college_of(g)];
                arrivals
                    .get_mut(c)
                    .unwrap()
                    .push(market.universe()[g].clone());
            }
            DaRound {
                proposals: r
                    .proposals
                    .iter()
                    .map(|&g| market.universe()[g].clone())
                    .collect(),
                held: by_college(&r.held),
                rejected: by_college(&r.rejected),
            }
        })
        .collect();
    Ok(DaTrace {
        rounds,
        arrivals,
        outcome: engine.to_allocation(&held),
    })
}

/// The deferred acceptance outcome alone.
pub fn da_outcome(market: &Market, prefs: &PreferenceProfile) -> Result<Allocation> {
    let engine = Engine::new(market);
    let lists = engine.lists(prefs)?;
    let refs: Vec<&[usize]> = lists.iter().map(Vec::as_slice).collect();
    Ok(engine.to_allocation(&engine.run(&refs, None)))
}

/// Individual rationality first (colleges in order, then held contracts in
/// global order), then blocking coalitions: colleges in order and, within a
/// college, the lexicographically first coalition.
pub fn stability_verdict(
    alloc: &Allocation,
    market: &Market,
    prefs: &PreferenceProfile,
) -> Result<StabilityVerdict> {
    let engine = Engine::new(market);
    let lists = engine.lists(prefs)?;
    let refs: Vec<&[usize]> = lists.iter().map(Vec::as_slice).collect();
    let rank = engine.ranks(&refs);
    let held = engine.masks_of(alloc.contracts())?;
    Ok(match engine.violation(&rank, &held) {
        None => StabilityVerdict::Stable,
        Some(v) => StabilityVerdict::Unstable(engine.to_violation(v, &held)),
    })
}

/// Re-checks a recorded violation directly on contract sets.
pub fn replay_violation(
    market: &Market,
    prefs: &PreferenceProfile,
    alloc: &Allocation,
    violation: &StabilityViolation,
) -> Result<bool> {
    prefs.validate(market)?;
    let y = alloc.contracts();
    let at = |college: &CollegeId| -> ContractSet {
        y.iter()
            .filter(|c| &c.college == college)
            .cloned()
            .collect()
    };
    let cf_of = |college: &CollegeId| {
        market
            .choice(college)
            .ok_or_else(|| Error::Domain(format!("unknown college {college}")))
    };
    Ok(match violation {
        StabilityViolation::NotChosen {
            college,
            held,
            choice,
        } => {
            let y_c = at(college);
            let ch = cf_of(college)?.choose(&y_c)?;
            &y_c == held && &ch == choice && ch != y_c
        }
        StabilityViolation::Unacceptable { contract } => {
            y.contains(contract)
                && prefs
                    .preference(&contract.student)
                    .position(contract)
                    .is_none()
        }
        StabilityViolation::Blocked(BlockWitness { college, coalition }) => {
            let cf = cf_of(college)?;
            let y_c = at(college);
            let students: BTreeSet<_> = coalition.iter().map(|z| &z.student).collect();
            let offer: ContractSet = y_c.union(coalition).cloned().collect();
            students.len() == coalition.len()
                && coalition.iter().all(|z| &z.college == college)
                && coalition != &y_c
                && &cf.choose(&offer)? == coalition
                && coalition.iter().all(|z| {
                    let pref = prefs.preference(&z.student);
                    pref.position(z).is_some()
                        && pref.weakly_prefers(Some(z), alloc.of_student(&z.student))
                })
        }
    })
}

/// All stable allocations, scanning every allocation inside the universe.
pub fn enumerate_stable(
    market: &Market,
    prefs: &PreferenceProfile,
    caps: &Caps,
) -> Result<Vec<Allocation>> {
    let engine = Engine::new(market);
    let lists = engine.lists(prefs)?;
    let refs: Vec<&[usize]> = lists.iter().map(Vec::as_slice).collect();
    let rank = engine.ranks(&refs);
    let candidates = engine.all_allocations(caps)?;
    Ok(engine
        .stable(&rank, &candidates)
        .iter()
        .map(|h| engine.to_allocation(h))
        .collect())
}

fn coverage_note(coverage: Coverage) -> Option<String> {
    match coverage {
        Coverage::Exhaustive => None,
        Coverage::Sample { n, seed } => Some(format!("sampled {n} profiles with seed {seed}")),
    }
}

pub(crate) fn finish(mut report: AuditReport, coverage: Coverage) -> AuditReport {
    report.exhaustive = coverage.is_exhaustive();
    if let Some(n) = coverage_note(coverage) {
        report.notes.push(n);
    }
    report
}

/// Checks that the deferred acceptance outcome is stable for every monotone
/// preference profile (or a seeded sample).
pub fn check_da_stability(market: &Market, coverage: Coverage, caps: &Caps) -> Result<AuditReport> {
    let engine = Engine::new(market);
    let space = ProfileSpace::new(market);
    let (cases, flow) = space.visit(coverage, caps, |digits| {
        let lists = space.lists(digits);
        let held = engine.run(&lists, None);
        let rank = engine.ranks(&lists);
        match engine.violation(&rank, &held) {
            None => ControlFlow::Continue(()),
            Some(v) => ControlFlow::Break(Witness::DaStability {
                profile: space.profile(digits),
                outcome: engine.to_allocation(&held),
                violation: engine.to_violation(v, &held),
            }),
        }
    })?;
    Ok(finish(
        AuditReport::from_flow(Axiom::DaStability, "market", cases, flow),
        coverage,
    ))
}

fn rural_signature(engine: &Engine, held: &[Mask]) -> (Vec<bool>, Vec<usize>) {
    let matched = engine
        .assignment(held)
        .iter()
        .map(Option::is_some)
        .collect();
    let sizes = held.iter().map(|&h| subset::count(h)).collect();
    (matched, sizes)
}

fn rural_precondition_notes(market: &Market, caps: &Caps) -> Result<Vec<String>> {
    let mut notes = Vec::new();
    for cf in market.profile() {
        for r in [
            audit::check_substitutes(cf, caps)?,
            audit::check_lad(cf, caps)?,
        ] {
            if !r.passed() {
                notes.push(format!(
                    "precondition not met: {} fails {:?}; the property is not guaranteed",
                    cf.college(),
                    r.axiom
                ));
            }
        }
    }
    Ok(notes)
}

fn rural_scan(
    engine: &Engine,
    rank: &[u32],
    candidates: &[Vec<Mask>],
) -> Option<(Vec<Mask>, Vec<Mask>)> {
    let stable = engine.stable(rank, candidates);
    let first = stable.first()?;
    let sig = rural_signature(engine, first);
    stable
        .iter()
        .find(|h| rural_signature(engine, h) != sig)
        .map(|h| (first.clone(), h.clone()))
}

/// The matched students and each college's number of contracts coincide
/// across all stable allocations for `prefs`.
pub fn check_rural_hospitals(
    market: &Market,
    prefs: &PreferenceProfile,
    caps: &Caps,
) -> Result<AuditReport> {
    let notes = rural_precondition_notes(market, caps)?;
    let engine = Engine::new(market);
    let lists = engine.lists(prefs)?;
    let refs: Vec<&[usize]> = lists.iter().map(Vec::as_slice).collect();
    let rank = engine.ranks(&refs);
    let candidates = engine.all_allocations(caps)?;
    let flow = match rural_scan(&engine, &rank, &candidates) {
        None => ControlFlow::Continue(()),
        Some((a, b)) => ControlFlow::Break(Witness::RuralHospitals {
            profile: prefs.clone(),
            first: engine.to_allocation(&a),
            second: engine.to_allocation(&b),
        }),
    };
    let mut report = AuditReport::from_flow(
        Axiom::RuralHospitals,
        "market",
        candidates.len() as u64,
        flow,
    );
    report.notes = notes;
    Ok(report)
}

/// [`check_rural_hospitals`] over every monotone profile (or a sample).
pub fn check_rural_hospitals_all(
    market: &Market,
    coverage: Coverage,
    caps: &Caps,
) -> Result<AuditReport> {
    let notes = rural_precondition_notes(market, caps)?;
    let engine = Engine::new(market);
    let space = ProfileSpace::new(market);
    let candidates = engine.all_allocations(caps)?;
    let (cases, flow) = space.visit(coverage, caps, |digits| {
        let lists = space.lists(digits);
        let rank = engine.ranks(&lists);
        match rural_scan(&engine, &rank, &candidates) {
            None => ControlFlow::Continue(()),
            Some((a, b)) => ControlFlow::Break(Witness::RuralHospitals {
                profile: space.profile(digits),
                first: engine.to_allocation(&a),
                second: engine.to_allocation(&b),
            }),
        }
    })?;
    let mut report = finish(
        AuditReport::from_flow(Axiom::RuralHospitals, "market", cases, flow),
        coverage,
    );
    report.notes.splice(0..0, notes);
    Ok(report)
}

/// Re-evaluates a profile-level witness from this module.
pub fn replay_da_witness(market: &Market, w: &Witness) -> Result<bool> {
    match w {
        Witness::DaStability {
            profile,
            outcome,
            violation,
        } => Ok(&da_outcome(market, profile)? == outcome
            && replay_violation(market, profile, outcome, violation)?),
        Witness::RuralHospitals {
            profile,
            first,
            second,
        } => {
            let stable = |a: &Allocation| -> Result<bool> {
                Ok(stability_verdict(a, market, profile)?.is_stable())
            };
            let per_college = |a: &Allocation| -> Vec<usize> {
                market
                    .colleges()
                    .iter()
                    .map(|c| a.at_college(c).count())
                    .collect()
            };
            Ok(stable(first)?
                && stable(second)?
                && (first.students() != second.students()
                    || per_college(first) != per_college(second)))
        }
        _ => Err(Error::Domain(
            "witness is not a deferred acceptance witness".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{check_observable_substitutes, check_substitutes, is_observable_sequence};
    use crate::fixtures::{self, Abd, E1};
    use crate::model::StudentPreference;
    use proptest::prelude::*;

    fn caps() -> Caps {
        Caps::default()
    }

    fn e1_truthful() -> PreferenceProfile {
        let e = E1::new();
        PreferenceProfile::new()
            .with("s1", vec![e.xp.clone(), e.x.clone()])
            .with("s2", vec![e.yp.clone(), e.y.clone()])
            .with("s3", vec![e.zp.clone(), e.z.clone()])
    }

    fn set(items: &[&Contract]) -> ContractSet {
        items.iter().map(|c| (*c).clone()).collect()
    }

    /// Step-by-step replay written against contract sets only.
    fn naive_da(market: &Market, prefs: &PreferenceProfile) -> (Vec<ContractSet>, ContractSet) {
        let mut rejected = ContractSet::new();
        let mut held: BTreeMap<CollegeId, ContractSet> = BTreeMap::new();
        let mut proposals_per_round = Vec::new();
        loop {
            let holding: BTreeSet<_> = held.values().flatten().map(|c| c.student.clone()).collect();
            let mut proposals = ContractSet::new();
            for s in market.students() {
                if holding.contains(s) {
                    continue;
                }
                if let Some(c) = prefs.acceptable(s).iter().find(|c| !rejected.contains(*c)) {
                    proposals.insert(c.clone());
                }
            }
            let mut any = false;
            for college in market.colleges() {
                let new: ContractSet = proposals
                    .iter()
                    .filter(|c| &c.college == college)
                    .cloned()
                    .collect();
                if new.is_empty() {
                    continue;
                }
                let offer: ContractSet = held
                    .get(college)
                    .cloned()
                    .unwrap_or_default()
                    .union(&new)
                    .cloned()
                    .collect();
                let ch = market.choice(college).unwrap().choose(&offer).unwrap();
                for r in offer.difference(&ch) {
                    rejected.insert(r.clone());
                    any = true;
                }
                held.insert(college.clone(), ch);
            }
            proposals_per_round.push(proposals);
            if !any {
                return (
                    proposals_per_round,
                    held.values().flatten().cloned().collect(),
                );
            }
        }
    }

    /// The convention in which a college re-chooses from everything ever proposed to it.
    fn cumulative_da(market: &Market, prefs: &PreferenceProfile) -> ContractSet {
        let mut proposed = ContractSet::new();
        let mut next: BTreeMap<_, usize> = BTreeMap::new();
        loop {
            let held: ContractSet = market
                .colleges()
                .iter()
                .flat_map(|c| {
                    let mine: ContractSet = proposed
                        .iter()
                        .filter(|x| &x.college == c)
                        .cloned()
                        .collect();
                    market.choice(c).unwrap().choose(&mine).unwrap()
                })
                .collect();
            let holding: BTreeSet<_> = held.iter().map(|c| c.student.clone()).collect();
            let mut moved = false;
            for s in market.students() {
                if holding.contains(s) {
                    continue;
                }
                let i = next.entry(s.clone()).or_insert(0);
                if let Some(c) = prefs.acceptable(s).get(*i) {
                    *i += 1;
                    proposed.insert(c.clone());
                    moved = true;
                }
            }
            if !moved {
                return held;
            }
        }
    }

    #[test]
    fn e1_run_matches_hand_simulation() {
        let e = E1::new();
        let market = fixtures::e1_market();
        let trace = run_da(&market, &e1_truthful()).unwrap();
        assert_eq!(trace.outcome.contracts(), &set(&[&e.yp]));
        assert_eq!(trace.rounds.len(), 3);
        let c1: CollegeId = "c1".into();
        assert_eq!(trace.rounds[0].proposals, set(&[&e.xp, &e.yp, &e.zp]));
        assert_eq!(trace.rounds[0].held[&c1], set(&[&e.yp]));
        assert_eq!(trace.rounds[0].rejected[&c1], set(&[&e.xp, &e.zp]));
        assert_eq!(trace.rounds[1].proposals, set(&[&e.x, &e.z]));
        assert_eq!(trace.rounds[1].held[&c1], set(&[&e.yp]));
        assert!(trace.rounds[2].proposals.is_empty());
        assert!(trace.rounds[2].rejected[&c1].is_empty());
        assert_eq!(
            trace.arrivals[&c1],
            vec![
                e.xp.clone(),
                e.yp.clone(),
                e.zp.clone(),
                e.x.clone(),
                e.z.clone()
            ]
        );

        let (rounds, outcome) = naive_da(&market, &e1_truthful());
        assert_eq!(&outcome, trace.outcome.contracts());
        assert_eq!(
            rounds,
            trace
                .rounds
                .iter()
                .map(|r| r.proposals.clone())
                .collect::<Vec<_>>()
        );

        let prime = run_da(&fixtures::e1_prime_market(), &e1_truthful()).unwrap();
        assert_eq!(prime.outcome, trace.outcome);
    }

    #[test]
    fn empty_preferences_end_in_one_round() {
        let trace = run_da(&fixtures::e1_market(), &PreferenceProfile::new()).unwrap();
        assert!(trace.outcome.is_empty());
        assert_eq!(trace.rounds.len(), 1);
    }

    #[test]
    fn invalid_preferences_are_rejected() {
        let e = E1::new();
        let bad = PreferenceProfile::new().with("s2", vec![e.y.clone(), e.yp.clone()]);
        assert!(matches!(
            run_da(&fixtures::e1_market(), &bad),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn stability_examples() {
        let e = E1::new();
        let market = fixtures::e1_market();
        let yp = Allocation::new(set(&[&e.yp])).unwrap();
        assert!(stability_verdict(&yp, &market, &e1_truthful())
            .unwrap()
            .is_stable());

        let only_s2 = PreferenceProfile::new().with("s2", vec![e.yp.clone(), e.y.clone()]);
        let v = stability_verdict(&Allocation::empty(), &market, &only_s2).unwrap();
        let expected = StabilityViolation::Blocked(BlockWitness {
            college: "c1".into(),
            coalition: set(&[&e.yp]),
        });
        assert_eq!(v, StabilityVerdict::Unstable(expected.clone()));
        assert!(replay_violation(&market, &only_s2, &Allocation::empty(), &expected).unwrap());

        let empty = PreferenceProfile::new();
        assert!(stability_verdict(&Allocation::empty(), &market, &empty)
            .unwrap()
            .is_stable());
    }

    #[test]
    fn individual_rationality_violations() {
        let e = E1::new();
        let market = fixtures::e1_market();
        // Ch1({x}) = ∅, so holding x alone is not chosen
        let x = Allocation::new(set(&[&e.x])).unwrap();
        let v = stability_verdict(&x, &market, &e1_truthful()).unwrap();
        assert!(matches!(
            v,
            StabilityVerdict::Unstable(StabilityViolation::NotChosen { .. })
        ));
        // y' is chosen but s2 finds nothing acceptable
        let yp = Allocation::new(set(&[&e.yp])).unwrap();
        let v = stability_verdict(&yp, &market, &PreferenceProfile::new()).unwrap();
        assert_eq!(
            v,
            StabilityVerdict::Unstable(StabilityViolation::Unacceptable {
                contract: e.yp.clone()
            })
        );
        if let StabilityVerdict::Unstable(w) = v {
            assert!(replay_violation(&market, &PreferenceProfile::new(), &yp, &w).unwrap());
        }
    }

    #[test]
    fn enumerate_stable_examples() {
        let e = E1::new();
        let stable = enumerate_stable(&fixtures::e1_market(), &e1_truthful(), &caps()).unwrap();
        assert!(stable.contains(&Allocation::new(set(&[&e.yp])).unwrap()));
        for a in &stable {
            assert!(stability_verdict(a, &fixtures::e1_market(), &e1_truthful())
                .unwrap()
                .is_stable());
        }

        let none =
            enumerate_stable(&fixtures::e1_market(), &PreferenceProfile::new(), &caps()).unwrap();
        assert_eq!(none, vec![Allocation::empty()]);

        let f8 = fixtures::f8_market();
        let c = |s, t| Contract::new("c1", s, t);
        let prefs = PreferenceProfile::new()
            .with("s1", vec![c("s1", "1"), c("s1", "0")])
            .with("s2", vec![c("s2", "1"), c("s2", "0")])
            .with("s3", vec![c("s3", "1"), c("s3", "0")]);
        let stable = enumerate_stable(&f8, &prefs, &caps()).unwrap();
        for a in &stable {
            assert!(stability_verdict(a, &f8, &prefs).unwrap().is_stable());
        }
    }

    #[test]
    fn stable_scan_agrees_with_verdict_on_every_allocation() {
        let market = fixtures::e1_market();
        let prefs = e1_truthful();
        let engine = Engine::new(&market);
        let stable = enumerate_stable(&market, &prefs, &caps()).unwrap();
        for h in engine.all_allocations(&caps()).unwrap() {
            let a = engine.to_allocation(&h);
            assert_eq!(
                stable.contains(&a),
                stability_verdict(&a, &market, &prefs).unwrap().is_stable()
            );
        }
    }

    #[test]
    fn da_stability_examples() {
        let r = check_da_stability(&fixtures::e1_market(), Coverage::Exhaustive, &caps()).unwrap();
        assert!(r.passed());
        assert_eq!(r.cases, 27);

        let market = fixtures::f_osv_market();
        let r = check_da_stability(&market, Coverage::Exhaustive, &caps()).unwrap();
        assert!(!r.passed());
        assert!(replay_da_witness(&market, r.witness.as_ref().unwrap()).unwrap());

        let t = Abd::new();
        let ae = Contract::new("e", "sa", "0");
        let de = Contract::new("e", "sd", "0");
        let prefs = PreferenceProfile::new()
            .with("sa", vec![t.a.clone(), ae.clone()])
            .with("sb", vec![t.b.clone()])
            .with("sd", vec![de.clone(), t.d.clone()]);
        let trace = run_da(&market, &prefs).unwrap();
        assert_eq!(trace.outcome.contracts(), &set(&[&ae, &t.b, &t.d]));
        assert_eq!(
            stability_verdict(&trace.outcome, &market, &prefs).unwrap(),
            StabilityVerdict::Unstable(StabilityViolation::Blocked(BlockWitness {
                college: "c".into(),
                coalition: set(&[&t.a, &t.d]),
            }))
        );
    }

    #[test]
    fn single_student_markets_are_da_stable() {
        let t = Abd::new();
        let cf = fixtures::table_from_fn(
            crate::model::Domain::new("c".into(), &t.order, [t.a.clone()]).unwrap(),
            |y| y.clone(),
        );
        let market = Market::new(
            t.order.clone(),
            ["c".into()],
            ["sa".into()],
            [t.a.clone()],
            vec![cf],
        )
        .unwrap();
        assert!(check_da_stability(&market, Coverage::Exhaustive, &caps())
            .unwrap()
            .passed());
    }

    #[test]
    fn sampled_stability_is_labelled() {
        let r = check_da_stability(
            &fixtures::f8_market(),
            Coverage::Sample { n: 50, seed: 3 },
            &caps(),
        )
        .unwrap();
        assert!(!r.exhaustive);
        assert_eq!(r.cases, 50);
        assert!(r.notes.iter().any(|n| n.contains("seed 3")));
    }

    #[test]
    fn rural_hospitals_examples() {
        let market = fixtures::e1_prime_market();
        let space = ProfileSpace::new(&market);
        space
            .for_each(Coverage::Exhaustive, &caps(), |d| {
                let r = check_rural_hospitals(&market, &space.profile(d), &caps()).unwrap();
                assert!(r.passed() && r.notes.is_empty());
            })
            .unwrap();
        assert!(
            check_rural_hospitals(&market, &PreferenceProfile::new(), &caps())
                .unwrap()
                .passed()
        );

        let two = fixtures::two_unit_colleges();
        let prefs = PreferenceProfile::new()
            .with(
                "s1",
                vec![Contract::new("a", "s1", "0"), Contract::new("b", "s1", "0")],
            )
            .with(
                "s2",
                vec![Contract::new("b", "s2", "0"), Contract::new("a", "s2", "0")],
            );
        let stable = enumerate_stable(&two, &prefs, &caps()).unwrap();
        assert_eq!(stable.len(), 2, "{stable:?}");
        let matched: BTreeSet<_> = stable.iter().map(|a| a.students()).collect();
        assert_eq!(matched.len(), 1);
        assert!(check_rural_hospitals(&two, &prefs, &caps())
            .unwrap()
            .passed());
        assert!(
            check_rural_hospitals_all(&two, Coverage::Exhaustive, &caps())
                .unwrap()
                .passed()
        );

        let r = check_rural_hospitals(&fixtures::e1_market(), &e1_truthful(), &caps()).unwrap();
        assert!(r.notes.iter().any(|n| n.contains("precondition")));
    }

    #[test]
    fn lemma2_proposals_are_observable() {
        for market in [
            fixtures::e1_market(),
            fixtures::f8_market(),
            fixtures::f_osv_market(),
        ] {
            let space = ProfileSpace::new(&market);
            let obs: Vec<bool> = market
                .profile()
                .iter()
                .map(|cf| check_observable_substitutes(cf, &caps()).unwrap().passed())
                .collect();
            space
                .for_each(Coverage::Exhaustive, &caps(), |d| {
                    let trace = run_da(&market, &space.profile(d)).unwrap();
                    for (i, cf) in market.profile().iter().enumerate() {
                        if obs[i] {
                            let seq = &trace.arrivals[cf.college()];
                            assert!(is_observable_sequence(cf, seq).unwrap(), "{seq:?}");
                        }
                    }
                })
                .unwrap();
        }
    }

    #[test]
    fn conventions_coincide_under_observable_substitutes() {
        for market in [
            fixtures::e1_market(),
            fixtures::e1_prime_market(),
            fixtures::f8_market(),
        ] {
            if !market
                .profile()
                .iter()
                .all(|cf| check_observable_substitutes(cf, &caps()).unwrap().passed())
            {
                continue;
            }
            let space = ProfileSpace::new(&market);
            space
                .for_each(Coverage::Exhaustive, &caps(), |d| {
                    let p = space.profile(d);
                    assert_eq!(
                        da_outcome(&market, &p).unwrap().contracts(),
                        &cumulative_da(&market, &p)
                    );
                })
                .unwrap();
        }
    }

    #[test]
    fn student_optimal_under_substitutes() {
        let markets = [
            fixtures::e1_prime_market(),
            fixtures::two_unit_colleges(),
            fixtures::e1_with_unit_college(fixtures::e1_ch1_prime()),
        ];
        for market in markets {
            assert!(market
                .profile()
                .iter()
                .all(|cf| check_substitutes(cf, &caps()).unwrap().passed()));
            let space = ProfileSpace::new(&market);
            space
                .for_each(Coverage::Exhaustive, &caps(), |d| {
                    let p = space.profile(d);
                    let out = da_outcome(&market, &p).unwrap();
                    for a in enumerate_stable(&market, &p, &caps()).unwrap() {
                        for s in market.students() {
                            let pref: StudentPreference = p.preference(s);
                            assert!(pref.weakly_prefers(out.of_student(s), a.of_student(s)));
                        }
                    }
                })
                .unwrap();
        }
    }

    proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn traces_terminate_and_rejections_are_permanent(
                market_ix in 0usize..4,
                seed in any::<u64>(),
            ) {
                let market = [
                    fixtures::e1_market(),
                    fixtures::f8_market(),
                    fixtures::f_osv_market(),
                    fixtures::e1_with_unit_college(fixtures::e1_ch1()),
                ][market_ix].clone();
                let space = ProfileSpace::new(&market);
                let mut profile = None;
                space.for_each(Coverage::Sample { n: 1, seed }, &caps(), |d| {
                    profile = Some(space.profile(d));
    }).unwrap();
                let prefs = profile.unwrap();
                let trace = run_da(&market, &prefs).unwrap();
                prop_assert!(trace.rounds.len() <= market.universe().len() + 1);
                let last = trace.rounds.last().unwrap();
                prop_assert!(last.rejected.values().all(|r| r.is_empty()));
                let mut rejected = ContractSet::new();
                for round in &trace.rounds {
                    prop_assert!(round.proposals.is_disjoint(&rejected));
                    for r in round.rejected.values() {
                        prop_assert!(r.is_disjoint(&rejected));
                        rejected.extend(r.iter().cloned());
                    }
                }
                let (_, naive) = naive_da(&market, &prefs);
                prop_assert_eq!(&naive, trace.outcome.contracts());
            }
        }
}
