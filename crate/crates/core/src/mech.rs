//! Brute-force strategy-proofness and group strategy-proofness of deferred
//! acceptance over the monotone preference domain.
//!
//! Misreports are themselves monotone profiles, so every deviation lands in the
//! same profile space; outcomes are cached per profile.

use std::collections::{BTreeSet, HashMap};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditReport, Axiom, Witness};
use crate::da::{da_outcome, finish, Engine};
use crate::error::{Error, Result};
use crate::model::{
    validate_preference, Allocation, Caps, Market, PreferenceProfile, StudentId, StudentPreference,
};
use crate::profiles::{advance, Coverage, ProfileSpace};

/// A coalition whose members all strictly gain, by their true preferences,
/// from the joint misreport.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManipulationWitness {
    pub coalition: Vec<StudentId>,
    /// Every student's true preference.
    pub truthful: PreferenceProfile,
    /// One report per coalition member, in coalition order.
    pub misreports: Vec<StudentPreference>,
    pub truthful_outcome: Allocation,
    pub manipulated_outcome: Allocation,
}

impl ManipulationWitness {
    pub fn manipulated_profile(&self) -> PreferenceProfile {
        let mut p = self.truthful.clone();
        for m in &self.misreports {
            p.set(m.clone());
        }
        p
    }
}

struct Outcomes<'a> {
    engine: Engine<'a>,
    space: &'a ProfileSpace,
    cache: HashMap<Vec<usize>, Vec<Option<usize>>>,
}

impl Outcomes<'_> {
    fn get(&mut self, digits: &[usize]) -> &[Option<usize>] {
        if !self.cache.contains_key(digits) {
            let lists = self.space.lists(digits);
            let held = self.engine.run(&lists, None);
            self.cache
                .insert(digits.to_vec(), self.engine.assignment(&held));
        }
        &self.cache[digits]
    }
}

/// Rank of an outcome under a list: position, then the outside option, then unacceptable.
fn outcome_rank(list: &[usize], outcome: Option<usize>) -> usize {
    match outcome {
        None => list.len(),
        Some(g) => list.iter().position(|&x| x == g).unwrap_or(list.len() + 1),
    }
}

/// Coalitions of sizes `1..=k` over `n` students: by size, then lexicographically.
fn coalitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn extend(
        n: usize,
        size: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            extend(n, size, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for size in 1..=k.min(n) {
        extend(n, size, 0, &mut Vec::new(), &mut out);
    }
    out
}

/// No coalition of at most `max_coalition` students can all strictly gain by
/// a joint monotone misreport. Scan order: true profile, coalition (by size,
/// then lexicographic), joint report in enumeration order.
pub fn check_group_strategy_proofness(
    market: &Market,
    max_coalition: usize,
    coverage: Coverage,
    caps: &Caps,
) -> Result<AuditReport> {
    let n = market.students().len();
    if max_coalition == 0 || max_coalition > n.max(1) {
        return Err(Error::Validation(format!(
            "coalition bound {max_coalition} must lie between 1 and the number of students ({n})"
        )));
    }
    let axiom = if max_coalition == 1 {
        Axiom::StrategyProofness
    } else {
        Axiom::GroupStrategyProofness
    };
    let space = ProfileSpace::new(market);
    let radices = space.radices();
    let groups = coalitions(n, max_coalition);
    let mut outcomes = Outcomes {
        engine: Engine::new(market),
        space: &space,
        cache: HashMap::new(),
    };
    let mut cases = 0u64;
    let (_, flow) = space.visit(coverage, caps, |truth| {
        let truthful = outcomes.get(truth).to_vec();
        let lists: Vec<Vec<usize>> = space.lists(truth).iter().map(|l| l.to_vec()).collect();
        let truth_rank: Vec<usize> = (0..n)
            .map(|s| outcome_rank(&lists[s], truthful[s]))
            .collect();
        for group in &groups {
            // a member already holding their top choice cannot strictly gain
            if group.iter().any(|&s| truth_rank[s] == 0) {
                continue;
            }
            let group_radices: Vec<usize> = group.iter().map(|&s| radices[s]).collect();
            let mut joint = vec![0; group.len()];
            loop {
                if group.iter().zip(&joint).any(|(&s, &d)| d != truth[s]) {
                    cases += 1;
                    let mut reported = truth.to_vec();
                    for (&s, &d) in group.iter().zip(&joint) {
                        reported[s] = d;
                    }
                    let manipulated = outcomes.get(&reported);
                    let all_gain = group
                        .iter()
                        .all(|&s| outcome_rank(&lists[s], manipulated[s]) < truth_rank[s]);
                    if all_gain {
                        let to_alloc = |a: &[Option<usize>]| {
                            Allocation::new(
                                a.iter()
                                    .flatten()
                                    .map(|&g| market.universe()[g].clone())
                                    .collect(),
                            )
                            .expect("assignment")
                        };
                        let manipulated_outcome = to_alloc(manipulated);
                        return ControlFlow::Break(Witness::Manipulation(ManipulationWitness {
                            coalition: group
                                .iter()
                                .map(|&s| market.students()[s].clone())
                                .collect(),
                            truthful: space.profile(truth),
                            misreports: group
                                .iter()
                                .zip(&joint)
                                .map(|(&s, &d)| space.options(s)[d].clone())
                                .collect(),
                            truthful_outcome: to_alloc(&truthful),
                            manipulated_outcome,
                        }));
                    }
                }
                if !advance(&mut joint, &group_radices) {
                    break;
                }
            }
        }
        ControlFlow::Continue(())
    })?;
    Ok(finish(
        AuditReport::from_flow(axiom, "market", cases, flow),
        coverage,
    ))
}

/// No single student can strictly gain by a monotone misreport.
pub fn check_strategy_proofness(
    market: &Market,
    coverage: Coverage,
    caps: &Caps,
) -> Result<AuditReport> {
    check_group_strategy_proofness(market, 1, coverage, caps)
}

/// Re-runs both deferred acceptance instances of a witness and re-checks every
/// member's strict gain.
pub fn replay_manipulation(market: &Market, w: &ManipulationWitness) -> Result<bool> {
    let members: BTreeSet<&StudentId> = w.coalition.iter().collect();
    if members.len() != w.coalition.len()
        || w.misreports.len() != w.coalition.len()
        || w.misreports
            .iter()
            .zip(&w.coalition)
            .any(|(m, s)| &m.student != s)
    {
        return Ok(false);
    }
    for m in &w.misreports {
        if !validate_preference(m, market).is_empty() {
            return Ok(false);
        }
    }
    let truthful = da_outcome(market, &w.truthful)?;
    let manipulated = da_outcome(market, &w.manipulated_profile())?;
    Ok(truthful == w.truthful_outcome
        && manipulated == w.manipulated_outcome
        && w.coalition.iter().all(|s| {
            let pref = w.truthful.preference(s);
            pref.outcome_rank(manipulated.of_student(s)) < pref.outcome_rank(truthful.of_student(s))
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, Abd};
    use crate::model::{Contract, Domain};

    fn caps() -> Caps {
        Caps::default()
    }

    /// Independent scan: every profile, every student, every alternative
    /// report, outcomes recomputed through the public API.
    fn naive_sp(market: &Market) -> bool {
        let space = ProfileSpace::new(market);
        let (_, flow) = space
            .visit(Coverage::Exhaustive, &caps(), |d| {
                let truth = space.profile(d);
                let out = da_outcome(market, &truth).unwrap();
                for (i, s) in market.students().iter().enumerate() {
                    let pref = truth.preference(s);
                    for alt in space.options(i) {
                        let mut p = truth.clone();
                        p.set(alt.clone());
                        let o = da_outcome(market, &p).unwrap();
                        if pref.outcome_rank(o.of_student(s)) < pref.outcome_rank(out.of_student(s))
                        {
                            return ControlFlow::Break(());
                        }
                    }
                }
                ControlFlow::Continue(())
            })
            .unwrap();
        flow.is_continue()
    }

    #[test]
    fn coalition_order() {
        assert_eq!(
            coalitions(3, 2),
            vec![
                vec![0],
                vec![1],
                vec![2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2]
            ]
        );
        assert_eq!(coalitions(2, 5).len(), 3);
    }

    #[test]
    fn e1_is_strategy_proof() {
        let r = check_strategy_proofness(&fixtures::e1_market(), Coverage::Exhaustive, &caps())
            .unwrap();
        assert!(r.passed());
        assert!(naive_sp(&fixtures::e1_market()));
    }

    #[test]
    fn group_strategy_proofness_examples() {
        let market = fixtures::e1_with_unit_college(fixtures::e1_ch1());
        assert!(
            check_group_strategy_proofness(&market, 3, Coverage::Exhaustive, &caps())
                .unwrap()
                .passed()
        );
        let prime = fixtures::e1_prime_market();
        assert!(
            check_group_strategy_proofness(&prime, 3, Coverage::Exhaustive, &caps())
                .unwrap()
                .passed()
        );
    }

    #[test]
    fn single_student_market_is_strategy_proof() {
        let t = Abd::new();
        let dom = Domain::new("c".into(), &t.order, [t.a.clone()]).unwrap();
        let cf = fixtures::table_from_fn(dom, |_| Default::default());
        let market = Market::new(
            t.order.clone(),
            ["c".into()],
            ["sa".into()],
            [t.a.clone()],
            vec![cf],
        )
        .unwrap();
        assert!(
            check_strategy_proofness(&market, Coverage::Exhaustive, &caps())
                .unwrap()
                .passed()
        );
    }

    #[test]
    fn coalition_of_one_matches_single_check() {
        for market in [
            fixtures::e1_market(),
            fixtures::f_osv_market(),
            fixtures::two_unit_colleges(),
        ] {
            let a = check_strategy_proofness(&market, Coverage::Exhaustive, &caps()).unwrap();
            let b =
                check_group_strategy_proofness(&market, 1, Coverage::Exhaustive, &caps()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.passed(), naive_sp(&market));
        }
    }

    #[test]
    fn group_pass_implies_single_pass() {
        for market in [
            fixtures::e1_market(),
            fixtures::f_osv_market(),
            fixtures::two_unit_colleges(),
        ] {
            for k in 1..=market.students().len() {
                let g = check_group_strategy_proofness(&market, k, Coverage::Exhaustive, &caps())
                    .unwrap();
                if g.passed() {
                    assert!(
                        check_strategy_proofness(&market, Coverage::Exhaustive, &caps())
                            .unwrap()
                            .passed()
                    );
                }
            }
        }
    }

    /// Two colleges with arbitrary single-term choice tables over three students.
    fn random_market(rng: &mut rand_chacha::ChaCha8Rng) -> Market {
        use rand::Rng;
        let order = Abd::new().order;
        let students = ["sa", "sb", "sd"];
        let mut universe = Vec::new();
        let mut profile = Vec::new();
        for college in ["c", "e"] {
            let contracts: Vec<Contract> = students
                .iter()
                .map(|s| Contract::new(college, s, "0"))
                .collect();
            let dom = Domain::new(college.into(), &order, contracts.clone()).unwrap();
            let table = crate::subset::submasks(dom.full())
                .map(|m| m & rng.gen::<u64>())
                .collect();
            profile.push(
                crate::choice::TabulatedChoice::from_masks(dom, table)
                    .unwrap()
                    .into_choice(),
            );
            universe.extend(contracts);
        }
        Market::new(
            order,
            ["c".into(), "e".into()],
            students.map(StudentId::from),
            universe,
            profile,
        )
        .unwrap()
    }

    #[test]
    fn manipulations_are_found_and_replay() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut found = 0;
        for _ in 0..40 {
            let market = random_market(&mut rng);
            let r = check_strategy_proofness(&market, Coverage::Exhaustive, &caps()).unwrap();
            assert_eq!(r.passed(), naive_sp(&market));
            let g =
                check_group_strategy_proofness(&market, 3, Coverage::Exhaustive, &caps()).unwrap();
            assert!(g.passed() <= r.passed());
            for report in [&r, &g] {
                if let Some(Witness::Manipulation(w)) = &report.witness {
                    found += 1;
                    assert!(replay_manipulation(&market, w).unwrap());
                    let mut tampered = w.clone();
                    tampered.manipulated_outcome = tampered.truthful_outcome.clone();
                    assert!(!replay_manipulation(&market, &tampered).unwrap());
                }
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn invalid_coalition_bound() {
        let m = fixtures::e1_market();
        assert!(check_group_strategy_proofness(&m, 0, Coverage::Exhaustive, &caps()).is_err());
        assert!(check_group_strategy_proofness(&m, 4, Coverage::Exhaustive, &caps()).is_err());
    }
}
