//! Invariants of the public API on randomly drawn rules and profiles.

use contract_match::audit::{
    check_irc, check_lad, check_observable_substitutes, check_substitutes,
    maximal_observable_subset,
};
use contract_match::choice::make_ranking;
use contract_match::da::da_outcome;
use contract_match::embed::{build_kc_economy, verify_isomorphism};
use contract_match::fixtures::{self, E1};
use contract_match::subset;
use contract_match::virtualize::virtual_choice;
use contract_match::{
    run_da, stability_verdict, Caps, ChoiceFunction, ContractSet, Market, MaximalMode,
    ProfileSpace, StabilityVerdict, StudentId,
};
use proptest::prelude::*;

fn caps() -> Caps {
    Caps {
        sequence_axioms: 9,
        ..Caps::default()
    }
}

/// A one-college market over every contract of `cf`.
fn solo_market(cf: ChoiceFunction) -> Market {
    let dom = cf.domain().clone();
    Market::new(
        dom.order().clone(),
        [dom.college().clone()],
        dom.students().iter().cloned(),
        dom.contracts().iter().cloned(),
        vec![cf],
    )
    .unwrap()
}

/// A ranking rule on the example domain over the allocations picked by `perm`.
fn ranking_rule(perm: &[usize]) -> ChoiceFunction {
    let dom = E1::new().domain();
    let sets: Vec<ContractSet> = subset::submasks(dom.full())
        .filter(|&m| dom.is_allocation(m))
        .map(|m| dom.set_of(m))
        .collect();
    let mut ranking: Vec<ContractSet> = Vec::new();
    for &i in perm {
        let set = &sets[i % sets.len()];
        if !ranking.contains(set) {
            ranking.push(set.clone());
        }
    }
    make_ranking(dom, &ranking).unwrap()
}

/// Some tie-free assignment-valuation rule near `seed`.
fn oxs_rule(seed: u64, students: usize, terms: usize) -> ChoiceFunction {
    (seed..)
        .find_map(|s| fixtures::random_oxs_choice(s, students, terms))
        .unwrap()
}

fn digits(space: &ProfileSpace, mut index: u64) -> Vec<usize> {
    space
        .radices()
        .iter()
        .map(|&r| {
            let d = (index % r as u64) as usize;
            index /= r as u64;
            d
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn ranking_rules_satisfy_irc(perm in prop::collection::vec(0usize..64, 1..12)) {
        let cf = ranking_rule(&perm);
        prop_assert!(check_irc(&cf, &caps()).unwrap().passed());
    }

    #[test]
    fn greedy_matches_enumeration_under_observable_substitutes(
        perm in prop::collection::vec(0usize..64, 1..12),
        offer in 0u64..64,
    ) {
        let cf = ranking_rule(&perm);
        prop_assume!(check_observable_substitutes(&cf, &caps()).unwrap().passed());
        let y = cf.domain().set_of(offer);
        let greedy = maximal_observable_subset(&cf, &y, MaximalMode::Greedy).unwrap();
        let checked = maximal_observable_subset(&cf, &y, MaximalMode::CrossChecked).unwrap();
        prop_assert_eq!(greedy, checked);
    }

    #[test]
    fn substitutable_rules_are_their_own_virtual_rule(seed in 0u64..500) {
        let cf = oxs_rule(seed, 3, 2);
        prop_assert!(check_substitutes(&cf, &caps()).unwrap().passed());
        prop_assert!(check_lad(&cf, &caps()).unwrap().passed());
        let v = virtual_choice(&cf, &caps()).unwrap();
        prop_assert!(v.same_choices(&cf));
    }

    #[test]
    fn da_is_stable_and_deterministic(seed in 0u64..500, index in any::<u64>()) {
        let market = solo_market(oxs_rule(seed, 3, 2));
        let space = ProfileSpace::new(&market);
        let d = digits(&space, index);
        prop_assert_eq!(space.digits_of(&space.profile(&d)), Some(d.clone()));
        let prefs = space.profile(&d);
        let trace = run_da(&market, &prefs).unwrap();
        prop_assert_eq!(&trace.outcome, &da_outcome(&market, &prefs).unwrap());
        prop_assert_eq!(&trace, &run_da(&market, &prefs).unwrap());
        prop_assert_eq!(
            stability_verdict(&trace.outcome, &market, &prefs).unwrap(),
            StabilityVerdict::Stable
        );
        for c in trace.outcome.contracts() {
            let s: &StudentId = &c.student;
            prop_assert!(prefs.preference(s).position(c).is_some());
        }
    }

    #[test]
    fn virtual_example_embeds(index in any::<u64>()) {
        let market = fixtures::e1_prime_market();
        let space = ProfileSpace::new(&market);
        let prefs = space.profile(&digits(&space, index));
        let (economy, iso) = build_kc_economy(&market, &prefs, &caps()).unwrap();
        let report = verify_isomorphism(&market, &prefs, &economy, &iso, &caps()).unwrap();
        prop_assert!(report.passed(), "{:?}", report);
    }
}
