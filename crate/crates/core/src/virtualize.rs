//! The virtual choice function and deferred-acceptance equivalence.
//!
//! For an observably substitutable `Ch`, the virtual choice function is
//!
//! ```text
//! Ch'(Y) = { x ∈ Y^min : x_S ∈ Ch(Y∨)_S }
//! ```
//!
//! where `Y∨` is the unique maximal observable subset of the upper closure
//! `U(Y)`. It depends on `Ch` alone and is materialized as a table.

use std::collections::HashMap;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::audit::{
    self, check_observable_lad, check_observable_substitutes, greedy_maximal, AuditReport, Witness,
};
use crate::choice::{tabulate, ChoiceFunction, TabulatedChoice};
use crate::da::{check_da_stability, da_outcome, Engine};
use crate::error::{Error, Result};
use crate::model::{Allocation, Caps, CollegeId, Market, PreferenceProfile};
use crate::profiles::{Coverage, ProfileSpace};
use crate::subset;

fn describe(w: &Witness) -> String {
    let list = |cs: &mut dyn Iterator<Item = String>| cs.collect::<Vec<_>>().join(", ");
    match w {
        Witness::ObservableRejections {
            sequence,
            rejected_before,
            rejected_after,
        } => format!(
            "sequence [{}] rejects {{{}}} before its last step and {{{}}} after",
            list(&mut sequence.iter().map(ToString::to_string)),
            list(&mut rejected_before.iter().map(ToString::to_string)),
            list(&mut rejected_after.iter().map(ToString::to_string)),
        ),
        other => format!("{other:?}"),
    }
}

/// Builds the virtual choice function of `cf`. Fails with
/// [`Error::Precondition`] when `cf` is not observably substitutable, since
/// `Y∨` is then not well defined.
pub fn virtual_choice(cf: &ChoiceFunction, caps: &Caps) -> Result<ChoiceFunction> {
    let report = check_observable_substitutes(cf, caps)?;
    if let Some(w) = &report.witness {
        return Err(Error::Precondition(format!(
            "{} is not observably substitutable: {}",
            cf.college(),
            describe(w)
        )));
    }
    // the output is a table, so the tabulation cap applies as well
    tabulate(cf, caps)?;
    let dom = cf.domain();
    let mut by_closure = HashMap::new();
    let table = subset::submasks(dom.full())
        .map(|y| {
            let closure = dom.upper_closure(y);
            let chosen_students = *by_closure.entry(closure).or_insert_with(|| {
                let vee = greedy_maximal(cf, closure);
                dom.student_set(cf.choose_mask(vee))
            });
            dom.restrict_to_students(dom.worst(y), chosen_students)
        })
        .collect();
    Ok(TabulatedChoice::from_masks(dom.clone(), table)?.into_choice())
}

/// The market with every college's choice function replaced by its virtual one.
pub fn virtual_profile(market: &Market, caps: &Caps) -> Result<Market> {
    let profile = market
        .profile()
        .iter()
        .map(|cf| virtual_choice(cf, caps))
        .collect::<Result<Vec<_>>>()?;
    market.with_profile(profile)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equivalence {
    Equivalent,
    Diverges,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub profile: PreferenceProfile,
    pub outcome: Allocation,
    pub against_outcome: Allocation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub verdict: Equivalence,
    pub profiles: u64,
    pub exhaustive: bool,
    pub witness: Option<Divergence>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EquivalenceReport {
    pub fn equivalent(&self) -> bool {
        self.verdict == Equivalence::Equivalent
    }
}

fn same_skeleton(a: &Market, b: &Market) -> Result<()> {
    if a.order() != b.order()
        || a.colleges() != b.colleges()
        || a.students() != b.students()
        || a.universe() != b.universe()
    {
        return Err(Error::Validation(
            "markets differ in terms, colleges, students or contracts".into(),
        ));
    }
    Ok(())
}

/// Compares deferred acceptance outcomes of two choice profiles over the same
/// contracts on every monotone preference profile (or a seeded sample).
pub fn check_da_equivalence(
    market: &Market,
    against: &Market,
    coverage: Coverage,
    caps: &Caps,
) -> Result<EquivalenceReport> {
    same_skeleton(market, against)?;
    let space = ProfileSpace::new(market);
    let (ea, eb) = (Engine::new(market), Engine::new(against));
    let (profiles, flow) = space.visit(coverage, caps, |digits| {
        let lists = space.lists(digits);
        let (ha, hb) = (ea.run(&lists, None), eb.run(&lists, None));
        if ha == hb {
            ControlFlow::Continue(())
        } else {
            ControlFlow::Break(Divergence {
                profile: space.profile(digits),
                outcome: ea.to_allocation(&ha),
                against_outcome: eb.to_allocation(&hb),
            })
        }
    })?;
    let witness = match flow {
        ControlFlow::Continue(()) => None,
        ControlFlow::Break(d) => Some(d),
    };
    let mut notes = Vec::new();
    if let Coverage::Sample { n, seed } = coverage {
        notes.push(format!("sampled {n} profiles with seed {seed}"));
    }
    Ok(EquivalenceReport {
        verdict: if witness.is_some() {
            Equivalence::Diverges
        } else {
            Equivalence::Equivalent
        },
        profiles,
        exhaustive: coverage.is_exhaustive(),
        witness,
        notes,
    })
}

/// Re-runs both deferred acceptance instances of a divergence.
pub fn replay_divergence(market: &Market, against: &Market, d: &Divergence) -> Result<bool> {
    let a = da_outcome(market, &d.profile)?;
    let b = da_outcome(against, &d.profile)?;
    Ok(a == d.outcome && b == d.against_outcome && a != b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollegeClassification {
    pub college: CollegeId,
    pub observable_substitutes: AuditReport,
    pub observable_lad: AuditReport,
    /// Substitutes, LAD and monotone-choice audits of the virtual choice
    /// function; empty when it was not constructed.
    pub virtual_audits: Vec<AuditReport>,
}

/// Membership of a choice profile in the domain where deferred acceptance is
/// stable and strategy-proof on monotone preferences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub member: bool,
    pub colleges: Vec<CollegeClassification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub da_stability: Option<AuditReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Classifies a profile by the observable axioms, then audits the virtual
/// profile. With `verify`, also checks equivalence of the two profiles and
/// stability of deferred acceptance over the given coverage.
pub fn classify_profile(
    market: &Market,
    verify: Option<Coverage>,
    caps: &Caps,
) -> Result<(Classification, Option<Market>)> {
    let mut colleges = Vec::new();
    for cf in market.profile() {
        colleges.push(CollegeClassification {
            college: cf.college().clone(),
            observable_substitutes: check_observable_substitutes(cf, caps)?,
            observable_lad: check_observable_lad(cf, caps)?,
            virtual_audits: Vec::new(),
        });
    }
    let member = colleges
        .iter()
        .all(|c| c.observable_substitutes.passed() && c.observable_lad.passed());
    let mut notes = Vec::new();
    if !member {
        notes.push("virtual profile not constructed: an observable axiom fails".into());
        return Ok((
            Classification {
                member,
                colleges,
                equivalence: None,
                da_stability: None,
                notes,
            },
            None,
        ));
    }
    let virt = virtual_profile(market, caps)?;
    for (entry, cf) in colleges.iter_mut().zip(virt.profile()) {
        entry.virtual_audits = vec![
            audit::check_substitutes(cf, caps)?,
            audit::check_lad(cf, caps)?,
            audit::check_monotone_choice(cf, caps)?,
        ];
    }
    if colleges
        .iter()
        .any(|c| c.virtual_audits.iter().any(|r| !r.passed()))
    {
        notes.push("virtual profile fails a set axiom".into());
    }
    let (equivalence, da_stability) = match verify {
        Some(coverage) => (
            Some(check_da_equivalence(market, &virt, coverage, caps)?),
            Some(check_da_stability(market, coverage, caps)?),
        ),
        None => {
            notes.push("equivalence and stability over preference profiles not verified".into());
            (None, None)
        }
    };
    Ok((
        Classification {
            member,
            colleges,
            equivalence,
            da_stability,
            notes,
        },
        Some(virt),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{check_demand_invariance, check_monotone_choice, maximal_mask, MaximalMode};
    use crate::choice::make_unit_demand;
    use crate::fixtures::{self, E1};
    use crate::model::{Contract, ContractSet, Domain, TermOrder};

    fn caps() -> Caps {
        Caps::default()
    }

    fn set(items: &[&Contract]) -> ContractSet {
        items.iter().map(|c| (*c).clone()).collect()
    }

    /// The construction spelled out on contract sets, with the maximal
    /// observable subset taken from full enumeration.
    fn oracle_virtual(cf: &ChoiceFunction, y: &ContractSet) -> ContractSet {
        let dom = cf.domain();
        let m = dom.mask_of(y).unwrap();
        let closure = dom.upper_closure(m);
        let vee = maximal_mask(cf, closure, MaximalMode::CrossChecked).unwrap();
        let students: std::collections::BTreeSet<_> = dom
            .set_of(cf.choose_mask(vee))
            .into_iter()
            .map(|c| c.student)
            .collect();
        dom.set_of(dom.worst(m))
            .into_iter()
            .filter(|c| students.contains(&c.student))
            .collect()
    }

    #[test]
    fn virtual_ch1_is_ch1_prime() {
        let e = E1::new();
        let ch1 = fixtures::e1_ch1();
        let v = virtual_choice(&ch1, &caps()).unwrap();
        assert!(v.same_choices(&fixtures::e1_ch1_prime()));
        assert_eq!(v.choose(&set(&[&e.x, &e.y, &e.z])).unwrap(), set(&[&e.y]));
        assert!(v.choose(&ContractSet::new()).unwrap().is_empty());
        assert_eq!(v.choose(&set(&[&e.y])).unwrap(), set(&[&e.y]));
        for r in [
            audit::check_substitutes(&v, &caps()).unwrap(),
            audit::check_lad(&v, &caps()).unwrap(),
            check_monotone_choice(&v, &caps()).unwrap(),
        ] {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn construction_matches_set_level_oracle() {
        let mut cfs = vec![
            fixtures::e1_ch1(),
            fixtures::e1_ch1_prime(),
            fixtures::t_olad(),
        ];
        cfs.extend(fixtures::family_samples());
        for cf in cfs {
            let Ok(v) = virtual_choice(&cf, &caps()) else {
                continue;
            };
            let dom = cf.domain();
            for m in subset::submasks(dom.full()) {
                let y = dom.set_of(m);
                assert_eq!(
                    v.choose(&y).unwrap(),
                    oracle_virtual(&cf, &y),
                    "{} on {y:?}",
                    cf.college()
                );
            }
        }
    }

    #[test]
    fn precondition_failure_is_reported() {
        let err = virtual_choice(&fixtures::t_osv(), &caps()).unwrap_err();
        assert!(
            matches!(err, Error::Precondition(ref m) if m.contains("sa")),
            "{err}"
        );
    }

    #[test]
    fn agrees_on_observable_sets() {
        let mut cfs = vec![fixtures::e1_ch1(), fixtures::t_olad()];
        cfs.extend(fixtures::family_samples());
        for cf in cfs {
            let Ok(v) = virtual_choice(&cf, &caps()) else {
                continue;
            };
            let dom = cf.domain();
            for m in subset::submasks(dom.full()) {
                if maximal_mask(&cf, m, MaximalMode::Greedy) == Ok(m) {
                    assert_eq!(v.choose_mask(m), cf.choose_mask(m));
                }
            }
        }
    }

    #[test]
    fn construction_is_local() {
        let alone = virtual_choice(&fixtures::e1_ch1(), &caps()).unwrap();
        let in_f8 = fixtures::f8_market();
        let with_unit = fixtures::e1_with_unit_college(fixtures::e1_ch1());
        for market in [in_f8, with_unit] {
            let v = virtual_profile(&market, &caps()).unwrap();
            assert!(v.choice(&"c1".into()).unwrap().same_choices(&alone));
        }
    }

    #[test]
    fn da_equivalence_examples() {
        let r = check_da_equivalence(
            &fixtures::e1_market(),
            &fixtures::e1_prime_market(),
            Coverage::Exhaustive,
            &caps(),
        )
        .unwrap();
        assert!(r.equivalent());
        assert_eq!(r.profiles, 27);
        let r = check_da_equivalence(
            &fixtures::e1_market(),
            &fixtures::e1_market(),
            Coverage::Exhaustive,
            &caps(),
        )
        .unwrap();
        assert!(r.equivalent());

        let olad = fixtures::abd_market(fixtures::t_olad());
        let virt = virtual_profile(&olad, &caps()).unwrap();
        let r = check_da_equivalence(&olad, &virt, Coverage::Exhaustive, &caps()).unwrap();
        if let Some(d) = &r.witness {
            assert!(replay_divergence(&olad, &virt, d).unwrap());
        }
    }

    #[test]
    fn divergence_replays() {
        let e = E1::new();
        let unit = make_unit_demand(e.domain(), std::slice::from_ref(&e.x)).unwrap();
        let other = e.market(unit);
        let r = check_da_equivalence(
            &fixtures::e1_market(),
            &other,
            Coverage::Exhaustive,
            &caps(),
        )
        .unwrap();
        assert_eq!(r.verdict, Equivalence::Diverges);
        let d = r.witness.unwrap();
        assert!(replay_divergence(&fixtures::e1_market(), &other, &d).unwrap());
        assert!(!replay_divergence(&fixtures::e1_market(), &fixtures::e1_market(), &d).unwrap());
    }

    #[test]
    fn mismatched_markets_are_rejected() {
        let r = check_da_equivalence(
            &fixtures::e1_market(),
            &fixtures::f8_market(),
            Coverage::Exhaustive,
            &caps(),
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn classification_examples() {
        let (c, virt) =
            classify_profile(&fixtures::e1_market(), Some(Coverage::Exhaustive), &caps()).unwrap();
        assert!(c.member);
        assert!(virt.unwrap().profile()[0].same_choices(&fixtures::e1_ch1_prime()));
        assert!(c.equivalence.unwrap().equivalent());
        assert!(c.da_stability.unwrap().passed());
        assert!(c.colleges[0].virtual_audits.iter().all(AuditReport::passed));

        let (c, virt) =
            classify_profile(&fixtures::abd_market(fixtures::t_osv()), None, &caps()).unwrap();
        assert!(!c.member && virt.is_none());
        assert!(c.colleges[0].observable_substitutes.witness.is_some());

        let (c, _) = classify_profile(
            &fixtures::two_unit_colleges(),
            Some(Coverage::Exhaustive),
            &caps(),
        )
        .unwrap();
        assert!(c.member);
    }

    /// Direction from equivalence to the observable axioms, on fixtures where
    /// both sides are checked empirically.
    #[test]
    fn verified_profiles_satisfy_observable_axioms() {
        let cases = [
            (fixtures::e1_market(), fixtures::e1_prime_market()),
            (fixtures::two_unit_colleges(), fixtures::two_unit_colleges()),
        ];
        for (market, against) in cases {
            let subs_lad = against.profile().iter().all(|cf| {
                audit::check_substitutes(cf, &caps()).unwrap().passed()
                    && audit::check_lad(cf, &caps()).unwrap().passed()
            });
            let eq =
                check_da_equivalence(&market, &against, Coverage::Exhaustive, &caps()).unwrap();
            let stable = check_da_stability(&market, Coverage::Exhaustive, &caps()).unwrap();
            assert!(subs_lad && eq.equivalent() && stable.passed());
            for cf in market.profile() {
                assert!(check_observable_substitutes(cf, &caps()).unwrap().passed());
                assert!(check_observable_lad(cf, &caps()).unwrap().passed());
            }
        }
    }

    #[test]
    fn quasilinear_choice_is_its_own_virtual_choice() {
        let mut built = 0;
        for seed in 0..40 {
            let Some(cf) = fixtures::random_oxs_choice(seed, 4, 2) else {
                continue;
            };
            built += 1;
            assert!(check_monotone_choice(&cf, &caps()).unwrap().passed());
            assert!(check_demand_invariance(&cf, &caps()).unwrap().passed());
            let v = virtual_choice(&cf, &caps()).unwrap();
            assert!(v.same_choices(&cf), "seed {seed}");
        }
        assert!(built >= 5);
    }

    #[test]
    fn quasilinear_with_arbitrary_values() {
        // outside the gross-substitutes class the construction is only defined
        // when the observable precondition holds; where it does, it is the identity
        for seed in 0..40 {
            let Some(cf) = fixtures::random_quasilinear_choice(seed, 3, 2) else {
                continue;
            };
            if let Ok(v) = virtual_choice(&cf, &caps()) {
                assert!(v.same_choices(&cf), "seed {seed}");
            }
        }
    }

    #[test]
    fn single_term_unit_demand_is_fixed() {
        let order = TermOrder::new(["0"]).unwrap();
        let a = Contract::new("c", "sa", "0");
        let b = Contract::new("c", "sb", "0");
        let dom = Domain::new("c".into(), &order, [a.clone(), b.clone()]).unwrap();
        let cf = make_unit_demand(dom, &[b, a]).unwrap();
        assert!(virtual_choice(&cf, &caps()).unwrap().same_choices(&cf));
    }
}
