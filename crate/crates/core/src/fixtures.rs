//! Canonical small markets used by tests, examples and the shipped data files.
//!
//! * `E1`: one college `c1`, students `s1..s3`, terms `1 ▷ 0`, with a
//!   non-substitutable choice function [`e1_ch1`] and its substitutable
//!   replacement [`e1_ch1_prime`]. The printed source of this example names
//!   `z' = (c1, s2, 1)`, which collides with `y'`; the fixture uses
//!   `z' = (c1, s3, 1)`.
//! * `F8`: colleges `c1` (the [`e1_ch1`] college) and `c2` ranking
//!   `{(s1,0)} ≻ {(s3,0)} ≻ ∅`, over the full product of contracts.
//! * `T-LAD`, `T-OSV`, `T-OLAD`: three-student, one-term tables over
//!   `{a, b, d}` violating the law of aggregate demand, observable
//!   substitutability, and the observable law of aggregate demand.
//! * `F-OSV`: the `T-OSV` college plus a unit-demand college `e`.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::choice::{
    make_bfyc, make_merit_over_need, make_quasilinear, make_ranking, make_unit_demand,
    ChoiceFunction, QuasiLinearValuation, TabulatedChoice,
};
use crate::model::{Contract, ContractSet, Domain, Market, StudentId, TermLabel, TermOrder};
use crate::subset;

/// Builds a table by evaluating `rule` on every subset of the domain.
pub fn table_from_fn(domain: Domain, rule: impl Fn(&ContractSet) -> ContractSet) -> ChoiceFunction {
    let rows: Vec<_> = subset::submasks(domain.full())
        .map(|m| {
            let offer = domain.set_of(m);
            let choice = rule(&offer);
            (offer, choice)
        })
        .collect();
    TabulatedChoice::from_rows(domain, rows)
        .expect("fixture table is well formed")
        .into_choice()
}

/// Names for the Example-1 contracts of college `c1`.
#[derive(Clone, Debug)]
pub struct E1 {
    pub order: TermOrder,
    pub x: Contract,
    pub xp: Contract,
    pub y: Contract,
    pub yp: Contract,
    pub z: Contract,
    pub zp: Contract,
}

impl Default for E1 {
    fn default() -> Self {
        Self::new()
    }
}

impl E1 {
    pub fn new() -> Self {
        E1 {
            order: TermOrder::new(["1", "0"]).unwrap(),
            x: Contract::new("c1", "s1", "0"),
            xp: Contract::new("c1", "s1", "1"),
            y: Contract::new("c1", "s2", "0"),
            yp: Contract::new("c1", "s2", "1"),
            z: Contract::new("c1", "s3", "0"),
            zp: Contract::new("c1", "s3", "1"),
        }
    }

    /// The universe in global order: `x', x, y', y, z', z`.
    pub fn universe(&self) -> Vec<Contract> {
        vec![
            self.xp.clone(),
            self.x.clone(),
            self.yp.clone(),
            self.y.clone(),
            self.zp.clone(),
            self.z.clone(),
        ]
    }

    pub fn domain(&self) -> Domain {
        Domain::new("c1".into(), &self.order, self.universe()).unwrap()
    }

    /// The single-college market with the given choice function for `c1`.
    pub fn market(&self, cf: ChoiceFunction) -> Market {
        Market::new(
            self.order.clone(),
            ["c1".into()],
            students(&["s1", "s2", "s3"]),
            self.universe(),
            vec![cf],
        )
        .unwrap()
    }
}

fn students(names: &[&str]) -> Vec<StudentId> {
    names.iter().map(|s| StudentId::new(s)).collect()
}

/// `Ch1`: `{x,y,z}` if all three are offered; else `{y}` if `y` is; else `{y'}` if `y'` is; else nothing.
pub fn e1_ch1() -> ChoiceFunction {
    let e = E1::new();
    table_from_fn(e.domain(), |offer| {
        let has = |c: &Contract| offer.contains(c);
        let pick = |cs: &[&Contract]| cs.iter().map(|c| (*c).clone()).collect();
        if has(&e.x) && has(&e.y) && has(&e.z) {
            pick(&[&e.x, &e.y, &e.z])
        } else if has(&e.y) {
            pick(&[&e.y])
        } else if has(&e.yp) {
            pick(&[&e.yp])
        } else {
            ContractSet::new()
        }
    })
}

/// `Ch1'`: `{y}` if `y` is offered; else `{y'}` if `y'` is; else nothing.
pub fn e1_ch1_prime() -> ChoiceFunction {
    let e = E1::new();
    table_from_fn(e.domain(), |offer| {
        if offer.contains(&e.y) {
            [e.y.clone()].into()
        } else if offer.contains(&e.yp) {
            [e.yp.clone()].into()
        } else {
            ContractSet::new()
        }
    })
}

/// E1 with `Ch1`.
pub fn e1_market() -> Market {
    let e = E1::new();
    e.market(e1_ch1())
}

/// E1 with `Ch1'`.
pub fn e1_prime_market() -> Market {
    let e = E1::new();
    e.market(e1_ch1_prime())
}

/// E1 plus a unit-demand college `e` whose only contract is `(e, s1, 0)`.
pub fn e1_with_unit_college(c1: ChoiceFunction) -> Market {
    let e = E1::new();
    let ae = Contract::new("e", "s1", "0");
    let dom = Domain::new("e".into(), &e.order, [ae.clone()]).unwrap();
    let unit = make_unit_demand(dom, std::slice::from_ref(&ae)).unwrap();
    let mut universe = e.universe();
    universe.push(ae);
    Market::new(
        e.order.clone(),
        ["c1".into(), "e".into()],
        students(&["s1", "s2", "s3"]),
        universe,
        vec![c1, unit],
    )
    .unwrap()
}

/// The two-college market: `c1` chooses by `Ch1`, `c2` by the ranking
/// `{(s1,0)} ≻ {(s3,0)} ≻ ∅`; every triple is a contract.
pub fn f8_market() -> Market {
    let e = E1::new();
    let c2: Vec<Contract> = ["s1", "s2", "s3"]
        .iter()
        .flat_map(|s| [Contract::new("c2", s, "1"), Contract::new("c2", s, "0")])
        .collect();
    let dom2 = Domain::new("c2".into(), &e.order, c2.clone()).unwrap();
    let ranking: Vec<ContractSet> = vec![
        [Contract::new("c2", "s1", "0")].into(),
        [Contract::new("c2", "s3", "0")].into(),
    ];
    let ch2 = make_ranking(dom2, &ranking).unwrap();
    let mut universe = e.universe();
    universe.extend(c2);
    Market::new(
        e.order.clone(),
        ["c1".into(), "c2".into()],
        students(&["s1", "s2", "s3"]),
        universe,
        vec![e1_ch1(), ch2],
    )
    .unwrap()
}

/// `c1`'s choice in F8 as the ranking `{x,y,z} ≻ {y} ≻ {y'} ≻ ∅`.
pub fn f8_c1_ranking() -> ChoiceFunction {
    let e = E1::new();
    let ranking: Vec<ContractSet> = vec![
        [e.x.clone(), e.y.clone(), e.z.clone()].into(),
        [e.y.clone()].into(),
        [e.yp.clone()].into(),
    ];
    make_ranking(e.domain(), &ranking).unwrap()
}

/// The `{a, b, d}` contracts of college `c`: one term `0`, students `sa, sb, sd`.
pub struct Abd {
    pub order: TermOrder,
    pub a: Contract,
    pub b: Contract,
    pub d: Contract,
}

impl Default for Abd {
    fn default() -> Self {
        Self::new()
    }
}

impl Abd {
    pub fn new() -> Self {
        Abd {
            order: TermOrder::new(["0"]).unwrap(),
            a: Contract::new("c", "sa", "0"),
            b: Contract::new("c", "sb", "0"),
            d: Contract::new("c", "sd", "0"),
        }
    }

    pub fn domain(&self) -> Domain {
        Domain::new(
            "c".into(),
            &self.order,
            [self.a.clone(), self.b.clone(), self.d.clone()],
        )
        .unwrap()
    }

    /// A table given by its non-singleton rows; singletons choose themselves.
    pub(crate) fn table(&self, rows: &[(&str, &str)]) -> ChoiceFunction {
        let named = |s: &str| -> ContractSet {
            s.chars()
                .map(|ch| match ch {
                    'a' => self.a.clone(),
                    'b' => self.b.clone(),
                    'd' => self.d.clone(),
                    _ => unreachable!(),
                })
                .collect()
        };
        let rows: BTreeMap<ContractSet, ContractSet> =
            rows.iter().map(|(o, c)| (named(o), named(c))).collect();
        table_from_fn(self.domain(), |offer| match rows.get(offer) {
            Some(c) => c.clone(),
            None if offer.len() <= 1 => offer.clone(),
            None => unreachable!("fixture row missing for {offer:?}"),
        })
    }
}

/// `T-LAD`: `Ch{a,b,d}={d}`, `Ch{a,b}={a,b}`, `Ch{a,d}={d}`, `Ch{b,d}={d}`.
pub fn t_lad() -> ChoiceFunction {
    Abd::new().table(&[("abd", "d"), ("ab", "ab"), ("ad", "d"), ("bd", "d")])
}

/// `T-OSV`: `Ch{a,b}={b}`, `Ch{a,b,d}={a,d}`, `Ch{a,d}={a,d}`, `Ch{b,d}={b,d}`.
pub fn t_osv() -> ChoiceFunction {
    Abd::new().table(&[("ab", "b"), ("abd", "ad"), ("ad", "ad"), ("bd", "bd")])
}

/// `T-OLAD`: the same rows as [`t_lad`]; it keeps observable substitutability
/// while breaking the observable law of aggregate demand.
pub fn t_olad() -> ChoiceFunction {
    Abd::new().table(&[("ab", "ab"), ("abd", "d"), ("ad", "d"), ("bd", "d")])
}

/// A market made of one `{a,b,d}` college `c`.
pub fn abd_market(c: ChoiceFunction) -> Market {
    let t = Abd::new();
    Market::new(
        t.order.clone(),
        ["c".into()],
        students(&["sa", "sb", "sd"]),
        [t.a.clone(), t.b.clone(), t.d.clone()],
        vec![c],
    )
    .unwrap()
}

/// `F-OSV`: `T-OSV` at `c` plus unit-demand `e` with priority `[(e,sa,0), (e,sd,0)]`.
pub fn f_osv_market() -> Market {
    let t = Abd::new();
    let ae = Contract::new("e", "sa", "0");
    let de = Contract::new("e", "sd", "0");
    let dom = Domain::new("e".into(), &t.order, [ae.clone(), de.clone()]).unwrap();
    let unit = make_unit_demand(dom, &[ae.clone(), de.clone()]).unwrap();
    Market::new(
        t.order.clone(),
        ["c".into(), "e".into()],
        students(&["sa", "sb", "sd"]),
        [t.a.clone(), t.b.clone(), t.d.clone(), ae, de],
        vec![t_osv(), unit],
    )
    .unwrap()
}

/// Two unit-demand colleges `a`, `b` competing for students `s1`, `s2`.
/// `a` prefers `s2`, `b` prefers `s1`.
pub fn two_unit_colleges() -> Market {
    let order = TermOrder::new(["0"]).unwrap();
    let c = |col: &str, s: &str| Contract::new(col, s, "0");
    let da = Domain::new("a".into(), &order, [c("a", "s1"), c("a", "s2")]).unwrap();
    let db = Domain::new("b".into(), &order, [c("b", "s1"), c("b", "s2")]).unwrap();
    let a = make_unit_demand(da, &[c("a", "s2"), c("a", "s1")]).unwrap();
    let b = make_unit_demand(db, &[c("b", "s1"), c("b", "s2")]).unwrap();
    Market::new(
        order,
        ["a".into(), "b".into()],
        students(&["s1", "s2"]),
        [c("a", "s1"), c("a", "s2"), c("b", "s1"), c("b", "s2")],
        vec![a, b],
    )
    .unwrap()
}

/// One member of every parametric family, on small domains.
pub fn family_samples() -> Vec<ChoiceFunction> {
    let e = E1::new();
    let three = TermOrder::new(["2", "1", "0"]).unwrap();
    let mut contracts = Vec::new();
    for s in ["s1", "s2", "s3"] {
        for t in ["2", "1", "0"] {
            contracts.push(Contract::new("c", s, t));
        }
    }
    let dom3 = Domain::new("c".into(), &three, contracts).unwrap();
    let merit: Vec<StudentId> = students(&["s2", "s3", "s1"]);
    let quotas: BTreeMap<TermLabel, usize> =
        [("0".into(), 1), ("1".into(), 2), ("2".into(), 3)].into();

    let quasi = QuasiLinearValuation {
        values: [
            (vec!["s1"], 7),
            (vec!["s2"], 5),
            (vec!["s3"], 3),
            (vec!["s1", "s2"], 11),
            (vec!["s1", "s3"], 9),
            (vec!["s2", "s3"], 8),
            (vec!["s1", "s2", "s3"], 13),
        ]
        .into_iter()
        .map(|(s, v)| {
            let set: BTreeSet<StudentId> = s.into_iter().map(StudentId::new).collect();
            (set, Rational64::new(4 * v + 1, 4))
        })
        .collect(),
        salaries: [
            ("1".into(), Rational64::new(5, 2)),
            ("0".into(), Rational64::new(1, 1)),
        ]
        .into(),
    };

    vec![
        make_unit_demand(
            e.domain(),
            &[e.z.clone(), e.xp.clone(), e.y.clone(), e.x.clone()],
        )
        .unwrap(),
        make_merit_over_need(dom3.clone(), &merit, &quotas).unwrap(),
        make_bfyc(dom3, &merit, 1, 1).unwrap(),
        make_quasilinear(&quasi, e.domain()).unwrap(),
        f8_c1_ranking(),
    ]
}

/// College `c` with students `s1..sn` and terms `k-1 ▷ … ▷ 0`, every
/// student holding one contract per term.
pub fn quasilinear_domain(students: usize, terms: usize) -> Domain {
    let labels: Vec<String> = (0..terms).rev().map(|t| t.to_string()).collect();
    let order = TermOrder::new(labels.iter().map(String::as_str)).unwrap();
    let mut contracts = Vec::new();
    for s in 1..=students {
        for t in &labels {
            contracts.push(Contract::new("c", &format!("s{s}"), t));
        }
    }
    Domain::new("c".into(), &order, contracts).unwrap()
}

fn random_salaries(rng: &mut ChaCha8Rng, terms: usize) -> BTreeMap<TermLabel, Rational64> {
    let mut levels: Vec<i64> = Vec::new();
    while levels.len() < terms {
        let v = rng.gen_range(1..=12);
        if !levels.contains(&v) {
            levels.push(v);
        }
    }
    levels.sort_unstable();
    // term `t` pays the `t`-th lowest salary, so more dominant terms pay more
    levels
        .into_iter()
        .enumerate()
        .map(|(t, v)| (TermLabel::new(&t.to_string()), Rational64::new(v, 2)))
        .collect()
}

fn valuation_over(
    students: usize,
    salaries: BTreeMap<TermLabel, Rational64>,
    value: impl Fn(&[usize]) -> i64,
) -> QuasiLinearValuation {
    let mut values = BTreeMap::new();
    for m in subset::submasks(subset::full(students)).skip(1) {
        let members: Vec<usize> = subset::bits(m).collect();
        let set: BTreeSet<StudentId> = members
            .iter()
            .map(|i| StudentId::new(&format!("s{}", i + 1)))
            .collect();
        values.insert(set, Rational64::from_integer(value(&members)));
    }
    QuasiLinearValuation { values, salaries }
}

/// A quasi-linear choice function whose valuation is an assignment
/// valuation: two positions, each student with a random productivity per
/// position, and a set worth its best matching onto the positions. Such
/// valuations are gross substitutes. `None` when the draw has ties.
pub fn random_oxs_choice(seed: u64, students: usize, terms: usize) -> Option<ChoiceFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<[i64; 2]> = (0..students)
        .map(|_| [rng.gen_range(1..=12), rng.gen_range(1..=12)])
        .collect();
    let salaries = random_salaries(&mut rng, terms);
    let v = valuation_over(students, salaries, |members| {
        let mut best = 0;
        for (i, &p) in members.iter().enumerate() {
            best = best.max(weights[p][0]).max(weights[p][1]);
            for &q in &members[i + 1..] {
                best = best
                    .max(weights[p][0] + weights[q][1])
                    .max(weights[p][1] + weights[q][0]);
            }
        }
        best
    });
    make_quasilinear(&v, quasilinear_domain(students, terms)).ok()
}

/// A quasi-linear choice function with an arbitrary random set valuation.
/// `None` when the draw has ties.
pub fn random_quasilinear_choice(
    seed: u64,
    students: usize,
    terms: usize,
) -> Option<ChoiceFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let salaries = random_salaries(&mut rng, terms);
    let draws: Vec<i64> = (0..1usize << students)
        .map(|_| rng.gen_range(0..=20))
        .collect();
    let v = valuation_over(students, salaries, |members| {
        let m: usize = members.iter().map(|i| 1 << i).sum();
        draws[m]
    });
    make_quasilinear(&v, quasilinear_domain(students, terms)).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_form_of_c1_is_ch1() {
        assert!(f8_c1_ranking().same_choices(&e1_ch1()));
    }

    #[test]
    fn t_olad_and_t_lad_share_rows() {
        assert!(t_lad().same_choices(&t_olad()));
    }

    #[test]
    fn fixtures_build() {
        assert_eq!(e1_market().universe().len(), 6);
        assert_eq!(f8_market().universe().len(), 12);
        assert_eq!(f_osv_market().universe().len(), 5);
        assert_eq!(e1_with_unit_college(e1_ch1()).universe().len(), 7);
        assert_eq!(family_samples().len(), 5);
    }
}
