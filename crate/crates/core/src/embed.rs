//! Embedding a substitutable, monotone choice profile into a salary economy
//! with firms, workers and integer salaries.
//!
//! Each college's choice function is rationalized by a strict order over its
//! allocations; firm utilities are ranks in that order. Each student-college
//! chain of contracts is mapped to salaries `|T|, |T|-1, …` from the dominant
//! term down, and worker utilities are ranks in the student's preference.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditReport, Axiom, Witness};
use crate::choice::ChoiceFunction;
use crate::error::{Error, Result};
use crate::model::{Caps, CollegeId, Contract, ContractSet, Market, PreferenceProfile, StudentId};
use crate::subset::{self, Mask};

fn rationalize_masks(cf: &ChoiceFunction, caps: &Caps) -> Result<Vec<Mask>> {
    let dom = cf.domain();
    caps.check_set(dom)?;
    let mut nodes = dom.allocations_within(dom.full());
    nodes.sort_by(|&a, &b| subset::lex_cmp(a, b));
    let index: HashMap<Mask, usize> = nodes.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let n = nodes.len();
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];

    // revealed preference: the choice from A beats every other allocation inside A
    for &a in &nodes {
        let c = index[&cf.choose_mask(a)];
        for b in subset::submasks(a) {
            let b = index[&b];
            if b != c {
                succ[c].insert(b);
            }
        }
    }
    // same students, pointwise less dominant terms: the cheaper allocation is better
    for &y in &nodes {
        for &z in &nodes {
            if y != z && cheaper_or_equal(dom, z, y) {
                succ[index[&z]].insert(index[&y]);
            }
        }
    }

    let mut indegree = vec![0usize; n];
    for s in &succ {
        for &v in s {
            indegree[v] += 1;
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &w in &succ[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                ready.insert(w);
            }
        }
    }
    if order.len() < n {
        let placed: BTreeSet<usize> = order.iter().copied().collect();
        let cycle = find_cycle(&succ, &placed);
        let shown: Vec<String> = cycle
            .iter()
            .map(|&v| format!("{:?}", dom.set_of(nodes[v])))
            .collect();
        return Err(Error::Rationalization(format!(
            "revealed preferences of {} are cyclic: {}",
            cf.college(),
            shown.join(" ≻ ")
        )));
    }
    let ranked: Vec<Mask> = order.into_iter().map(|v| nodes[v]).collect();

    let position: HashMap<Mask, usize> = ranked.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    for &a in &nodes {
        let best = subset::submasks(a).min_by_key(|b| position[b]).unwrap();
        if best != cf.choose_mask(a) {
            return Err(Error::Rationalization(format!(
                "order does not rationalize {} at {:?}",
                cf.college(),
                dom.set_of(a)
            )));
        }
    }
    Ok(ranked)
}

/// Whether allocations `z` and `y` cover the same students and each of `z`'s
/// terms is weakly less dominant than the matching term in `y`.
fn cheaper_or_equal(dom: &crate::model::Domain, z: Mask, y: Mask) -> bool {
    if dom.student_set(z) != dom.student_set(y) {
        return false;
    }
    (0..dom.students().len()).all(|s| {
        let sm = dom.student_mask(s);
        let (zi, yi) = (z & sm, y & sm);
        zi == 0 || zi.trailing_zeros() >= yi.trailing_zeros()
    })
}

fn find_cycle(succ: &[BTreeSet<usize>], placed: &BTreeSet<usize>) -> Vec<usize> {
    let start = (0..succ.len()).find(|v| !placed.contains(v)).unwrap();
    let mut path = vec![start];
    let mut on_path: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    loop {
        let v = *path.last().unwrap();
        // every unplaced node keeps an unplaced predecessor, so walk edges backwards
        let u = (0..succ.len())
            .find(|&u| !placed.contains(&u) && succ[u].contains(&v))
            .expect("unplaced node has an unplaced predecessor");
        if let Some(&i) = on_path.get(&u) {
            let mut cycle: Vec<usize> = path[i..].to_vec();
            cycle.reverse();
            return cycle;
        }
        on_path.insert(u, path.len());
        path.push(u);
    }
}

/// A strict order over the college's allocations, best first, whose maximum
/// over the subsets of any allocation `A` is `Ch(A)`. Built by topological
/// sort of revealed and monotonicity comparisons, breaking ties by the
/// lexicographically first allocation, and verified before it is returned.
pub fn rationalize_allocation_order(cf: &ChoiceFunction, caps: &Caps) -> Result<Vec<ContractSet>> {
    let dom = cf.domain();
    Ok(rationalize_masks(cf, caps)?
        .into_iter()
        .map(|m| dom.set_of(m))
        .collect())
}

/// Whether, for every allocation `A` with `Ch(A) ⊆ A`, every allocation
/// ranked strictly between `Ch(A)` and `A` is a subset of `A`.
pub fn between_condition_holds(cf: &ChoiceFunction, order: &[ContractSet]) -> Result<bool> {
    let dom = cf.domain();
    let masks: Vec<Mask> = order
        .iter()
        .map(|a| dom.mask_of(a))
        .collect::<Result<_>>()?;
    let position: HashMap<Mask, usize> = masks.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    Ok(masks.iter().all(|&a| {
        let lo = position[&cf.choose_mask(a)];
        let hi = position[&a];
        lo >= hi || masks[lo + 1..hi].iter().all(|&b| b & !a == 0)
    }))
}

/// A firm-worker-salary triple.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Position {
    pub firm: CollegeId,
    pub worker: StudentId,
    pub salary: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmUtility {
    /// `(worker, salary)` pairs, sorted.
    pub bundle: Vec<(StudentId, u32)>,
    pub utility: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerOffer {
    pub firm: CollegeId,
    pub salary: u32,
    pub utility: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerUtility {
    pub outside: i64,
    pub offers: Vec<WorkerOffer>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KelsoCrawfordEconomy {
    pub firms: Vec<CollegeId>,
    pub workers: Vec<StudentId>,
    pub salaries: Vec<u32>,
    /// Utilities of the bundles that correspond to allocations in the universe.
    pub firm_utilities: BTreeMap<CollegeId, Vec<FirmUtility>>,
    pub worker_utilities: BTreeMap<StudentId, WorkerUtility>,
}

impl KelsoCrawfordEconomy {
    pub fn firm_utility(&self, firm: &CollegeId, bundle: &[(StudentId, u32)]) -> Option<i64> {
        self.firm_utilities
            .get(firm)?
            .iter()
            .find(|u| u.bundle == bundle)
            .map(|u| u.utility)
    }

    pub fn worker_utility(&self, worker: &StudentId, firm: &CollegeId, salary: u32) -> Option<i64> {
        self.worker_utilities
            .get(worker)?
            .offers
            .iter()
            .find(|o| &o.firm == firm && o.salary == salary)
            .map(|o| o.utility)
    }

    pub fn outside_utility(&self, worker: &StudentId) -> Option<i64> {
        self.worker_utilities.get(worker).map(|u| u.outside)
    }

    /// Workers' utilities strictly increase in salary at each firm, and firms'
    /// utilities strictly decrease when salaries of the same workers rise.
    pub fn check_monotone(&self) -> std::result::Result<(), String> {
        for (w, u) in &self.worker_utilities {
            for a in &u.offers {
                for b in &u.offers {
                    if a.firm == b.firm && a.salary > b.salary && a.utility <= b.utility {
                        return Err(format!(
                            "worker {w}: salary {} at {} is not better than {}",
                            a.salary, a.firm, b.salary
                        ));
                    }
                }
            }
        }
        for (f, bundles) in &self.firm_utilities {
            for a in bundles {
                for b in bundles {
                    let same_workers = a.bundle.len() == b.bundle.len()
                        && a.bundle.iter().zip(&b.bundle).all(|(x, y)| x.0 == y.0);
                    let cheaper = a.bundle.iter().zip(&b.bundle).all(|(x, y)| x.1 <= y.1);
                    if same_workers && cheaper && a.bundle != b.bundle && a.utility <= b.utility {
                        return Err(format!(
                            "firm {f}: {:?} is not better than {:?}",
                            a.bundle, b.bundle
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The bijection between contract triples and firm-worker-salary triples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Isomorphism {
    pub mapping: Vec<(Contract, Position)>,
}

impl Isomorphism {
    pub fn image(&self, c: &Contract) -> Option<&Position> {
        self.mapping.iter().find(|(x, _)| x == c).map(|(_, p)| p)
    }

    fn bundle(&self, contracts: &ContractSet) -> Option<Vec<(StudentId, u32)>> {
        let mut out: Vec<(StudentId, u32)> = contracts
            .iter()
            .map(|c| self.image(c).map(|p| (p.worker.clone(), p.salary)))
            .collect::<Option<_>>()?;
        out.sort();
        Some(out)
    }
}

/// Salaries for every triple: each chain's universe contracts take
/// `|T|, |T|-1, …` from the dominant term down; missing terms take the
/// remaining salaries in term order.
fn salary_map(market: &Market) -> BTreeMap<Contract, u32> {
    let top = market.order().len() as u32;
    let mut out = BTreeMap::new();
    for c in market.colleges() {
        for s in market.students() {
            let chain: Vec<Contract> = market
                .order()
                .terms()
                .iter()
                .map(|t| Contract {
                    college: c.clone(),
                    student: s.clone(),
                    term: t.clone(),
                })
                .collect();
            let (inside, outside): (Vec<&Contract>, Vec<&Contract>) =
                chain.iter().partition(|x| market.contains(x));
            for (k, x) in inside.into_iter().chain(outside).enumerate() {
                out.insert(x.clone(), top - k as u32);
            }
        }
    }
    out
}

/// Builds the economy and bijection for a profile that is substitutable, has
/// the law of aggregate demand, and is monotone in terms (a virtual profile).
pub fn build_kc_economy(
    market: &Market,
    prefs: &PreferenceProfile,
    caps: &Caps,
) -> Result<(KelsoCrawfordEconomy, Isomorphism)> {
    prefs.validate(market)?;
    let salary = salary_map(market);
    let iso = Isomorphism {
        mapping: salary
            .iter()
            .map(|(c, &sigma)| {
                (
                    c.clone(),
                    Position {
                        firm: c.college.clone(),
                        worker: c.student.clone(),
                        salary: sigma,
                    },
                )
            })
            .collect(),
    };

    let mut firm_utilities = BTreeMap::new();
    for cf in market.profile() {
        let order = rationalize_allocation_order(cf, caps)?;
        let n = order.len() as i64;
        let utilities = order
            .iter()
            .enumerate()
            .map(|(i, a)| FirmUtility {
                bundle: iso.bundle(a).expect("every contract is mapped"),
                utility: n - i as i64,
            })
            .collect();
        firm_utilities.insert(cf.college().clone(), utilities);
    }

    let mut worker_utilities = BTreeMap::new();
    for s in market.students() {
        let list = prefs.acceptable(s);
        let mut unlisted: Vec<(u32, &CollegeId)> = salary
            .iter()
            .filter(|(c, _)| &c.student == s && !list.contains(c))
            .map(|(c, &sigma)| (sigma, &c.college))
            .collect();
        unlisted.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        let offers = salary
            .iter()
            .filter(|(c, _)| &c.student == s)
            .map(|(c, &sigma)| {
                let utility = match list.iter().position(|x| x == c) {
                    Some(p) => (list.len() - p) as i64,
                    None => {
                        let k = unlisted
                            .iter()
                            .position(|u| *u == (sigma, &c.college))
                            .unwrap();
                        -1 - k as i64
                    }
                };
                WorkerOffer {
                    firm: c.college.clone(),
                    salary: sigma,
                    utility,
                }
            })
            .collect();
        worker_utilities.insert(s.clone(), WorkerUtility { outside: 0, offers });
    }

    let economy = KelsoCrawfordEconomy {
        firms: market.colleges().to_vec(),
        workers: market.students().to_vec(),
        salaries: (1..=market.order().len() as u32).collect(),
        firm_utilities,
        worker_utilities,
    };
    economy.check_monotone().map_err(Error::Rationalization)?;
    Ok((economy, iso))
}

fn fail(condition: u8, detail: String) -> ControlFlow<Witness> {
    ControlFlow::Break(Witness::Isomorphism { condition, detail })
}

/// Exhaustively checks the four isomorphism conditions: (1) the bijection
/// preserves college and student, (2) worker utilities agree with
/// preferences, (3) each college's choice equals the utility-maximal bundle
/// among subsets of `Y^min`, (4) triples outside the universe rank below the
/// outside option.
pub fn verify_isomorphism(
    market: &Market,
    prefs: &PreferenceProfile,
    economy: &KelsoCrawfordEconomy,
    iso: &Isomorphism,
    caps: &Caps,
) -> Result<AuditReport> {
    for cf in market.profile() {
        caps.check_set(cf.domain())?;
    }
    let mut cases = 0u64;
    let flow = (|| {
        // (1)
        let triples = market.all_triples();
        let expected_salaries: Vec<u32> = (1..=market.order().len() as u32).collect();
        if economy.firms != market.colleges()
            || economy.workers != market.students()
            || economy.salaries != expected_salaries
        {
            return fail(
                1,
                "firms, workers or salaries do not match the market".into(),
            );
        }
        let domain: BTreeSet<&Contract> = iso.mapping.iter().map(|(c, _)| c).collect();
        let images: BTreeSet<&Position> = iso.mapping.iter().map(|(_, p)| p).collect();
        if domain.len() != iso.mapping.len()
            || images.len() != iso.mapping.len()
            || domain != triples.iter().collect()
        {
            return fail(
                1,
                "mapping is not a bijection on all contract triples".into(),
            );
        }
        for (c, p) in &iso.mapping {
            cases += 1;
            if p.firm != c.college || p.worker != c.student || !economy.salaries.contains(&p.salary)
            {
                return fail(
                    1,
                    format!("{c} maps to ({}, {}, {})", p.firm, p.worker, p.salary),
                );
            }
        }
        let u = |c: &Contract| -> Option<i64> {
            let p = iso.image(c)?;
            economy.worker_utility(&p.worker, &p.firm, p.salary)
        };

        // (2)
        for s in market.students() {
            let pref = prefs.preference(s);
            let outside = match economy.outside_utility(s) {
                Some(o) => o,
                None => return fail(2, format!("worker {s} has no utility")),
            };
            let mine = market.contracts_of_student(s);
            for x in &mine {
                let Some(ux) = u(x) else {
                    return fail(2, format!("no utility for {x}"));
                };
                cases += 1;
                if (pref.position(x).is_some()) != (ux > outside) {
                    return fail(2, format!("worker {s}: {x} against the outside option"));
                }
                for y in &mine {
                    let (rx, ry) = (pref.position(x), pref.position(y));
                    if x == y || (rx.is_none() && ry.is_none()) {
                        continue;
                    }
                    cases += 1;
                    let prefers = pref.outcome_rank(Some(x)) < pref.outcome_rank(Some(y));
                    if prefers != (ux > u(y).unwrap_or(i64::MIN)) {
                        return fail(2, format!("worker {s}: {x} vs {y}"));
                    }
                }
            }
        }

        // (3)
        for cf in market.profile() {
            let dom = cf.domain();
            let firm = cf.college();
            for y in subset::submasks(dom.full()) {
                cases += 1;
                let mut best: Option<(i64, Mask)> = None;
                let mut tied = false;
                for b in subset::submasks(dom.worst(y)) {
                    let Some(v) = iso
                        .bundle(&dom.set_of(b))
                        .and_then(|k| economy.firm_utility(firm, &k))
                    else {
                        return fail(
                            3,
                            format!("firm {firm} has no utility for {:?}", dom.set_of(b)),
                        );
                    };
                    match best {
                        Some((bv, _)) if v < bv => {}
                        Some((bv, _)) if v == bv => tied = true,
                        _ => {
                            best = Some((v, b));
                            tied = false;
                        }
                    }
                }
                let (_, arg) = best.expect("the empty bundle is always available");
                if tied || arg != cf.choose_mask(y) {
                    return fail(
                        3,
                        format!(
                            "firm {firm} at {:?}: choice {:?}, best bundle {:?}",
                            dom.set_of(y),
                            dom.set_of(cf.choose_mask(y)),
                            dom.set_of(arg)
                        ),
                    );
                }
            }
        }

        // (4)
        for c in triples.iter().filter(|c| !market.contains(c)) {
            cases += 1;
            let outside = economy.outside_utility(&c.student).unwrap_or(i64::MIN);
            match u(c) {
                Some(v) if v < outside => {}
                _ => {
                    return fail(
                        4,
                        format!("{c} is outside the universe but not below the outside option"),
                    )
                }
            }
        }
        ControlFlow::Continue(())
    })();
    Ok(AuditReport::from_flow(
        Axiom::Isomorphism,
        "market",
        cases,
        flow,
    ))
}
