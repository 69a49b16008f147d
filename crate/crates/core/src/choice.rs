//! College choice functions.
//!
//! A [`ChoiceFunction`] is a rule over the subsets of one college's contract
//! domain `X_c`. Every constructor guarantees `Ch(Y) ⊆ Y` and at most one chosen
//! contract per student; irrelevance of rejected contracts is *not* assumed and
//! is checked by [`crate::audit::check_irc`].
//!
//! Functions over domains of up to [`TABLE_CACHE_LIMIT`] contracts are
//! materialized into a lookup table at construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use num_rational::Rational64;

use crate::error::{Error, Result};
use crate::model::{Caps, CollegeId, Contract, ContractSet, Domain, StudentId, TermLabel};
use crate::subset::{self, Mask};

/// Domains up to this size are tabulated eagerly.
pub const TABLE_CACHE_LIMIT: usize = 16;

#[derive(Clone, Debug)]
enum Rule {
    Table(Arc<Vec<Mask>>),
    /// Local contract indices, highest priority first.
    UnitDemand(Vec<usize>),
    /// Acceptable allocations, best first.
    Ranking(Vec<Mask>),
    MeritOverNeed {
        merit: Vec<usize>,
        /// Cumulative capacity indexed by term rank: at most `quotas[r]`
        /// chosen contracts may carry a stipend no larger than that of term `r`.
        quotas: Vec<usize>,
    },
    Bfyc {
        merit: Vec<usize>,
        q1: usize,
        q2: usize,
    },
    /// Best bundle for each allocation playing the role of `Y^min`.
    QuasiLinear(Arc<HashMap<Mask, Mask>>),
}

/// A college's selection rule over subsets of its contracts.
#[derive(Clone, Debug)]
pub struct ChoiceFunction {
    domain: Domain,
    rule: Rule,
    table: Option<Arc<Vec<Mask>>>,
    family: &'static str,
}

impl ChoiceFunction {
    fn build(domain: Domain, rule: Rule, family: &'static str) -> Self {
        let mut cf = ChoiceFunction {
            domain,
            rule,
            table: None,
            family,
        };
        if let Rule::Table(t) = &cf.rule {
            cf.table = Some(t.clone());
        } else if cf.domain.len() <= TABLE_CACHE_LIMIT {
            let table = subset::submasks(cf.domain.full())
                .map(|m| cf.evaluate(m))
                .collect();
            cf.table = Some(Arc::new(table));
        }
        cf
    }

    pub fn college(&self) -> &CollegeId {
        self.domain.college()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Name of the family the function was built from.
    pub fn family(&self) -> &'static str {
        self.family
    }

    /// `Ch(Y)` for `Y` given as a mask over the domain.
    #[inline]
    pub fn choose_mask(&self, m: Mask) -> Mask {
        debug_assert_eq!(m & !self.domain.full(), 0);
        match &self.table {
            Some(t) => t[m as usize],
            None => self.evaluate(m),
        }
    }

    /// `R(Y) = Y \ Ch(Y)` as a mask.
    #[inline]
    pub fn reject_mask(&self, m: Mask) -> Mask {
        m & !self.choose_mask(m)
    }

    pub fn choose(&self, y: &ContractSet) -> Result<ContractSet> {
        let m = self.domain.mask_of(y)?;
        Ok(self.domain.set_of(self.choose_mask(m)))
    }

    pub fn rejected(&self, y: &ContractSet) -> Result<ContractSet> {
        let m = self.domain.mask_of(y)?;
        Ok(self.domain.set_of(self.reject_mask(m)))
    }

    /// Extensional equality over every subset of a shared domain.
    pub fn same_choices(&self, other: &ChoiceFunction) -> bool {
        self.domain == other.domain
            && subset::submasks(self.domain.full())
                .all(|m| self.choose_mask(m) == other.choose_mask(m))
    }

    fn evaluate(&self, m: Mask) -> Mask {
        let dom = &self.domain;
        match &self.rule {
            Rule::Table(t) => t[m as usize],
            Rule::UnitDemand(priority) => priority
                .iter()
                .find(|&&i| subset::contains(m, i))
                .map_or(0, |&i| subset::bit(i)),
            Rule::Ranking(ranked) => ranked.iter().copied().find(|a| a & !m == 0).unwrap_or(0),
            Rule::MeritOverNeed { merit, quotas } => {
                // used[r]: chosen contracts with term rank exactly r
                let mut used = vec![0usize; quotas.len()];
                let mut chosen = 0;
                for &s in merit {
                    let mine = m & dom.student_mask(s);
                    // least stipend first, i.e. least dominant term first
                    let mut candidates: Vec<usize> = subset::bits(mine).collect();
                    candidates.reverse();
                    for i in candidates {
                        let r = dom.rank(i);
                        let fits = (0..=r).all(|level| {
                            let at_or_below: usize = used[level..].iter().sum();
                            at_or_below < quotas[level]
                        });
                        if fits {
                            used[r] += 1;
                            chosen |= subset::bit(i);
                            break;
                        }
                    }
                }
                chosen
            }
            Rule::Bfyc { merit, q1, q2 } => {
                let mut chosen = 0;
                let present = merit.iter().filter(|&&s| m & dom.student_mask(s) != 0);
                for (k, &s) in present.enumerate() {
                    let mine = m & dom.student_mask(s);
                    if k < *q1 {
                        chosen |= subset::bit(mine.trailing_zeros() as usize);
                    } else if k < q1 + q2 {
                        chosen |= subset::bit(63 - mine.leading_zeros() as usize);
                    } else {
                        break;
                    }
                }
                chosen
            }
            Rule::QuasiLinear(best) => best.get(&dom.worst(m)).copied().unwrap_or(0),
        }
    }
}

/// A choice function given as an explicit table over every subset of its domain.
#[derive(Clone, Debug)]
pub struct TabulatedChoice {
    domain: Domain,
    table: Arc<Vec<Mask>>,
}

impl TabulatedChoice {
    /// `table[m]` is the choice from the subset with mask `m`.
    pub fn from_masks(domain: Domain, table: Vec<Mask>) -> Result<Self> {
        let expected = 1usize
            .checked_shl(domain.len() as u32)
            .ok_or_else(|| Error::capacity("table domain", domain.len() as u64, 30))?;
        if table.len() != expected {
            return Err(Error::Validation(format!(
                "table for {} has {} rows, expected {expected}",
                domain.college(),
                table.len()
            )));
        }
        for (m, &ch) in table.iter().enumerate() {
            let m = m as Mask;
            if ch & !m != 0 {
                return Err(Error::Validation(format!(
                    "table for {}: choice {:?} from {:?} is not a subset of the offer",
                    domain.college(),
                    domain.set_of(ch),
                    domain.set_of(m)
                )));
            }
            if !domain.is_allocation(ch) {
                return Err(Error::Validation(format!(
                    "table for {}: choice {:?} holds two contracts of one student",
                    domain.college(),
                    domain.set_of(ch)
                )));
            }
        }
        Ok(TabulatedChoice {
            domain,
            table: Arc::new(table),
        })
    }

    /// Builds a table from `(offer, choice)` rows; every subset must appear exactly once.
    pub fn from_rows<I>(domain: Domain, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ContractSet, ContractSet)>,
    {
        if domain.len() > 30 {
            return Err(Error::capacity("table domain", domain.len() as u64, 30));
        }
        let mut table: Vec<Option<Mask>> = vec![None; 1usize << domain.len()];
        for (offer, choice) in rows {
            let m = domain.mask_of(&offer)?;
            let ch = domain.mask_of(&choice)?;
            if table[m as usize].replace(ch).is_some() {
                return Err(Error::Validation(format!(
                    "table for {} lists offer {offer:?} twice",
                    domain.college()
                )));
            }
        }
        let mut out = Vec::with_capacity(table.len());
        for (m, row) in table.into_iter().enumerate() {
            match row {
                Some(ch) => out.push(ch),
                None => {
                    return Err(Error::Validation(format!(
                        "table for {} has no row for offer {:?}",
                        domain.college(),
                        domain.set_of(m as Mask)
                    )))
                }
            }
        }
        Self::from_masks(domain, out)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn lookup(&self, m: Mask) -> Mask {
        self.table[m as usize]
    }

    /// `(offer, choice)` pairs in ascending mask order.
    pub fn rows(&self) -> impl Iterator<Item = (ContractSet, ContractSet)> + '_ {
        self.table
            .iter()
            .enumerate()
            .map(|(m, &ch)| (self.domain.set_of(m as Mask), self.domain.set_of(ch)))
    }

    pub fn into_choice(self) -> ChoiceFunction {
        ChoiceFunction::from(self)
    }
}

impl From<TabulatedChoice> for ChoiceFunction {
    fn from(t: TabulatedChoice) -> Self {
        ChoiceFunction::build(t.domain, Rule::Table(t.table), "table")
    }
}

/// Materializes `cf` as an explicit table over `2^{|X_c|}` subsets.
pub fn tabulate(cf: &ChoiceFunction, caps: &Caps) -> Result<TabulatedChoice> {
    crate::model::cap_check(
        "college domain (tabulate)",
        cf.domain.len(),
        caps.tabulate.min(30),
    )?;
    let table = match &cf.table {
        Some(t) => t.clone(),
        None => Arc::new(
            subset::submasks(cf.domain.full())
                .map(|m| cf.evaluate(m))
                .collect(),
        ),
    };
    Ok(TabulatedChoice {
        domain: cf.domain.clone(),
        table,
    })
}

fn local_index(domain: &Domain, c: &Contract) -> Result<usize> {
    if &c.college != domain.college() {
        return Err(Error::Domain(format!(
            "contract {c} does not belong to college {}",
            domain.college()
        )));
    }
    domain
        .index_of(c)
        .ok_or_else(|| Error::Domain(format!("contract {c} is outside the college's domain")))
}

fn merit_indices(domain: &Domain, merit: &[StudentId]) -> Result<Vec<usize>> {
    let distinct: BTreeSet<_> = merit.iter().collect();
    if distinct.len() != merit.len() {
        return Err(Error::Validation("merit list repeats a student".into()));
    }
    let mut out = Vec::new();
    for s in merit {
        if let Some(i) = domain.students().iter().position(|x| x == s) {
            out.push(i);
        }
    }
    if let Some(missing) = domain.students().iter().find(|s| !merit.contains(s)) {
        return Err(Error::Domain(format!(
            "student {missing} has contracts with {} but is not on the merit list",
            domain.college()
        )));
    }
    Ok(out)
}

/// Chooses the single highest-priority contract present; unlisted contracts are never chosen.
pub fn make_unit_demand(domain: Domain, priority: &[Contract]) -> Result<ChoiceFunction> {
    let mut idx = Vec::with_capacity(priority.len());
    for c in priority {
        let i = local_index(&domain, c)?;
        if idx.contains(&i) {
            return Err(Error::Validation(format!("priority lists {c} twice")));
        }
        idx.push(i);
    }
    Ok(ChoiceFunction::build(
        domain,
        Rule::UnitDemand(idx),
        "unit_demand",
    ))
}

/// The choice induced by a ranking of acceptable allocations: the best-ranked
/// allocation contained in the offer, or nothing.
pub fn make_ranking(domain: Domain, ranking: &[ContractSet]) -> Result<ChoiceFunction> {
    let mut masks = Vec::with_capacity(ranking.len());
    for a in ranking {
        if let Some(c) = a.iter().find(|c| &c.college != domain.college()) {
            return Err(Error::Domain(format!(
                "ranking of {} mentions contract {c}",
                domain.college()
            )));
        }
        let m = domain.mask_of(a)?;
        if !domain.is_allocation(m) {
            return Err(Error::Validation(format!(
                "ranked set {a:?} holds two contracts of one student"
            )));
        }
        if masks.contains(&m) {
            return Err(Error::Validation(format!("ranking lists {a:?} twice")));
        }
        masks.push(m);
    }
    Ok(ChoiceFunction::build(
        domain,
        Rule::Ranking(masks),
        "ranking",
    ))
}

/// Merit over need: students are taken in merit order and each receives the
/// smallest-stipend contract on offer that keeps every cumulative quota.
///
/// Stipends grow with the term's dominance, so the smallest stipend is the
/// least dominant term. `quotas[t]` bounds how many chosen contracts carry a
/// stipend no larger than `t`, and must not decrease as the stipend grows.
pub fn make_merit_over_need(
    domain: Domain,
    merit: &[StudentId],
    quotas: &BTreeMap<TermLabel, usize>,
) -> Result<ChoiceFunction> {
    let order = domain.order();
    let mut by_rank = Vec::with_capacity(order.len());
    for t in order.terms() {
        let q = quotas
            .get(t)
            .ok_or_else(|| Error::Validation(format!("no quota for term {t}")))?;
        by_rank.push(*q);
    }
    if let Some(extra) = quotas.keys().find(|t| order.rank(t).is_none()) {
        return Err(Error::Domain(format!("quota for unknown term {extra}")));
    }
    // rank 0 carries the largest stipend, so quotas must not increase with rank
    if by_rank.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::Validation(
            "quotas must be weakly increasing in the stipend level".into(),
        ));
    }
    let merit = merit_indices(&domain, merit)?;
    Ok(ChoiceFunction::build(
        domain,
        Rule::MeritOverNeed {
            merit,
            quotas: by_rank,
        },
        "merit_over_need",
    ))
}

/// Bid-for-your-career: the `q1` merit-top students on offer get their most
/// dominant (shortest service) contract, the next `q2` their least dominant one.
pub fn make_bfyc(
    domain: Domain,
    merit: &[StudentId],
    q1: usize,
    q2: usize,
) -> Result<ChoiceFunction> {
    let merit = merit_indices(&domain, merit)?;
    Ok(ChoiceFunction::build(
        domain,
        Rule::Bfyc { merit, q1, q2 },
        "bfyc",
    ))
}

/// A quasi-linear firm valuation: a base value for each set of students,
/// minus the salaries attached to their contract terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuasiLinearValuation {
    /// Student sets absent from the map are worth zero.
    pub values: BTreeMap<BTreeSet<StudentId>, Rational64>,
    pub salaries: BTreeMap<TermLabel, Rational64>,
}

impl QuasiLinearValuation {
    pub fn value_of(&self, students: &BTreeSet<StudentId>) -> Rational64 {
        self.values.get(students).copied().unwrap_or_default()
    }
}

/// `Ch(Y)` = the unique best bundle among subsets of `Y^min`.
///
/// Fails with [`Error::Genericity`] when some allocation admits two best bundles.
pub fn make_quasilinear(v: &QuasiLinearValuation, domain: Domain) -> Result<ChoiceFunction> {
    let order = domain.order();
    let mut salary = Vec::with_capacity(order.len());
    for t in order.terms() {
        let s = *v
            .salaries
            .get(t)
            .ok_or_else(|| Error::Validation(format!("no salary for term {t}")))?;
        if s <= Rational64::from_integer(0) {
            return Err(Error::Validation(format!(
                "salary of term {t} is not positive"
            )));
        }
        salary.push(s);
    }
    if salary.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Validation(
            "salaries must be strictly increasing along the term order".into(),
        ));
    }
    let mut base: HashMap<Mask, Rational64> = HashMap::new();
    for (set, value) in &v.values {
        let mut m = 0;
        for s in set {
            let i = domain
                .students()
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| {
                    Error::Domain(format!(
                        "valuation mentions student {s} without contracts at {}",
                        domain.college()
                    ))
                })?;
            m |= subset::bit(i);
        }
        base.insert(m, *value);
    }

    let net = |bundle: Mask| -> Rational64 {
        let students = domain.student_set(bundle);
        let cost: Rational64 = subset::bits(bundle).map(|i| salary[domain.rank(i)]).sum();
        base.get(&students).copied().unwrap_or_default() - cost
    };

    let mut best = HashMap::new();
    for alloc in domain.allocations_within(domain.full()) {
        let mut top: Option<(Rational64, Mask)> = None;
        let mut tied: Option<Mask> = None;
        for bundle in subset::submasks(alloc) {
            let val = net(bundle);
            match top {
                Some((tv, _)) if val < tv => {}
                Some((tv, _)) if val == tv => tied = Some(bundle),
                _ => {
                    top = Some((val, bundle));
                    tied = None;
                }
            }
        }
        let (_, choice) = top.expect("every allocation has the empty bundle");
        if let Some(other) = tied {
            return Err(Error::Genericity(format!(
                "bundles {:?} and {:?} tie within {:?}",
                domain.set_of(choice),
                domain.set_of(other),
                domain.set_of(alloc)
            )));
        }
        best.insert(alloc, choice);
    }
    Ok(ChoiceFunction::build(
        domain,
        Rule::QuasiLinear(Arc::new(best)),
        "quasilinear",
    ))
}
