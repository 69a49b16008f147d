//! Contracts, markets, student preferences and allocations, plus the two
//! order-theoretic helpers every other module leans on: the worst-contract
//! allocation `Y^min` ([`worst_contracts`]) and the upward closure `U(Y)`
//! ([`upper_closure`]).
//!
//! Contract terms are totally ordered by a [`TermOrder`]. The first label is the
//! term every student likes best; a term earlier in the list *dominates* the
//! ones after it.
//!
//! The global contract order used for every enumeration in this crate is
//! `(college id, student id, term rank)`, where ids compare as strings and the
//! term rank is the term's position in the [`TermOrder`] (dominant first).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::choice::ChoiceFunction;
use crate::error::{Error, Result};
use crate::subset::{self, Mask};

macro_rules! label_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(s: &str) -> Self {
                $name(Arc::from(s))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name::new(s)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Ok($name::new(&s))
            }
        }
    };
}

label_type!(
    /// Identifier of a college (or firm, branch).
    CollegeId
);
label_type!(
    /// Identifier of a student (or worker, cadet).
    StudentId
);
label_type!(
    /// A contract term: stipend level, salary, service time.
    TermLabel
);

/// Strict total order over term labels, dominant (student-preferred) first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TermOrder {
    terms: Vec<TermLabel>,
}

impl TermOrder {
    pub fn new<I, T>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<TermLabel>,
    {
        let terms: Vec<TermLabel> = terms.into_iter().map(Into::into).collect();
        if terms.is_empty() {
            return Err(Error::Validation("term order is empty".into()));
        }
        let distinct: BTreeSet<_> = terms.iter().collect();
        if distinct.len() != terms.len() {
            return Err(Error::Validation("term order repeats a label".into()));
        }
        Ok(TermOrder { terms })
    }

    pub fn terms(&self) -> &[TermLabel] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Position in the order; `0` is the dominant term.
    pub fn rank(&self, term: &TermLabel) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    fn rank_of(&self, term: &TermLabel) -> Result<usize> {
        self.rank(term)
            .ok_or_else(|| Error::Domain(format!("term {term} is not in the term order")))
    }

    /// `a ▷ b`: students strictly prefer term `a` to term `b`.
    pub fn dominates(&self, a: &TermLabel, b: &TermLabel) -> Option<bool> {
        Some(self.rank(a)? < self.rank(b)?)
    }
}

/// A `(college, student, term)` triple. Serialized as `"college:student:term"`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Contract {
    pub college: CollegeId,
    pub student: StudentId,
    pub term: TermLabel,
}

impl Contract {
    pub fn new(college: &str, student: &str, term: &str) -> Self {
        Contract {
            college: college.into(),
            student: student.into(),
            term: term.into(),
        }
    }
}

impl fmt::Display for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.college, self.student, self.term)
    }
}

impl fmt::Debug for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Contract {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [c, st, t] if !c.is_empty() && !st.is_empty() && !t.is_empty() => {
                Ok(Contract::new(c, st, t))
            }
            _ => Err(Error::Validation(format!(
                "contract id {s:?} is not of the form college:student:term"
            ))),
        }
    }
}

impl Serialize for Contract {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Contract {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub type ContractSet = BTreeSet<Contract>;

/// A contract set holding at most one contract per student.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "ContractSet", into = "ContractSet")]
pub struct Allocation(ContractSet);

impl Allocation {
    pub fn new(contracts: ContractSet) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &contracts {
            if !seen.insert(&c.student) {
                return Err(Error::Validation(format!(
                    "student {} holds more than one contract",
                    c.student
                )));
            }
        }
        Ok(Allocation(contracts))
    }

    pub fn empty() -> Self {
        Allocation::default()
    }

    pub fn contracts(&self) -> &ContractSet {
        &self.0
    }

    pub fn into_set(self) -> ContractSet {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The contract held by `student`, if any.
    pub fn of_student(&self, student: &StudentId) -> Option<&Contract> {
        self.0.iter().find(|c| &c.student == student)
    }

    pub fn at_college<'a>(&'a self, college: &'a CollegeId) -> impl Iterator<Item = &'a Contract> {
        self.0.iter().filter(move |c| &c.college == college)
    }

    pub fn students(&self) -> BTreeSet<StudentId> {
        self.0.iter().map(|c| c.student.clone()).collect()
    }
}

impl TryFrom<ContractSet> for Allocation {
    type Error = Error;

    fn try_from(set: ContractSet) -> Result<Self> {
        Allocation::new(set)
    }
}

impl From<Allocation> for ContractSet {
    fn from(a: Allocation) -> Self {
        a.0
    }
}

/// A student's strict, monotone preference, represented by its acceptable
/// prefix (most preferred first). Contracts not listed rank below the outside
/// option.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StudentPreference {
    pub student: StudentId,
    pub acceptable: Vec<Contract>,
}

impl StudentPreference {
    pub fn new(student: &str, acceptable: Vec<Contract>) -> Self {
        StudentPreference {
            student: student.into(),
            acceptable,
        }
    }

    pub fn empty(student: StudentId) -> Self {
        StudentPreference {
            student,
            acceptable: Vec::new(),
        }
    }

    /// Position of `c` in the acceptable list; `None` if unacceptable.
    pub fn position(&self, c: &Contract) -> Option<usize> {
        self.acceptable.iter().position(|x| x == c)
    }

    /// Weak preference between two outcomes of the student, `None` standing for
    /// the outside option.
    pub fn weakly_prefers(&self, a: Option<&Contract>, b: Option<&Contract>) -> bool {
        self.outcome_rank(a) <= self.outcome_rank(b)
    }

    /// Rank of an outcome: acceptable contracts by list position, then the
    /// outside option, then any unacceptable contract. Lower is better.
    pub fn outcome_rank(&self, outcome: Option<&Contract>) -> usize {
        match outcome {
            None => self.acceptable.len(),
            Some(c) => self.position(c).unwrap_or(self.acceptable.len() + 1),
        }
    }
}

/// One preference per student. Students without an entry find nothing acceptable.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceProfile {
    prefs: BTreeMap<StudentId, Vec<Contract>>,
}

impl PreferenceProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_prefs<I: IntoIterator<Item = StudentPreference>>(prefs: I) -> Self {
        let mut p = Self::new();
        for pref in prefs {
            p.set(pref);
        }
        p
    }

    pub fn set(&mut self, pref: StudentPreference) {
        self.prefs.insert(pref.student, pref.acceptable);
    }

    pub fn with(mut self, student: &str, acceptable: Vec<Contract>) -> Self {
        self.set(StudentPreference::new(student, acceptable));
        self
    }

    pub fn acceptable(&self, student: &StudentId) -> &[Contract] {
        self.prefs.get(student).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn preference(&self, student: &StudentId) -> StudentPreference {
        StudentPreference {
            student: student.clone(),
            acceptable: self.acceptable(student).to_vec(),
        }
    }

    pub fn students(&self) -> impl Iterator<Item = &StudentId> {
        self.prefs.keys()
    }

    /// Checks every entry against the market; the error lists all violations.
    pub fn validate(&self, market: &Market) -> Result<()> {
        let mut problems = Vec::new();
        for s in self.prefs.keys() {
            if market.student_index(s).is_none() {
                problems.push(format!("unknown student {s}"));
            }
        }
        for s in market.students() {
            for v in validate_preference(&self.preference(s), market) {
                problems.push(format!("{s}: {v}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }
}

/// Configurable limits on exhaustive scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    /// Largest college domain for set-quantified axioms.
    pub set_axioms: usize,
    /// Largest college domain for sequence-quantified axioms.
    pub sequence_axioms: usize,
    /// Largest number of preference profiles (or candidate allocations) scanned.
    pub profiles: u64,
    /// Largest domain that may be materialized as a table.
    pub tabulate: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            set_axioms: 12,
            sequence_axioms: 8,
            profiles: 1_000_000,
            tabulate: 16,
        }
    }
}

impl Caps {
    /// The largest caps the implementation can represent at all.
    pub fn unbounded() -> Self {
        Caps {
            set_axioms: 30,
            sequence_axioms: 30,
            profiles: u64::MAX,
            tabulate: 30,
        }
    }

    pub(crate) fn check_set(&self, domain: &Domain) -> Result<()> {
        cap_check("college domain (set axioms)", domain.len(), self.set_axioms)
    }

    pub(crate) fn check_sequence(&self, domain: &Domain) -> Result<()> {
        cap_check(
            "college domain (sequence axioms)",
            domain.len(),
            self.sequence_axioms,
        )
    }
}

pub(crate) fn cap_check(what: &str, size: usize, cap: usize) -> Result<()> {
    if size > cap.min(subset::MAX_BITS) {
        Err(Error::capacity(what, size as u64, cap as u64))
    } else {
        Ok(())
    }
}

/// The contracts of one college, in global order, with bitmask indexing.
///
/// A student's contracts are contiguous and ordered dominant term first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Domain {
    college: CollegeId,
    order: TermOrder,
    contracts: Vec<Contract>,
    rank: Vec<usize>,
    student_of: Vec<usize>,
    students: Vec<StudentId>,
    student_masks: Vec<Mask>,
}

impl Domain {
    pub fn new<I>(college: CollegeId, order: &TermOrder, contracts: I) -> Result<Self>
    where
        I: IntoIterator<Item = Contract>,
    {
        let mut keyed = Vec::new();
        for c in contracts {
            if c.college != college {
                return Err(Error::Domain(format!(
                    "contract {c} does not belong to college {college}"
                )));
            }
            let r = order.rank_of(&c.term)?;
            keyed.push((c.student.clone(), r, c));
        }
        keyed.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        if keyed.windows(2).any(|w| w[0].2 == w[1].2) {
            return Err(Error::Domain(format!(
                "college {college} lists a contract twice"
            )));
        }
        cap_check("college domain", keyed.len(), subset::MAX_BITS)?;

        let mut students: Vec<StudentId> = Vec::new();
        let mut student_of = Vec::with_capacity(keyed.len());
        let mut student_masks: Vec<Mask> = Vec::new();
        for (i, (s, _, _)) in keyed.iter().enumerate() {
            if students.last() != Some(s) {
                students.push(s.clone());
                student_masks.push(0);
            }
            student_of.push(students.len() - 1);
            *student_masks.last_mut().unwrap() |= subset::bit(i);
        }
        Ok(Domain {
            college,
            order: order.clone(),
            rank: keyed.iter().map(|k| k.1).collect(),
            contracts: keyed.into_iter().map(|k| k.2).collect(),
            student_of,
            students,
            student_masks,
        })
    }

    pub fn college(&self) -> &CollegeId {
        &self.college
    }

    pub fn order(&self) -> &TermOrder {
        &self.order
    }

    pub fn contracts(&self) -> &[Contract] {
        &self.contracts
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }

    pub fn full(&self) -> Mask {
        subset::full(self.len())
    }

    pub fn students(&self) -> &[StudentId] {
        &self.students
    }

    pub fn rank(&self, i: usize) -> usize {
        self.rank[i]
    }

    pub fn student_of(&self, i: usize) -> usize {
        self.student_of[i]
    }

    /// Contracts of local student `s`, as a mask.
    pub fn student_mask(&self, s: usize) -> Mask {
        self.student_masks[s]
    }

    pub fn index_of(&self, c: &Contract) -> Option<usize> {
        if c.college != self.college {
            return None;
        }
        let r = self.order.rank(&c.term)?;
        self.contracts
            .binary_search_by(|x| {
                (&x.student, self.order.rank(&x.term).unwrap_or(usize::MAX)).cmp(&(&c.student, r))
            })
            .ok()
    }

    pub fn mask_of<'a, I>(&self, set: I) -> Result<Mask>
    where
        I: IntoIterator<Item = &'a Contract>,
    {
        let mut m = 0;
        for c in set {
            let i = self.index_of(c).ok_or_else(|| {
                Error::Domain(format!(
                    "contract {c} is outside the domain of college {}",
                    self.college
                ))
            })?;
            m |= subset::bit(i);
        }
        Ok(m)
    }

    pub fn set_of(&self, m: Mask) -> ContractSet {
        subset::bits(m).map(|i| self.contracts[i].clone()).collect()
    }

    pub fn seq_of(&self, idx: &[usize]) -> Vec<Contract> {
        idx.iter().map(|&i| self.contracts[i].clone()).collect()
    }

    /// Local students with a contract in `m`, as a mask over student indices.
    pub fn student_set(&self, m: Mask) -> Mask {
        let mut out = 0;
        for i in subset::bits(m) {
            out |= subset::bit(self.student_of[i]);
        }
        out
    }

    /// Contracts in `m` whose student is in the student mask `students`.
    pub fn restrict_to_students(&self, m: Mask, students: Mask) -> Mask {
        let mut out = 0;
        for s in subset::bits(students) {
            out |= self.student_masks[s];
        }
        m & out
    }

    pub fn is_allocation(&self, m: Mask) -> bool {
        self.student_masks
            .iter()
            .all(|&sm| subset::count(m & sm) <= 1)
    }

    /// `Y^min`: for each student in `m`, the contract with the least dominant term.
    pub fn worst(&self, m: Mask) -> Mask {
        let mut out = 0;
        for &sm in &self.student_masks {
            let mine = m & sm;
            if mine != 0 {
                out |= subset::bit(63 - mine.leading_zeros() as usize);
            }
        }
        out
    }

    /// `U(Y)`: every domain contract at least as good for its student as that
    /// student's worst contract in `m`.
    pub fn upper_closure(&self, m: Mask) -> Mask {
        let mut out = 0;
        for &sm in &self.student_masks {
            let mine = m & sm;
            if mine != 0 {
                let worst = 63 - mine.leading_zeros() as usize;
                out |= sm & subset::full(worst + 1);
            }
        }
        out
    }

    /// Same-student contracts whose term strictly dominates that of contract `i`.
    pub fn dominating(&self, i: usize) -> Mask {
        self.student_masks[self.student_of[i]] & subset::full(i)
    }

    /// Allocations contained in `m`, ascending by mask.
    pub fn allocations_within(&self, m: Mask) -> Vec<Mask> {
        let mut out = vec![0];
        for &sm in &self.student_masks {
            let opts: Vec<Mask> = subset::bits(m & sm).map(subset::bit).collect();
            if opts.is_empty() {
                continue;
            }
            let base = out.clone();
            for o in opts {
                out.extend(base.iter().map(|b| b | o));
            }
        }
        out.sort_unstable();
        out
    }
}

/// The static game form: contract universe, term order and one choice function per college.
#[derive(Clone, Debug)]
pub struct Market {
    order: TermOrder,
    colleges: Vec<CollegeId>,
    students: Vec<StudentId>,
    universe: Vec<Contract>,
    profile: Vec<ChoiceFunction>,
    index: BTreeMap<Contract, usize>,
    contract_college: Vec<usize>,
    contract_student: Vec<usize>,
    contract_bit: Vec<usize>,
}

impl Market {
    /// Builds a market. Colleges and students are kept sorted by id; the
    /// profile may be given in any order but must hold exactly one choice
    /// function per college, defined on that college's contracts.
    pub fn new<C, S, U>(
        order: TermOrder,
        colleges: C,
        students: S,
        universe: U,
        profile: Vec<ChoiceFunction>,
    ) -> Result<Self>
    where
        C: IntoIterator<Item = CollegeId>,
        S: IntoIterator<Item = StudentId>,
        U: IntoIterator<Item = Contract>,
    {
        let colleges = sorted_unique(colleges, "college")?;
        let students = sorted_unique(students, "student")?;
        let mut universe: Vec<Contract> = universe.into_iter().collect();
        for c in &universe {
            if colleges.binary_search(&c.college).is_err() {
                return Err(Error::Validation(format!("contract {c}: unknown college")));
            }
            if students.binary_search(&c.student).is_err() {
                return Err(Error::Validation(format!("contract {c}: unknown student")));
            }
            order.rank_of(&c.term)?;
        }
        universe
            .sort_by_cached_key(|c| (c.college.clone(), c.student.clone(), order.rank(&c.term)));
        if universe.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("universe lists a contract twice".into()));
        }

        let mut by_college: BTreeMap<CollegeId, ChoiceFunction> = BTreeMap::new();
        for cf in profile {
            let id = cf.college().clone();
            if colleges.binary_search(&id).is_err() {
                return Err(Error::Validation(format!(
                    "choice function for unknown college {id}"
                )));
            }
            if by_college.insert(id.clone(), cf).is_some() {
                return Err(Error::Validation(format!(
                    "college {id} has two choice functions"
                )));
            }
        }
        let mut ordered = Vec::with_capacity(colleges.len());
        for c in &colleges {
            let cf = by_college
                .remove(c)
                .ok_or_else(|| Error::Validation(format!("college {c} has no choice function")))?;
            if cf.domain().order() != &order {
                return Err(Error::Validation(format!(
                    "choice function of {c} uses a different term order"
                )));
            }
            let expected: Vec<&Contract> = universe.iter().filter(|x| &x.college == c).collect();
            let actual: Vec<&Contract> = cf.domain().contracts().iter().collect();
            if expected != actual {
                return Err(Error::Validation(format!(
                    "choice function of {c} is not defined on exactly the college's contracts"
                )));
            }
            ordered.push(cf);
        }

        let mut index = BTreeMap::new();
        let mut contract_college = Vec::new();
        let mut contract_student = Vec::new();
        let mut contract_bit = Vec::new();
        for (g, c) in universe.iter().enumerate() {
            index.insert(c.clone(), g);
            let ci = colleges.binary_search(&c.college).unwrap();
            contract_college.push(ci);
            contract_student.push(students.binary_search(&c.student).unwrap());
            contract_bit.push(ordered[ci].domain().index_of(c).unwrap());
        }

        Ok(Market {
            order,
            colleges,
            students,
            universe,
            profile: ordered,
            index,
            contract_college,
            contract_student,
            contract_bit,
        })
    }

    /// The same market skeleton with a different choice profile.
    pub fn with_profile(&self, profile: Vec<ChoiceFunction>) -> Result<Self> {
        Market::new(
            self.order.clone(),
            self.colleges.clone(),
            self.students.clone(),
            self.universe.clone(),
            profile,
        )
    }

    pub fn order(&self) -> &TermOrder {
        &self.order
    }

    pub fn colleges(&self) -> &[CollegeId] {
        &self.colleges
    }

    pub fn students(&self) -> &[StudentId] {
        &self.students
    }

    /// The contract universe `X`, in global order.
    pub fn universe(&self) -> &[Contract] {
        &self.universe
    }

    pub fn profile(&self) -> &[ChoiceFunction] {
        &self.profile
    }

    pub fn choice(&self, college: &CollegeId) -> Option<&ChoiceFunction> {
        self.college_index(college).map(|i| &self.profile[i])
    }

    pub fn college_index(&self, c: &CollegeId) -> Option<usize> {
        self.colleges.binary_search(c).ok()
    }

    pub fn student_index(&self, s: &StudentId) -> Option<usize> {
        self.students.binary_search(s).ok()
    }

    pub fn contract_index(&self, c: &Contract) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn contains(&self, c: &Contract) -> bool {
        self.index.contains_key(c)
    }

    pub(crate) fn college_of(&self, g: usize) -> usize {
        self.contract_college[g]
    }

    pub(crate) fn student_of(&self, g: usize) -> usize {
        self.contract_student[g]
    }

    pub(crate) fn bit_of(&self, g: usize) -> usize {
        self.contract_bit[g]
    }

    /// `X_s`, in global order.
    pub fn contracts_of_student(&self, s: &StudentId) -> Vec<Contract> {
        self.universe
            .iter()
            .filter(|c| &c.student == s)
            .cloned()
            .collect()
    }

    /// All triples `C × S × T`, in global order, whether or not in the universe.
    pub fn all_triples(&self) -> Vec<Contract> {
        let mut out = Vec::new();
        for c in &self.colleges {
            for s in &self.students {
                for t in self.order.terms() {
                    out.push(Contract {
                        college: c.clone(),
                        student: s.clone(),
                        term: t.clone(),
                    });
                }
            }
        }
        out
    }
}

fn sorted_unique<T: Ord + fmt::Display, I: IntoIterator<Item = T>>(
    items: I,
    what: &str,
) -> Result<Vec<T>> {
    let mut v: Vec<T> = items.into_iter().collect();
    v.sort();
    if let Some(w) = v.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("{what} {} declared twice", w[0])));
    }
    Ok(v)
}

fn single_college(y: &ContractSet) -> Result<Option<&CollegeId>> {
    let mut colleges = y.iter().map(|c| &c.college);
    let first = colleges.next();
    if let Some(f) = first {
        if let Some(other) = colleges.find(|c| *c != f) {
            return Err(Error::Domain(format!(
                "contracts of colleges {f} and {other} mixed; expected a single college"
            )));
        }
    }
    Ok(first)
}

/// `Y^min`: each student's worst contract among `y`. All contracts must share a college.
pub fn worst_contracts(y: &ContractSet, order: &TermOrder) -> Result<Allocation> {
    let Some(college) = single_college(y)? else {
        return Ok(Allocation::empty());
    };
    let dom = Domain::new(college.clone(), order, y.iter().cloned())?;
    Allocation::new(dom.set_of(dom.worst(dom.full())))
}

/// `U(Y)`: every contract of the college at least as good for its student as
/// that student's worst contract in `y`.
pub fn upper_closure(y: &ContractSet, market: &Market) -> Result<ContractSet> {
    let Some(college) = single_college(y)? else {
        return Ok(ContractSet::new());
    };
    let cf = market
        .choice(college)
        .ok_or_else(|| Error::Domain(format!("unknown college {college}")))?;
    let dom = cf.domain();
    let m = dom.mask_of(y)?;
    Ok(dom.set_of(dom.upper_closure(m)))
}

/// A broken invariant of a [`StudentPreference`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum PreferenceViolation {
    NotInUniverse(Contract),
    WrongStudent(Contract),
    Duplicate(Contract),
    /// `earlier` is listed before a same-college contract with a dominant term.
    Monotonicity {
        earlier: Contract,
        later: Contract,
    },
    /// `listed` is acceptable but the dominating `missing` contract is not.
    UpwardClosure {
        listed: Contract,
        missing: Contract,
    },
}

impl fmt::Display for PreferenceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreferenceViolation::NotInUniverse(c) => {
                write!(f, "contract {c} is not in the universe")
            }
            PreferenceViolation::WrongStudent(c) => {
                write!(f, "contract {c} belongs to another student")
            }
            PreferenceViolation::Duplicate(c) => write!(f, "contract {c} listed twice"),
            PreferenceViolation::Monotonicity { earlier, later } => {
                write!(f, "monotonicity: {earlier} before {later}")
            }
            PreferenceViolation::UpwardClosure { listed, missing } => {
                write!(f, "upward closure: {missing} missing (above {listed})")
            }
        }
    }
}

/// Lists every violated invariant; an empty list means the preference is valid.
pub fn validate_preference(pref: &StudentPreference, market: &Market) -> Vec<PreferenceViolation> {
    let order = market.order();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for c in &pref.acceptable {
        if c.student != pref.student {
            out.push(PreferenceViolation::WrongStudent(c.clone()));
        }
        if !market.contains(c) {
            out.push(PreferenceViolation::NotInUniverse(c.clone()));
        }
        if !seen.insert(c) {
            out.push(PreferenceViolation::Duplicate(c.clone()));
        }
    }
    for (i, a) in pref.acceptable.iter().enumerate() {
        for b in &pref.acceptable[i + 1..] {
            if a.college == b.college && order.dominates(&b.term, &a.term) == Some(true) {
                out.push(PreferenceViolation::Monotonicity {
                    earlier: a.clone(),
                    later: b.clone(),
                });
            }
        }
    }
    for listed in &pref.acceptable {
        if listed.student != pref.student {
            continue;
        }
        for x in market.universe() {
            if x.college == listed.college
                && x.student == listed.student
                && order.dominates(&x.term, &listed.term) == Some(true)
                && !seen.contains(x)
            {
                out.push(PreferenceViolation::UpwardClosure {
                    listed: listed.clone(),
                    missing: x.clone(),
                });
            }
        }
    }
    out
}

/// Every strict monotone preference of `student` over `X_s`, canonicalized to
/// its acceptable list.
///
/// Order: depth-first over acceptable lists, where a list precedes its
/// extensions and extensions are tried by college in id order. Equivalently,
/// lists are sorted lexicographically by global contract order, with a prefix
/// before its extensions.
pub fn enumerate_monotone_preferences(
    student: &StudentId,
    market: &Market,
) -> Vec<StudentPreference> {
    let mut chains: Vec<Vec<Contract>> = Vec::new();
    for c in market.contracts_of_student(student) {
        match chains.last_mut() {
            Some(chain) if chain[0].college == c.college => chain.push(c),
            _ => chains.push(vec![c]),
        }
    }
    let mut out = Vec::new();
    let mut next = vec![0usize; chains.len()];
    let mut current = Vec::new();
    enumerate_chains(&chains, &mut next, &mut current, &mut |list| {
        out.push(StudentPreference {
            student: student.clone(),
            acceptable: list.to_vec(),
        })
    });
    out
}

fn enumerate_chains(
    chains: &[Vec<Contract>],
    next: &mut [usize],
    current: &mut Vec<Contract>,
    emit: &mut dyn FnMut(&[Contract]),
) {
    emit(current);
    for k in 0..chains.len() {
        if next[k] < chains[k].len() {
            current.push(chains[k][next[k]].clone());
            next[k] += 1;
            enumerate_chains(chains, next, current, emit);
            next[k] -= 1;
            current.pop();
        }
    }
}
