//! Exhaustive auditors for choice-function axioms.
//!
//! Each checker returns an [`AuditReport`]; a failing report carries a
//! [`Witness`] that [`replay_choice_witness`] re-evaluates against the choice
//! function.
//!
//! Observable sequences are explored by a depth-first walk that appends
//! contracts in global order and never revisits a contract *set*: whether a
//! contract may be appended depends only on the set already proposed, so
//! checking every transition out of every reachable set covers every
//! observable sequence. Witness sequences are therefore the lexicographically
//! first offending ones.

use std::collections::HashSet;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::choice::ChoiceFunction;
use crate::da::StabilityViolation;
use crate::error::{Error, Result};
use crate::mech::ManipulationWitness;
use crate::model::{Allocation, Caps, Contract, ContractSet, PreferenceProfile};
use crate::subset::{self, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axiom {
    Irc,
    Substitutes,
    Lad,
    ObservableSubstitutes,
    ObservableLad,
    MonotoneChoice,
    DemandInvariance,
    DaStability,
    RuralHospitals,
    StrategyProofness,
    GroupStrategyProofness,
    Isomorphism,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Concrete instance of a violated quantifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Witness {
    /// `added` is rejected from `base ∪ {added}` yet its presence changes the choice.
    Irc {
        base: ContractSet,
        added: Contract,
        choice_base: ContractSet,
        choice_extended: ContractSet,
    },
    /// `chosen ∈ Ch(base ∪ {chosen, removed})` but `chosen ∉ Ch(base ∪ {chosen})`.
    Substitutes {
        base: ContractSet,
        chosen: Contract,
        removed: Contract,
        choice_full: ContractSet,
        choice_reduced: ContractSet,
    },
    /// `smaller ⊆ larger` with `|Ch(smaller)| > |Ch(larger)|`.
    Lad {
        smaller: ContractSet,
        larger: ContractSet,
        choice_smaller: ContractSet,
        choice_larger: ContractSet,
    },
    /// An observable, monotone-generated sequence whose last step un-rejects a contract.
    ObservableRejections {
        sequence: Vec<Contract>,
        rejected_before: ContractSet,
        rejected_after: ContractSet,
    },
    /// An observable, monotone-generated sequence whose last step shrinks the choice.
    /// `sizes[t]` is `|Ch|` of the first `t + 1` contracts.
    ObservableDemand {
        sequence: Vec<Contract>,
        sizes: Vec<usize>,
    },
    /// `Ch(offer) ⊄ offer^min`.
    MonotoneChoice {
        offer: ContractSet,
        choice: ContractSet,
        worst: ContractSet,
    },
    /// `smaller ⊆ larger` differ only in students chosen from `smaller`, yet the
    /// chosen students differ.
    DemandInvariance {
        smaller: ContractSet,
        larger: ContractSet,
        choice_smaller: ContractSet,
        choice_larger: ContractSet,
    },
    /// The deferred acceptance outcome for `profile` is not stable.
    DaStability {
        profile: PreferenceProfile,
        outcome: Allocation,
        violation: StabilityViolation,
    },
    /// Two stable allocations with different matched students or college sizes.
    RuralHospitals {
        profile: PreferenceProfile,
        first: Allocation,
        second: Allocation,
    },
    Manipulation(ManipulationWitness),
    /// A failed isomorphism condition (1 to 4).
    Isomorphism {
        condition: u8,
        detail: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub axiom: Axiom,
    /// College id, or `"market"` for profile-level checks.
    pub subject: String,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    /// Number of quantifier instances examined.
    pub cases: u64,
    /// False when the report rests on a sample.
    pub exhaustive: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl AuditReport {
    pub fn pass(axiom: Axiom, subject: impl Into<String>, cases: u64) -> Self {
        AuditReport {
            axiom,
            subject: subject.into(),
            verdict: Verdict::Pass,
            witness: None,
            cases,
            exhaustive: true,
            notes: Vec::new(),
        }
    }

    pub fn fail(axiom: Axiom, subject: impl Into<String>, cases: u64, witness: Witness) -> Self {
        AuditReport {
            axiom,
            subject: subject.into(),
            verdict: Verdict::Fail,
            witness: Some(witness),
            cases,
            exhaustive: true,
            notes: Vec::new(),
        }
    }

    pub(crate) fn from_flow(
        axiom: Axiom,
        subject: impl Into<String>,
        cases: u64,
        flow: ControlFlow<Witness>,
    ) -> Self {
        match flow {
            ControlFlow::Continue(()) => Self::pass(axiom, subject, cases),
            ControlFlow::Break(w) => Self::fail(axiom, subject, cases, w),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

fn subject(cf: &ChoiceFunction) -> String {
    cf.college().to_string()
}

/// Irrelevance of rejected contracts: `x ∉ Ch(Y ∪ {x}) ⟹ Ch(Y) = Ch(Y ∪ {x})`.
///
/// Scan order: `Y` ascending by mask, then `x` ascending.
pub fn check_irc(cf: &ChoiceFunction, caps: &Caps) -> Result<AuditReport> {
    let dom = cf.domain();
    caps.check_set(dom)?;
    let mut cases = 0;
    let flow = (|| {
        for y in subset::submasks(dom.full()) {
            let ch_y = cf.choose_mask(y);
            for x in subset::bits(dom.full() & !y) {
                cases += 1;
                let ext = y | subset::bit(x);
                let ch_ext = cf.choose_mask(ext);
                if !subset::contains(ch_ext, x) && ch_y != ch_ext {
                    return ControlFlow::Break(Witness::Irc {
                        base: dom.set_of(y),
                        added: dom.contracts()[x].clone(),
                        choice_base: dom.set_of(ch_y),
                        choice_extended: dom.set_of(ch_ext),
                    });
                }
            }
        }
        ControlFlow::Continue(())
    })();
    Ok(AuditReport::from_flow(Axiom::Irc, subject(cf), cases, flow))
}

/// Substitutability: `x ∈ Ch(Y ∪ {x, z}) ⟹ x ∈ Ch(Y ∪ {x})`.
///
/// Scan order: the full offer `W = Y ∪ {x, z}` from the largest mask down,
/// `x ∈ Ch(W)` ascending, then the removed `z` from the highest index down.
pub fn check_substitutes(cf: &ChoiceFunction, caps: &Caps) -> Result<AuditReport> {
    let dom = cf.domain();
    caps.check_set(dom)?;
    let mut cases = 0;
    let all: Vec<Mask> = subset::submasks(dom.full()).collect();
    let flow = (|| {
        for &w in all.iter().rev() {
            let ch_w = cf.choose_mask(w);
            for x in subset::bits(ch_w) {
                let others: Vec<usize> = subset::bits(w & !subset::bit(x)).collect();
                for &z in others.iter().rev() {
                    cases += 1;
                    let reduced = w & !subset::bit(z);
                    let ch_r = cf.choose_mask(reduced);
                    if !subset::contains(ch_r, x) {
                        return ControlFlow::Break(Witness::Substitutes {
                            base: dom.set_of(w & !subset::bit(x) & !subset::bit(z)),
                            chosen: dom.contracts()[x].clone(),
                            removed: dom.contracts()[z].clone(),
                            choice_full: dom.set_of(ch_w),
                            choice_reduced: dom.set_of(ch_r),
                        });
                    }
                }
            }
        }
        ControlFlow::Continue(())
    })();
    Ok(AuditReport::from_flow(
        Axiom::Substitutes,
        subject(cf),
        cases,
        flow,
    ))
}

/// Law of aggregate demand: `Z ⊆ Y ⟹ |Ch(Z)| ≤ |Ch(Y)|`.
///
/// Single-contract removals suffice since inclusion chains compose. Scan
/// order: `Y` ascending, removed contract ascending.
pub fn check_lad(cf: &ChoiceFunction, caps: &Caps) -> Result<AuditReport> {
    let dom = cf.domain();
    caps.check_set(dom)?;
    let mut cases = 0;
    let flow = (|| {
        for y in subset::submasks(dom.full()) {
            let ch_y = cf.choose_mask(y);
            for w in subset::bits(y) {
                cases += 1;
                let z = y & !subset::bit(w);
                let ch_z = cf.choose_mask(z);
                if subset::count(ch_z) > subset::count(ch_y) {
                    return ControlFlow::Break(Witness::Lad {
                        smaller: dom.set_of(z),
                        larger: dom.set_of(y),
                        choice_smaller: dom.set_of(ch_z),
                        choice_larger: dom.set_of(ch_y),
                    });
                }
            }
        }
        ControlFlow::Continue(())
    })();
    Ok(AuditReport::from_flow(Axiom::Lad, subject(cf), cases, flow))
}

/// Whether contract `i` may follow the proposed set `set` within `within`:
/// every dominating same-student contract already proposed, and the student
/// not currently chosen.
#[inline]
fn addable(cf: &ChoiceFunction, within: Mask, set: Mask, chosen: Mask, i: usize) -> bool {
    let dom = cf.domain();
    subset::contains(within & !set, i)
        && dom.dominating(i) & !set == 0
        && dom.student_mask(dom.student_of(i)) & chosen == 0
}

type Visit<'a, B> = &'a mut dyn FnMut(&[usize], Mask, usize) -> ControlFlow<B>;

/// Walks every transition `S → S ∪ {x}` between observable sets inside
/// `within`, each once, in lexicographic sequence order. `visit` receives the
/// sequence reaching `S`, `S`, and `x`.
fn walk_observable<B>(cf: &ChoiceFunction, within: Mask, visit: Visit<'_, B>) -> ControlFlow<B> {
    fn go<B>(
        cf: &ChoiceFunction,
        within: Mask,
        seq: &mut Vec<usize>,
        set: Mask,
        seen: &mut HashSet<Mask>,
        visit: Visit<'_, B>,
    ) -> ControlFlow<B> {
        let chosen = cf.choose_mask(set);
        for x in subset::bits(within & !set) {
            if !addable(cf, within, set, chosen, x) {
                continue;
            }
            visit(seq, set, x)?;
            let next = set | subset::bit(x);
            if seen.insert(next) {
                seq.push(x);
                go(cf, within, seq, next, seen, visit)?;
                seq.pop();
            }
        }
        ControlFlow::Continue(())
    }
    let mut seen = HashSet::from([0]);
    go(cf, within, &mut Vec::new(), 0, &mut seen, visit)
}

/// Observable sets inside `within` (including the empty set), ascending by mask.
fn observable_sets(cf: &ChoiceFunction, within: Mask) -> Vec<Mask> {
    let mut sets = vec![0];
    let _ = walk_observable::<()>(cf, within, &mut |_, set, x| {
        sets.push(set | subset::bit(x));
        ControlFlow::Continue(())
    });
    sets.sort_unstable();
    sets.dedup();
    sets
}

/// Is `seq` observable under `cf` and generated from monotone preferences?
pub fn is_observable_sequence(cf: &ChoiceFunction, seq: &[Contract]) -> Result<bool> {
    let dom = cf.domain();
    let mut set = 0;
    for c in seq {
        let i = dom.index_of(c).ok_or_else(|| {
            Error::Domain(format!(
                "contract {c} is outside the domain of {}",
                cf.college()
            ))
        })?;
        if !addable(cf, dom.full(), set, cf.choose_mask(set), i) {
            return Ok(false);
        }
        set |= subset::bit(i);
    }
    Ok(true)
}

/// How [`maximal_observable_subset`] establishes its answer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaximalMode {
    /// Append the lowest addable contract until none is left. Sound whenever
    /// the function is observably substitutable.
    Greedy,
    /// Greedy, cross-checked against the inclusion-maximal observable sets
    /// found by full enumeration; distinct answers raise [`Error::Ambiguity`].
    #[default]
    CrossChecked,
}

pub(crate) fn greedy_maximal(cf: &ChoiceFunction, within: Mask) -> Mask {
    let mut set = 0;
    loop {
        let chosen = cf.choose_mask(set);
        match subset::bits(within & !set).find(|&x| addable(cf, within, set, chosen, x)) {
            Some(x) => set |= subset::bit(x),
            None => return set,
        }
    }
}

pub(crate) fn maximal_mask(cf: &ChoiceFunction, within: Mask, mode: MaximalMode) -> Result<Mask> {
    let greedy = greedy_maximal(cf, within);
    if mode == MaximalMode::Greedy {
        return Ok(greedy);
    }
    let sets = observable_sets(cf, within);
    let maximal: Vec<Mask> = sets
        .iter()
        .copied()
        .filter(|&s| !sets.iter().any(|&t| t != s && t & s == s))
        .collect();
    let dom = cf.domain();
    if maximal.len() > 1 {
        return Err(Error::Ambiguity {
            first: dom.set_of(maximal[0]),
            second: dom.set_of(maximal[1]),
        });
    }
    if maximal[0] != greedy {
        return Err(Error::Ambiguity {
            first: dom.set_of(greedy),
            second: dom.set_of(maximal[0]),
        });
    }
    Ok(greedy)
}

/// The unique maximal observable subset of `y`.
pub fn maximal_observable_subset(
    cf: &ChoiceFunction,
    y: &ContractSet,
    mode: MaximalMode,
) -> Result<ContractSet> {
    let dom = cf.domain();
    let within = dom.mask_of(y)?;
    Ok(dom.set_of(maximal_mask(cf, within, mode)?))
}

/// Rejections nest along every observable, monotone-generated sequence.
pub fn check_observable_substitutes(cf: &ChoiceFunction, caps: &Caps) -> Result<AuditReport> {
    let dom = cf.domain();
    caps.check_sequence(dom)?;
    let mut cases = 0;
    let flow = walk_observable(cf, dom.full(), &mut |seq, set, x| {
        if set == 0 {
            return ControlFlow::Continue(());
        }
        cases += 1;
        let before = cf.reject_mask(set);
        let after = cf.reject_mask(set | subset::bit(x));
        if before & !after != 0 {
            let mut full = seq.to_vec();
            full.push(x);
            return ControlFlow::Break(Witness::ObservableRejections {
                sequence: dom.seq_of(&full),
                rejected_before: dom.set_of(before),
                rejected_after: dom.set_of(after),
            });
        }
        ControlFlow::Continue(())
    });
    Ok(AuditReport::from_flow(
        Axiom::ObservableSubstitutes,
        subject(cf),
        cases,
        flow,
    ))
}

/// `|Ch|` never shrinks along an observable, monotone-generated sequence.
pub fn check_observable_lad(cf: &ChoiceFunction, caps: &Caps) -> Result<AuditReport> {
    let dom = cf.domain();
    caps.check_sequence(dom)?;
    let mut cases = 0;
    let flow = walk_observable(cf, dom.full(), &mut |seq, set, x| {
        if set == 0 {
            return ControlFlow::Continue(());
        }
        cases += 1;
        let before = subset::count(cf.choose_mask(set));
        let after = subset::count(cf.choose_mask(set | subset::bit(x)));
        if after < before {
            let mut full = seq.to_vec();
            full.push(x);
            let sizes = prefix_sizes(cf, &full);
            return ControlFlow::Break(Witness::ObservableDemand {
                sequence: dom.seq_of(&full),
                sizes,
            });
        }
        ControlFlow::Continue(())
    });
    Ok(AuditReport::from_flow(
        Axiom::ObservableLad,
        subject(cf),
        cases,
        flow,
    ))
}

fn prefix_sizes(cf: &ChoiceFunction, seq: &[usize]) -> Vec<usize> {
    let mut set = 0;
    seq.iter()
        .map(|&i| {
            set |= subset::bit(i);
            subset::count(cf.choose_mask(set))
        })
        .collect()
}

/// `Ch(Y) ⊆ Y^min` for every `Y`. Scan order: `Y` ascending.
pub fn check_monotone_choice(cf: &ChoiceFunction, caps: &Caps) -> Result<AuditReport> {
    let dom = cf.domain();
    caps.check_set(dom)?;
    let mut cases = 0;
    let flow = (|| {
        for y in subset::submasks(dom.full()) {
            cases += 1;
            let ch = cf.choose_mask(y);
            let worst = dom.worst(y);
            if ch & !worst != 0 {
                return ControlFlow::Break(Witness::MonotoneChoice {
                    offer: dom.set_of(y),
                    choice: dom.set_of(ch),
                    worst: dom.set_of(worst),
                });
            }
        }
        ControlFlow::Continue(())
    })();
    Ok(AuditReport::from_flow(
        Axiom::MonotoneChoice,
        subject(cf),
        cases,
        flow,
    ))
}

/// For `Z ⊆ Y` agreeing on every student not chosen from `Z`, the chosen
/// students of `Y` and `Z` coincide. Scan order: `Z` ascending, then the
/// extension ascending.
pub fn check_demand_invariance(cf: &ChoiceFunction, caps: &Caps) -> Result<AuditReport> {
    let dom = cf.domain();
    caps.check_set(dom)?;
    let mut cases = 0;
    let flow = (|| {
        for z in subset::submasks(dom.full()) {
            let ch_z = cf.choose_mask(z);
            let chosen_students = dom.student_set(ch_z);
            let pool = dom.restrict_to_students(dom.full(), chosen_students) & !z;
            for extra in subset::submasks(pool) {
                cases += 1;
                let y = z | extra;
                let ch_y = cf.choose_mask(y);
                if dom.student_set(ch_y) != chosen_students {
                    return ControlFlow::Break(Witness::DemandInvariance {
                        smaller: dom.set_of(z),
                        larger: dom.set_of(y),
                        choice_smaller: dom.set_of(ch_z),
                        choice_larger: dom.set_of(ch_y),
                    });
                }
            }
        }
        ControlFlow::Continue(())
    })();
    Ok(AuditReport::from_flow(
        Axiom::DemandInvariance,
        subject(cf),
        cases,
        flow,
    ))
}

/// Runs one of the choice-level checks by axiom.
pub fn check_axiom(cf: &ChoiceFunction, axiom: Axiom, caps: &Caps) -> Result<AuditReport> {
    match axiom {
        Axiom::Irc => check_irc(cf, caps),
        Axiom::Substitutes => check_substitutes(cf, caps),
        Axiom::Lad => check_lad(cf, caps),
        Axiom::ObservableSubstitutes => check_observable_substitutes(cf, caps),
        Axiom::ObservableLad => check_observable_lad(cf, caps),
        Axiom::MonotoneChoice => check_monotone_choice(cf, caps),
        Axiom::DemandInvariance => check_demand_invariance(cf, caps),
        other => Err(Error::Domain(format!(
            "{other:?} is not a choice-function axiom"
        ))),
    }
}

/// The choice-level axioms, in report order.
pub const CHOICE_AXIOMS: [Axiom; 7] = [
    Axiom::Irc,
    Axiom::Substitutes,
    Axiom::Lad,
    Axiom::ObservableSubstitutes,
    Axiom::ObservableLad,
    Axiom::MonotoneChoice,
    Axiom::DemandInvariance,
];

/// Re-evaluates a choice-level witness. `Ok(true)` means the recorded
/// violation is reproduced exactly, including every recorded choice.
pub fn replay_choice_witness(cf: &ChoiceFunction, w: &Witness) -> Result<bool> {
    let ch = |s: &ContractSet| cf.choose(s);
    let with = |s: &ContractSet, extra: &[&Contract]| -> ContractSet {
        let mut out = s.clone();
        out.extend(extra.iter().map(|c| (*c).clone()));
        out
    };
    Ok(match w {
        Witness::Irc {
            base,
            added,
            choice_base,
            choice_extended,
        } => {
            let ext = with(base, &[added]);
            let (cb, ce) = (ch(base)?, ch(&ext)?);
            !base.contains(added)
                && !ce.contains(added)
                && cb != ce
                && &cb == choice_base
                && &ce == choice_extended
        }
        Witness::Substitutes {
            base,
            chosen,
            removed,
            choice_full,
            choice_reduced,
        } => {
            let full = ch(&with(base, &[chosen, removed]))?;
            let reduced = ch(&with(base, &[chosen]))?;
            chosen != removed
                && !base.contains(chosen)
                && !base.contains(removed)
                && full.contains(chosen)
                && !reduced.contains(chosen)
                && &full == choice_full
                && &reduced == choice_reduced
        }
        Witness::Lad {
            smaller,
            larger,
            choice_smaller,
            choice_larger,
        } => {
            let (cs, cl) = (ch(smaller)?, ch(larger)?);
            smaller.is_subset(larger)
                && cs.len() > cl.len()
                && &cs == choice_smaller
                && &cl == choice_larger
        }
        Witness::ObservableRejections {
            sequence,
            rejected_before,
            rejected_after,
        } => {
            let n = sequence.len();
            if n < 2 || !is_observable_sequence(cf, sequence)? {
                return Ok(false);
            }
            let before: ContractSet = sequence[..n - 1].iter().cloned().collect();
            let after: ContractSet = sequence.iter().cloned().collect();
            let (rb, ra) = (cf.rejected(&before)?, cf.rejected(&after)?);
            !rb.is_subset(&ra) && &rb == rejected_before && &ra == rejected_after
        }
        Witness::ObservableDemand { sequence, sizes } => {
            let n = sequence.len();
            if n < 2 || !is_observable_sequence(cf, sequence)? {
                return Ok(false);
            }
            let mut got = Vec::with_capacity(n);
            for t in 1..=n {
                let prefix: ContractSet = sequence[..t].iter().cloned().collect();
                got.push(ch(&prefix)?.len());
            }
            &got == sizes && got[n - 1] < got[n - 2]
        }
        Witness::MonotoneChoice {
            offer,
            choice,
            worst,
        } => {
            let c = ch(offer)?;
            let dom = cf.domain();
            let w = dom.set_of(dom.worst(dom.mask_of(offer)?));
            !c.is_subset(&w) && &c == choice && &w == worst
        }
        Witness::DemandInvariance {
            smaller,
            larger,
            choice_smaller,
            choice_larger,
        } => {
            let (cs, cl) = (ch(smaller)?, ch(larger)?);
            let students = |s: &ContractSet| -> std::collections::BTreeSet<_> {
                s.iter().map(|c| c.student.clone()).collect()
            };
            let chosen = students(&cs);
            smaller.is_subset(larger)
                && larger
                    .difference(smaller)
                    .all(|c| chosen.contains(&c.student))
                && students(&cl) != chosen
                && &cs == choice_smaller
                && &cl == choice_larger
        }
        _ => {
            return Err(Error::Domain(
                "witness is not a choice-function witness".into(),
            ))
        }
    })
}
