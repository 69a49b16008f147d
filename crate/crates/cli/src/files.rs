//! JSON file formats for markets and preference profiles.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use contract_match::choice::{
    make_bfyc, make_merit_over_need, make_quasilinear, make_ranking, make_unit_demand, tabulate,
};
use contract_match::model::{Domain, TermLabel};
use contract_match::{
    Caps, ChoiceFunction, CollegeId, Contract, ContractSet, Market, PreferenceProfile,
    QuasiLinearValuation, StudentId, TabulatedChoice, TermOrder,
};
use num_rational::Rational64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A market: terms (most dominant first), colleges, students, the contract
/// universe and one choice rule per college.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub terms: Vec<TermLabel>,
    pub colleges: Vec<CollegeId>,
    pub students: Vec<StudentId>,
    pub universe: Vec<Contract>,
    pub choice: BTreeMap<CollegeId, ChoiceSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ChoiceSpec {
    /// One row per subset of the college's contracts.
    Table {
        rows: Vec<TableRow>,
    },
    UnitDemand {
        priority: Vec<Contract>,
    },
    /// Acceptable allocations, best first.
    Ranking {
        ranking: Vec<ContractSet>,
    },
    MeritOverNeed {
        merit: Vec<StudentId>,
        quotas: BTreeMap<TermLabel, usize>,
    },
    Bfyc {
        merit: Vec<StudentId>,
        q1: usize,
        q2: usize,
    },
    /// Values and salaries are rationals written as `"p/q"` or `"p"`.
    Quasilinear {
        values: Vec<ValueEntry>,
        salaries: BTreeMap<TermLabel, String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub offer: ContractSet,
    pub choice: ContractSet,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueEntry {
    pub students: BTreeSet<StudentId>,
    pub value: String,
}

fn rational(path: &str, s: &str) -> Result<Rational64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::input(path, format!("{s:?} is not a rational number")))
}

impl ChoiceSpec {
    pub fn build(&self, domain: Domain, path: &str) -> Result<ChoiceFunction, CliError> {
        let core = |e| CliError::core(path, e);
        match self {
            ChoiceSpec::Table { rows } => TabulatedChoice::from_rows(
                domain,
                rows.iter().map(|r| (r.offer.clone(), r.choice.clone())),
            )
            .map(TabulatedChoice::into_choice)
            .map_err(core),
            ChoiceSpec::UnitDemand { priority } => make_unit_demand(domain, priority).map_err(core),
            ChoiceSpec::Ranking { ranking } => make_ranking(domain, ranking).map_err(core),
            ChoiceSpec::MeritOverNeed { merit, quotas } => {
                make_merit_over_need(domain, merit, quotas).map_err(core)
            }
            ChoiceSpec::Bfyc { merit, q1, q2 } => make_bfyc(domain, merit, *q1, *q2).map_err(core),
            ChoiceSpec::Quasilinear { values, salaries } => {
                let mut v = QuasiLinearValuation::default();
                for (i, entry) in values.iter().enumerate() {
                    let value = rational(&format!("{path}.values[{i}]"), &entry.value)?;
                    if v.values.insert(entry.students.clone(), value).is_some() {
                        return Err(CliError::input(
                            format!("{path}.values[{i}]"),
                            format!("student set {:?} is valued twice", entry.students),
                        ));
                    }
                }
                for (t, s) in salaries {
                    v.salaries
                        .insert(t.clone(), rational(&format!("{path}.salaries.{t}"), s)?);
                }
                make_quasilinear(&v, domain).map_err(core)
            }
        }
    }

    /// The explicit table of `cf`.
    pub fn table_of(cf: &ChoiceFunction, caps: &Caps) -> contract_match::Result<Self> {
        let rows = tabulate(cf, caps)?
            .rows()
            .map(|(offer, choice)| TableRow { offer, choice })
            .collect();
        Ok(ChoiceSpec::Table { rows })
    }
}

impl MarketFile {
    pub fn to_market(&self) -> Result<Market, CliError> {
        let order =
            TermOrder::new(self.terms.iter().cloned()).map_err(|e| CliError::core("terms", e))?;
        if let Some(c) = self.choice.keys().find(|c| !self.colleges.contains(c)) {
            return Err(CliError::input(
                format!("choice.{c}"),
                "not a listed college",
            ));
        }
        let mut profile = Vec::with_capacity(self.colleges.len());
        for c in &self.colleges {
            let path = format!("choice.{c}");
            let spec = self
                .choice
                .get(c)
                .ok_or_else(|| CliError::input(&path, "missing choice rule"))?;
            let contracts = self.universe.iter().filter(|x| &x.college == c).cloned();
            let domain =
                Domain::new(c.clone(), &order, contracts).map_err(|e| CliError::core(&path, e))?;
            profile.push(spec.build(domain, &path)?);
        }
        Market::new(
            order,
            self.colleges.iter().cloned(),
            self.students.iter().cloned(),
            self.universe.iter().cloned(),
            profile,
        )
        .map_err(|e| CliError::core("market", e))
    }

    /// The canonical file of `market`, with every rule written as a table.
    pub fn from_market(market: &Market, caps: &Caps) -> contract_match::Result<Self> {
        let mut choice = BTreeMap::new();
        for cf in market.profile() {
            choice.insert(cf.college().clone(), ChoiceSpec::table_of(cf, caps)?);
        }
        Ok(MarketFile {
            terms: market.order().terms().to_vec(),
            colleges: market.colleges().to_vec(),
            students: market.students().to_vec(),
            universe: market.universe().to_vec(),
            choice,
        })
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(path.display().to_string(), e.to_string()))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::input(path.display().to_string(), e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, to_json(value))
        .map_err(|e| CliError::input(path.display().to_string(), e.to_string()))
}

pub fn load_market(path: &Path) -> Result<(MarketFile, Market), CliError> {
    let file: MarketFile = read_json(path)?;
    let market = file
        .to_market()
        .map_err(|e| e.within(&path.display().to_string()))?;
    Ok((file, market))
}

/// Reads a preference file: a map from student to ordered acceptable contracts.
pub fn load_prefs(path: &Path, market: &Market) -> Result<PreferenceProfile, CliError> {
    let prefs: PreferenceProfile = read_json(path)?;
    prefs
        .validate(market)
        .map_err(|e| CliError::core(path.display().to_string(), e))?;
    Ok(prefs)
}
