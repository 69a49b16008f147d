//! The fixture corpus shipped in `fixtures/`, built from the library's
//! in-code fixtures.

use std::path::{Path, PathBuf};

use contract_match::fixtures::{self, E1};
use contract_match::{Caps, Contract, ContractSet, Market, PreferenceProfile};

use crate::error::CliError;
use crate::files::{write_json, ChoiceSpec, MarketFile};

pub const MARKETS: [&str; 8] = [
    "e1", "e1-prime", "e1-unit", "f8", "t-lad", "t-osv", "t-olad", "f-osv",
];

pub const PREFS: [&str; 2] = ["e1-truthful", "empty"];

/// Directory of the shipped fixture files.
pub fn dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn market_path(name: &str) -> PathBuf {
    dir().join(format!("{name}.json"))
}

pub fn prefs_path(name: &str) -> PathBuf {
    dir().join(format!("{name}.prefs.json"))
}

/// The in-code market behind a fixture name.
pub fn market(name: &str) -> Option<Market> {
    Some(match name {
        "e1" => fixtures::e1_market(),
        "e1-prime" => fixtures::e1_prime_market(),
        "e1-unit" => fixtures::e1_with_unit_college(fixtures::e1_ch1()),
        "f8" => fixtures::f8_market(),
        "t-lad" => fixtures::abd_market(fixtures::t_lad()),
        "t-osv" => fixtures::abd_market(fixtures::t_osv()),
        "t-olad" => fixtures::abd_market(fixtures::t_olad()),
        "f-osv" => fixtures::f_osv_market(),
        _ => return None,
    })
}

/// The canonical file of a fixture: parametric colleges keep their family,
/// the rest are tables.
pub fn market_file(name: &str) -> Option<MarketFile> {
    let mut file =
        MarketFile::from_market(&market(name)?, &Caps::default()).expect("small fixtures");
    let c = |s: &str| -> Contract { s.parse().expect("fixture contract id") };
    match name {
        "e1-unit" => {
            file.choice.insert(
                "e".into(),
                ChoiceSpec::UnitDemand {
                    priority: vec![c("e:s1:0")],
                },
            );
        }
        "f8" => {
            let one = |s: &str| -> ContractSet { [c(s)].into() };
            file.choice.insert(
                "c2".into(),
                ChoiceSpec::Ranking {
                    ranking: vec![one("c2:s1:0"), one("c2:s3:0")],
                },
            );
        }
        "f-osv" => {
            file.choice.insert(
                "e".into(),
                ChoiceSpec::UnitDemand {
                    priority: vec![c("e:sa:0"), c("e:sd:0")],
                },
            );
        }
        _ => {}
    }
    Some(file)
}

pub fn prefs(name: &str) -> Option<PreferenceProfile> {
    let e = E1::new();
    Some(match name {
        "e1-truthful" => PreferenceProfile::new()
            .with("s1", vec![e.xp.clone(), e.x.clone()])
            .with("s2", vec![e.yp.clone(), e.y.clone()])
            .with("s3", vec![e.zp.clone(), e.z.clone()]),
        "empty" => PreferenceProfile::new(),
        _ => return None,
    })
}

/// Rewrites every fixture file under `dir`.
pub fn write_all(dir: &Path) -> Result<(), CliError> {
    for name in MARKETS {
        write_json(
            &dir.join(format!("{name}.json")),
            &market_file(name).expect("listed"),
        )?;
    }
    for name in PREFS {
        write_json(
            &dir.join(format!("{name}.prefs.json")),
            &prefs(name).expect("listed"),
        )?;
    }
    Ok(())
}

/// Whether two markets have the same contracts and the same choices.
pub fn same_market(a: &Market, b: &Market) -> bool {
    a.order() == b.order()
        && a.colleges() == b.colleges()
        && a.students() == b.students()
        && a.universe() == b.universe()
        && a.profile()
            .iter()
            .zip(b.profile())
            .all(|(x, y)| x.same_choices(y))
}
