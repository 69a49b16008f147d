//! Acceptance gate: one PASS/FAIL line per criterion, each within its time limit.

use std::ops::ControlFlow;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use contract_match::audit::{
    check_lad, check_monotone_choice, check_observable_substitutes, check_substitutes,
    is_observable_sequence, maximal_observable_subset,
};
use contract_match::da::{
    check_da_stability, check_rural_hospitals_all, enumerate_stable, replay_da_witness,
};
use contract_match::embed::{build_kc_economy, verify_isomorphism};
use contract_match::fixtures;
use contract_match::mech::check_group_strategy_proofness;
use contract_match::subset;
use contract_match::virtualize::{check_da_equivalence, virtual_choice, virtual_profile};
use contract_match::{
    Caps, ChoiceFunction, Contract, Coverage, DaTrace, Market, MaximalMode, ProfileSpace,
    StabilityViolation, Witness,
};
use contract_match_cli::corpus;
use contract_match_cli::files::load_market;
use contract_match_cli::report::ReportFile;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn market(name: &str) -> Market {
    load_market(&corpus::market_path(name))
        .expect("shipped fixture")
        .1
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Deferred acceptance traces over every profile of `market`.
fn traces(market: &Market) -> Result<Vec<DaTrace>, String> {
    let space = ProfileSpace::new(market);
    let mut out = Vec::new();
    let mut failure = None;
    space
        .for_each(
            Coverage::Exhaustive,
            &Caps::default(),
            |d| match contract_match::run_da(market, &space.profile(d)) {
                Ok(t) => out.push(t),
                Err(e) => failure = Some(e.to_string()),
            },
        )
        .map_err(err)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn criterion_1() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_cmatch"))
        .args(["audit", "--market"])
        .arg(corpus::market_path("e1"))
        .args(["--check", "subs"])
        .output()
        .map_err(err)?;
    ensure(
        out.status.code() == Some(1),
        "audit --check subs did not exit 1",
    )?;
    let report: ReportFile = serde_json::from_slice(&out.stdout).map_err(err)?;
    let Some(Witness::Substitutes {
        base,
        chosen,
        removed,
        choice_full,
        choice_reduced,
    }) = &report.audits[0].witness
    else {
        return Err("no substitutes witness".into());
    };
    let e = fixtures::E1::new();
    let mut offered = base.clone();
    offered.insert(chosen.clone());
    offered.insert(removed.clone());
    ensure(
        offered == e.universe().into_iter().collect(),
        "witness offer is not X",
    )?;
    ensure(chosen == &e.x && removed == &e.z, "witness is not (x, z)")?;
    ensure(
        choice_full.contains(&e.x) && !choice_reduced.contains(&e.x),
        "x is not chosen then rejected",
    )?;

    let prime = market("e1-prime");
    let cf = &prime.profile()[0];
    let caps = Caps::default();
    ensure(
        check_substitutes(cf, &caps).map_err(err)?.passed(),
        "Ch1' fails substitutes",
    )?;
    ensure(
        check_lad(cf, &caps).map_err(err)?.passed(),
        "Ch1' fails LAD",
    )?;
    Ok("witness x ∈ Ch(X), x ∉ Ch(X∖{z}); Ch1' passes substitutes and LAD".into())
}

fn criterion_2() -> Outcome {
    let caps = Caps::default();
    let ch1 = &market("e1").profile()[0].clone();
    let prime = market("e1-prime").profile()[0].clone();
    let v = virtual_choice(ch1, &caps).map_err(err)?;
    let subsets: Vec<u64> = subset::submasks(v.domain().full()).collect();
    ensure(subsets.len() == 64, "domain does not have 64 subsets")?;
    for &m in &subsets {
        ensure(
            v.choose_mask(m) == prime.choose_mask(m),
            format!("tables differ at mask {m:#b}"),
        )?;
    }
    let vm = virtual_profile(&market("e1"), &caps).map_err(err)?;
    for cf in vm.profile() {
        ensure(
            check_substitutes(cf, &caps).map_err(err)?.passed(),
            "virtual fails substitutes",
        )?;
        ensure(
            check_lad(cf, &caps).map_err(err)?.passed(),
            "virtual fails LAD",
        )?;
        ensure(
            check_monotone_choice(cf, &caps).map_err(err)?.passed(),
            "virtual fails monotone choice",
        )?;
    }
    Ok("virtual(Ch1) = Ch1' on 64 subsets; substitutes, LAD, monotone choice pass".into())
}

fn criterion_3() -> Outcome {
    let (a, b) = (market("e1"), market("e1-prime"));
    let r = check_da_equivalence(&a, &b, Coverage::Exhaustive, &Caps::default()).map_err(err)?;
    ensure(
        r.equivalent() && r.exhaustive && r.profiles == 27,
        format!("{r:?}"),
    )?;
    let (ta, tb) = (traces(&a)?, traces(&b)?);
    ensure(ta.len() == 27, "not 27 profiles")?;
    for (x, y) in ta.iter().zip(&tb) {
        ensure(
            x.outcome == y.outcome,
            format!("outcomes differ: {:?} vs {:?}", x.outcome, y.outcome),
        )?;
    }
    Ok("identical outcomes on all 27 monotone profiles".into())
}

fn criterion_4() -> Outcome {
    let f8 = market("f8");
    let space = ProfileSpace::new(&f8);
    let caps = Caps::default();
    let mut failure = None;
    let n = space
        .visit(Coverage::Exhaustive, &caps, |d| {
            let prefs = space.profile(d);
            match enumerate_stable(&f8, &prefs, &caps) {
                Ok(s) if !s.is_empty() => ControlFlow::Continue(()),
                Ok(_) => {
                    failure = Some(format!("no stable allocation for {prefs:?}"));
                    ControlFlow::Break(())
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    ControlFlow::Break(())
                }
            }
        })
        .map_err(err)?
        .0;
    if let Some(f) = failure {
        return Err(f);
    }
    ensure(n == 6859, format!("visited {n} profiles"))?;
    Ok(format!("a stable allocation exists for all {n} profiles"))
}

fn criterion_5() -> Outcome {
    let m = market("f-osv");
    let caps = Caps::default();
    let c = m.choice(&"c".into()).ok_or("no college c")?;
    let r = check_observable_substitutes(c, &caps).map_err(err)?;
    let Some(Witness::ObservableRejections { sequence, .. }) = &r.witness else {
        return Err(format!("observable substitutes did not fail: {r:?}"));
    };
    let abd: Vec<Contract> = ["c:sa:0", "c:sb:0", "c:sd:0"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    ensure(sequence == &abd, format!("sequence {sequence:?}"))?;

    let s = check_da_stability(&m, Coverage::Exhaustive, &caps).map_err(err)?;
    let Some(w @ Witness::DaStability { violation, .. }) = &s.witness else {
        return Err("deferred acceptance stable on every profile".into());
    };
    ensure(
        matches!(violation, StabilityViolation::Blocked(_)),
        "violation is not a block",
    )?;
    ensure(
        replay_da_witness(&m, w).map_err(err)?,
        "witness does not replay",
    )?;
    Ok("[a,b,d] witness; blocked outcome found and replayed".into())
}

fn criterion_6() -> Outcome {
    let caps = Caps::default();
    let mut built = 0;
    let shapes = [(4, 2), (3, 2), (2, 3), (2, 4), (8, 1)];
    for seed in 0..200u64 {
        let (n, k) = shapes[seed as usize % shapes.len()];
        let Some(cf) = fixtures::random_oxs_choice(seed, n, k) else {
            continue;
        };
        ensure(cf.domain().len() <= 8, "domain larger than 8")?;
        let v = virtual_choice(&cf, &caps).map_err(err)?;
        for m in subset::submasks(cf.domain().full()) {
            ensure(
                v.choose_mask(m) == cf.choose_mask(m),
                format!("seed {seed}: differs at {m:#b}"),
            )?;
        }
        built += 1;
        if built == 10 {
            break;
        }
    }
    ensure(built >= 5, format!("only {built} generic valuations"))?;
    Ok(format!(
        "{built} generated quasi-linear rules equal their virtual rules"
    ))
}

fn criterion_7() -> Outcome {
    let m = market("e1-unit");
    let r = check_group_strategy_proofness(&m, 3, Coverage::Exhaustive, &Caps::default())
        .map_err(err)?;
    ensure(r.passed() && r.exhaustive, format!("{:?}", r.witness))?;
    Ok(format!("no coalition of up to 3 gains; {} cases", r.cases))
}

fn passes_subs_and_lad(m: &Market, caps: &Caps) -> Result<bool, String> {
    for cf in m.profile() {
        if !check_substitutes(cf, caps).map_err(err)?.passed()
            || !check_lad(cf, caps).map_err(err)?.passed()
        {
            return Ok(false);
        }
    }
    Ok(true)
}

fn criterion_8() -> Outcome {
    let caps = Caps::default();
    let mut markets: Vec<(String, Market)> = Vec::new();
    for name in corpus::MARKETS {
        let m = market(name);
        if let Ok(v) = virtual_profile(&m, &caps) {
            markets.push((format!("virtual {name}"), v));
        }
        markets.push((name.to_string(), m));
    }
    markets.push(("two unit colleges".into(), fixtures::two_unit_colleges()));
    let mut checked = Vec::new();
    for (name, m) in &markets {
        if !passes_subs_and_lad(m, &caps)? {
            continue;
        }
        let r = check_rural_hospitals_all(m, Coverage::Exhaustive, &caps).map_err(err)?;
        ensure(
            r.passed() && r.exhaustive,
            format!("{name}: {:?}", r.witness),
        )?;
        checked.push(name.clone());
    }
    ensure(
        checked.len() >= 3,
        format!("only {checked:?} pass substitutes and LAD"),
    )?;
    Ok(format!(
        "invariant on every profile of {}",
        checked.join(", ")
    ))
}

fn criterion_9() -> Outcome {
    let caps = Caps::default();
    let v = virtual_profile(&market("e1"), &caps).map_err(err)?;
    let space = ProfileSpace::new(&v);
    let mut failure = None;
    let n = space
        .for_each(Coverage::Exhaustive, &caps, |d| {
            let prefs = space.profile(d);
            let result = build_kc_economy(&v, &prefs, &caps)
                .and_then(|(e, iso)| verify_isomorphism(&v, &prefs, &e, &iso, &caps));
            match result {
                Ok(r) if r.passed() => {}
                Ok(r) => failure = failure.take().or(Some(format!("{:?}", r.witness))),
                Err(e) => failure = failure.take().or(Some(e.to_string())),
            }
        })
        .map_err(err)?;
    if let Some(f) = failure {
        return Err(f);
    }
    Ok(format!(
        "conditions 1-4 hold for all {n} preference profiles"
    ))
}

fn fixture_choices() -> Vec<ChoiceFunction> {
    let mut out: Vec<ChoiceFunction> = corpus::MARKETS
        .iter()
        .flat_map(|n| market(n).profile().to_vec())
        .collect();
    out.extend(fixtures::family_samples());
    out
}

fn criterion_10() -> Outcome {
    let caps = Caps {
        sequence_axioms: 9,
        ..Caps::default()
    };
    let mut lemma1 = 0;
    for cf in fixture_choices() {
        if !check_observable_substitutes(&cf, &caps)
            .map_err(err)?
            .passed()
        {
            continue;
        }
        let dom = cf.domain();
        for m in subset::submasks(dom.full()) {
            let y = dom.set_of(m);
            let greedy = maximal_observable_subset(&cf, &y, MaximalMode::Greedy).map_err(err)?;
            let full = maximal_observable_subset(&cf, &y, MaximalMode::CrossChecked)
                .map_err(|e| format!("{}: {e}", cf.college()))?;
            ensure(
                greedy == full,
                format!("{}: greedy differs at {y:?}", cf.college()),
            )?;
        }
        lemma1 += 1;
    }

    let mut runs = 0;
    for name in ["e1", "e1-prime", "f8", "f-osv"] {
        let m = market(name);
        for t in traces(&m)? {
            for cf in m.profile() {
                let arrivals = t.arrivals.get(cf.college()).cloned().unwrap_or_default();
                ensure(
                    is_observable_sequence(cf, &arrivals).map_err(err)?,
                    format!(
                        "{name}: arrivals at {} not observable: {arrivals:?}",
                        cf.college()
                    ),
                )?;
            }
            runs += 1;
        }
    }
    Ok(format!(
        "greedy = enumeration on {lemma1} rules; {runs} traced runs have observable arrivals"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("example reproduction", Duration::from_secs(1), criterion_1),
        (
            "virtual choice construction",
            Duration::from_secs(1),
            criterion_2,
        ),
        ("DA equivalence", Duration::from_secs(1), criterion_3),
        (
            "stable allocations exist",
            Duration::from_secs(30),
            criterion_4,
        ),
        ("failure detection", Duration::from_secs(10), criterion_5),
        ("quasi-linear rules", Duration::from_secs(30), criterion_6),
        (
            "group strategy-proofness",
            Duration::from_secs(120),
            criterion_7,
        ),
        ("rural hospitals", Duration::from_secs(120), criterion_8),
        ("embedding", Duration::from_secs(5), criterion_9),
        (
            "maximal subsets and observable proposals",
            Duration::from_secs(60),
            criterion_10,
        ),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let verdict = match &result {
            Ok(_) if elapsed <= *limit => "PASS",
            _ => "FAIL",
        };
        let detail = match &result {
            Ok(d) if elapsed <= *limit => d.clone(),
            Ok(d) => format!("{d}; exceeded the {limit:?} limit"),
            Err(e) => e.clone(),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!(
            "{verdict} criterion {:>2} {name}: {detail} ({:.3}s, limit {}s)",
            i + 1,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
