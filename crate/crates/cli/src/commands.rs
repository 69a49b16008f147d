//! Argument parsing and command dispatch.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use contract_match::audit::{check_axiom, replay_choice_witness, CHOICE_AXIOMS};
use contract_match::da::{check_da_stability, replay_da_witness};
use contract_match::embed::{
    between_condition_holds, build_kc_economy, rationalize_allocation_order, verify_isomorphism,
};
use contract_match::mech::{check_group_strategy_proofness, replay_manipulation};
use contract_match::virtualize::{
    check_da_equivalence, classify_profile, replay_divergence, virtual_profile,
};
use contract_match::{run_da, Axiom, Caps, Coverage, Error, Market, Witness};

use crate::error::{is_violation, CliError, EXIT_PASS, EXIT_VIOLATION};
use crate::files::{load_market, load_prefs, read_json, write_json, MarketFile};
use crate::report::{
    digest_of, Check, Embedding, Inputs, Invocation, ReplayCheck, ReportFile, Timing,
};

#[derive(Debug, Parser)]
#[command(
    name = "cmatch",
    version,
    about = "Matching with contracts: deferred acceptance and choice-rule audits"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub caps: CapArgs,

    /// Write the report to this file instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    pub report_out: Option<PathBuf>,

    /// Record the elapsed time in the report.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct CapArgs {
    /// Lift every cap to the largest size the implementation supports.
    #[arg(long, global = true)]
    pub allow_large: bool,
    /// Largest college domain for set-quantified axioms [default: 12].
    #[arg(long, global = true, value_name = "N")]
    pub cap_set_axioms: Option<usize>,
    /// Largest college domain for sequence-quantified axioms [default: 8].
    #[arg(long, global = true, value_name = "N")]
    pub cap_sequence_axioms: Option<usize>,
    /// Largest number of preference profiles or candidate allocations [default: 1000000].
    #[arg(long, global = true, value_name = "N")]
    pub cap_profiles: Option<u64>,
    /// Largest domain written out as a table [default: 16].
    #[arg(long, global = true, value_name = "N")]
    pub cap_tabulate: Option<usize>,
}

impl CapArgs {
    pub fn caps(&self) -> Caps {
        let mut caps = if self.allow_large {
            Caps::unbounded()
        } else {
            Caps::default()
        };
        if let Some(n) = self.cap_set_axioms {
            caps.set_axioms = n;
        }
        if let Some(n) = self.cap_sequence_axioms {
            caps.sequence_axioms = n;
        }
        if let Some(n) = self.cap_profiles {
            caps.profiles = n;
        }
        if let Some(n) = self.cap_tabulate {
            caps.tabulate = n;
        }
        caps
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Check this many seeded random profiles instead of all of them.
    #[arg(long, value_name = "N")]
    pub sample: Option<u64>,
    /// Seed for --sample.
    #[arg(long, value_name = "K", requires = "sample")]
    pub seed: Option<u64>,
}

impl SampleArgs {
    fn coverage(&self) -> Coverage {
        match self.sample {
            Some(n) => Coverage::Sample {
                n,
                seed: self.seed.unwrap_or(0),
            },
            None => Coverage::Exhaustive,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run deferred acceptance and report the round-by-round trace.
    RunDa {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        prefs: PathBuf,
    },
    /// Audit every college's choice rule against one axiom or all of them.
    Audit {
        #[arg(long)]
        market: PathBuf,
        #[arg(long, value_enum)]
        check: Check,
    },
    /// Build the virtual choice profile.
    Virtualize {
        #[arg(long)]
        market: PathBuf,
        /// Write the virtual market here, with every rule as a table.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Compare deferred acceptance outcomes of two markets over all profiles.
    Equiv {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        against: PathBuf,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Check that the deferred acceptance outcome is stable for every profile.
    DaStable {
        #[arg(long)]
        market: PathBuf,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Check strategy-proofness, or group strategy-proofness with --group.
    Sp {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        group: bool,
        /// Largest coalition for --group [default: all students].
        #[arg(long, value_name = "K", requires = "group")]
        max_coalition: Option<usize>,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Classify the profile by the observable axioms and audit its virtual profile.
    Classify {
        #[arg(long)]
        market: PathBuf,
        /// Also verify equivalence and stability over preference profiles.
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Embed the virtual profile into a firms-workers-salaries economy.
    Embed {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        prefs: PathBuf,
    },
    /// Re-run a report from its embedded inputs and replay its witnesses.
    Replay {
        #[arg(long)]
        report: PathBuf,
    },
}

/// Runs the parsed command and returns its report and exit status.
pub fn execute(cli: &Cli) -> Result<(ReportFile, i32), CliError> {
    let start = Instant::now();
    let mut report = match &cli.command {
        Command::Replay { report } => replay(&read_json(report)?)?,
        _ => {
            let (inputs, out) = gather(cli)?;
            let (report, virt) = run(&inputs)?;
            if let (Some(path), Some(virt)) = (out, virt) {
                write_json(&path, &virt)?;
            }
            report
        }
    };
    if cli.timing {
        report.timing = Some(Timing {
            elapsed_ms: start.elapsed().as_millis() as u64,
        });
    }
    let code = if report.passed() {
        EXIT_PASS
    } else {
        EXIT_VIOLATION
    };
    Ok((report, code))
}

fn gather(cli: &Cli) -> Result<(Inputs, Option<PathBuf>), CliError> {
    let caps = cli.caps.caps();
    let market_only = |path: &Path, invocation| -> Result<Inputs, CliError> {
        Ok(Inputs {
            invocation,
            caps,
            market: load_market(path)?.0,
            against: None,
            prefs: None,
        })
    };
    let with_prefs = |market: &Path, prefs: &Path, invocation| -> Result<Inputs, CliError> {
        let (file, m) = load_market(market)?;
        Ok(Inputs {
            invocation,
            caps,
            market: file,
            against: None,
            prefs: Some(load_prefs(prefs, &m)?),
        })
    };
    let mut out = None;
    let inputs = match &cli.command {
        Command::RunDa { market, prefs } => with_prefs(market, prefs, Invocation::RunDa)?,
        Command::Audit { market, check } => {
            market_only(market, Invocation::Audit { check: *check })?
        }
        Command::Virtualize { market, out: path } => {
            out = path.clone();
            market_only(market, Invocation::Virtualize)?
        }
        Command::Equiv {
            market,
            against,
            sample,
        } => {
            let mut inputs = market_only(
                market,
                Invocation::Equiv {
                    coverage: sample.coverage(),
                },
            )?;
            inputs.against = Some(load_market(against)?.0);
            inputs
        }
        Command::DaStable { market, sample } => market_only(
            market,
            Invocation::DaStable {
                coverage: sample.coverage(),
            },
        )?,
        Command::Sp {
            market,
            group,
            max_coalition,
            sample,
        } => {
            let (file, m) = load_market(market)?;
            let n = m.students().len().max(1);
            let max_coalition = if *group {
                max_coalition.unwrap_or(n)
            } else {
                1
            };
            Inputs {
                invocation: Invocation::Sp {
                    max_coalition,
                    coverage: sample.coverage(),
                },
                caps,
                market: file,
                against: None,
                prefs: None,
            }
        }
        Command::Classify {
            market,
            verify,
            sample,
        } => market_only(
            market,
            Invocation::Classify {
                verify: verify.then(|| sample.coverage()),
            },
        )?,
        Command::Embed { market, prefs } => with_prefs(market, prefs, Invocation::Embed)?,
        Command::Replay { .. } => unreachable!("replay has no inputs of its own"),
    };
    Ok((inputs, out))
}

/// Runs an invocation on embedded inputs. Returns the report and, for
/// `virtualize`, the virtual market file.
pub fn run(inputs: &Inputs) -> Result<(ReportFile, Option<MarketFile>), CliError> {
    let market = inputs.market.to_market().map_err(|e| e.within("market"))?;
    let against = match &inputs.against {
        Some(f) => Some(f.to_market().map_err(|e| e.within("against"))?),
        None => None,
    };
    let prefs = inputs.prefs.clone().unwrap_or_default();
    prefs
        .validate(&market)
        .map_err(|e| CliError::core("prefs", e))?;
    let caps = &inputs.caps;
    let mut report = ReportFile::new(inputs.invocation.name(), inputs.digest());
    let mut virt = None;

    let body = (|| -> contract_match::Result<()> {
        match &inputs.invocation {
            Invocation::RunDa => {
                let trace = run_da(&market, &prefs)?;
                report.outcome = Some(trace.outcome.clone());
                report.trace = Some(trace);
            }
            Invocation::Audit { check } => {
                for cf in market.profile() {
                    for axiom in axioms_of(*check) {
                        report.audits.push(check_axiom(cf, *axiom, caps)?);
                    }
                }
            }
            Invocation::Virtualize => {
                let v = virtual_profile(&market, caps)?;
                let file = MarketFile::from_market(&v, caps)?;
                report.output_digest = Some(digest_of(&file));
                virt = Some(file);
            }
            Invocation::Equiv { coverage } => {
                let against = against
                    .as_ref()
                    .expect("equiv inputs carry a second market");
                report.equivalence = Some(check_da_equivalence(&market, against, *coverage, caps)?);
            }
            Invocation::DaStable { coverage } => {
                report
                    .audits
                    .push(check_da_stability(&market, *coverage, caps)?);
            }
            Invocation::Sp {
                max_coalition,
                coverage,
            } => {
                report.audits.push(check_group_strategy_proofness(
                    &market,
                    *max_coalition,
                    *coverage,
                    caps,
                )?);
            }
            Invocation::Classify { verify } => {
                report.classification = Some(classify_profile(&market, *verify, caps)?.0);
            }
            Invocation::Embed => {
                let v = virtual_profile(&market, caps)?;
                let (economy, isomorphism) = build_kc_economy(&v, &prefs, caps)?;
                let mut orders = std::collections::BTreeMap::new();
                let mut between = std::collections::BTreeMap::new();
                for cf in v.profile() {
                    let order = rationalize_allocation_order(cf, caps)?;
                    between.insert(cf.college().clone(), between_condition_holds(cf, &order)?);
                    orders.insert(cf.college().clone(), order);
                }
                report.audits.push(verify_isomorphism(
                    &v,
                    &prefs,
                    &economy,
                    &isomorphism,
                    caps,
                )?);
                report.embedding = Some(Embedding {
                    orders,
                    between_condition: between,
                    economy,
                    isomorphism,
                });
            }
        }
        Ok(())
    })();

    match body {
        Ok(()) => {}
        Err(e) if is_violation(&e) => report.error = Some(e.to_string()),
        Err(e) => return Err(CliError::core(inputs.invocation.name(), e)),
    }
    report.settle();
    if !report.passed() {
        report.inputs = Some(inputs.clone());
    }
    Ok((report, virt))
}

fn axioms_of(check: Check) -> &'static [Axiom] {
    match check {
        Check::Irc => &[Axiom::Irc],
        Check::Subs => &[Axiom::Substitutes],
        Check::Lad => &[Axiom::Lad],
        Check::ObsSubs => &[Axiom::ObservableSubstitutes],
        Check::ObsLad => &[Axiom::ObservableLad],
        Check::Monotone => &[Axiom::MonotoneChoice],
        Check::DemandInv => &[Axiom::DemandInvariance],
        Check::All => &CHOICE_AXIOMS,
    }
}

/// Checks a fail report: its inputs match the digest, running it again
/// gives the same report, and every witness replays.
pub fn replay(original: &ReportFile) -> Result<ReportFile, CliError> {
    let inputs = original.inputs.as_ref().ok_or_else(|| {
        CliError::Usage("the report carries no inputs; only failing reports can be replayed".into())
    })?;
    if inputs.digest() != original.inputs_digest {
        return Err(CliError::input(
            "inputs",
            "embedded inputs do not match the digest",
        ));
    }
    let mut out = ReportFile::new("replay", original.inputs_digest.clone());
    let (mut again, _) = run(inputs)?;
    again.timing = original.timing;
    out.replay.push(ReplayCheck {
        what: format!("{} reproduces the report", original.command),
        ok: &again == original,
    });

    let market = inputs.market.to_market()?;
    let witness_check = |what: String, r: contract_match::Result<bool>| ReplayCheck {
        what,
        ok: r.unwrap_or(false),
    };
    for a in &original.audits {
        let Some(w) = &a.witness else { continue };
        let what = format!("{} witness for {}", axiom_name(a.axiom), a.subject);
        let ok = match w {
            Witness::DaStability { .. } | Witness::RuralHospitals { .. } => {
                replay_da_witness(&market, w)
            }
            Witness::Manipulation(m) => replay_manipulation(&market, m),
            Witness::Isomorphism { .. } => replay_isomorphism(original, inputs, &market, w),
            _ => match market.choice(&a.subject.as_str().into()) {
                Some(cf) => replay_choice_witness(cf, w),
                None => Err(Error::Domain(format!("unknown college {}", a.subject))),
            },
        };
        out.replay.push(witness_check(what, ok));
    }
    if let (Some(eq), Some(against)) = (&original.equivalence, &inputs.against) {
        if let Some(d) = &eq.witness {
            let against = against.to_market()?;
            out.replay.push(witness_check(
                "divergence".into(),
                replay_divergence(&market, &against, d),
            ));
        }
    }
    if let Some(c) = &original.classification {
        for entry in &c.colleges {
            let cf = market.choice(&entry.college).expect("classified college");
            for a in [&entry.observable_substitutes, &entry.observable_lad] {
                if let Some(w) = &a.witness {
                    out.replay.push(witness_check(
                        format!("{} witness for {}", axiom_name(a.axiom), a.subject),
                        replay_choice_witness(cf, w),
                    ));
                }
            }
        }
        let needs_virtual = c
            .colleges
            .iter()
            .any(|e| e.virtual_audits.iter().any(|a| a.witness.is_some()))
            || c.equivalence.as_ref().is_some_and(|e| e.witness.is_some());
        if needs_virtual {
            let virt = virtual_profile(&market, &inputs.caps)
                .map_err(|e| CliError::core("virtualize", e))?;
            for entry in &c.colleges {
                let cf = virt.choice(&entry.college).expect("virtual college");
                for a in &entry.virtual_audits {
                    if let Some(w) = &a.witness {
                        out.replay.push(witness_check(
                            format!("virtual {} witness for {}", axiom_name(a.axiom), a.subject),
                            replay_choice_witness(cf, w),
                        ));
                    }
                }
            }
            if let Some(d) = c.equivalence.as_ref().and_then(|e| e.witness.as_ref()) {
                out.replay.push(witness_check(
                    "virtual divergence".into(),
                    replay_divergence(&market, &virt, d),
                ));
            }
        }
        if let Some(w) = c.da_stability.as_ref().and_then(|a| a.witness.as_ref()) {
            out.replay.push(witness_check(
                "stability witness".into(),
                replay_da_witness(&market, w),
            ));
        }
    }
    out.settle();
    Ok(out)
}

/// Re-verifies the reported economy and compares the witness.
fn replay_isomorphism(
    original: &ReportFile,
    inputs: &Inputs,
    market: &Market,
    w: &Witness,
) -> contract_match::Result<bool> {
    let Some(e) = &original.embedding else {
        return Ok(false);
    };
    let v = virtual_profile(market, &inputs.caps)?;
    let prefs = inputs.prefs.clone().unwrap_or_default();
    let r = verify_isomorphism(&v, &prefs, &e.economy, &e.isomorphism, &inputs.caps)?;
    Ok(r.witness.as_ref() == Some(w))
}

fn axiom_name(a: Axiom) -> String {
    serde_json::to_value(a)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}
