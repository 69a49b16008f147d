//! The report file emitted by every command.

use std::collections::BTreeMap;

use contract_match::da::DaTrace;
use contract_match::embed::{Isomorphism, KelsoCrawfordEconomy};
use contract_match::virtualize::{Classification, EquivalenceReport};
use contract_match::{
    Allocation, AuditReport, Caps, CollegeId, ContractSet, Coverage, PreferenceProfile,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::files::MarketFile;

/// Which choice axioms `audit` checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Irc,
    Subs,
    Lad,
    ObsSubs,
    ObsLad,
    Monotone,
    DemandInv,
    All,
}

/// A command with its parameters, enough to run it again.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    RunDa,
    Audit {
        check: Check,
    },
    Virtualize,
    Equiv {
        coverage: Coverage,
    },
    DaStable {
        coverage: Coverage,
    },
    Sp {
        max_coalition: usize,
        coverage: Coverage,
    },
    Classify {
        verify: Option<Coverage>,
    },
    Embed,
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::RunDa => "run-da",
            Invocation::Audit { .. } => "audit",
            Invocation::Virtualize => "virtualize",
            Invocation::Equiv { .. } => "equiv",
            Invocation::DaStable { .. } => "da-stable",
            Invocation::Sp { .. } => "sp",
            Invocation::Classify { .. } => "classify",
            Invocation::Embed => "embed",
        }
    }
}

/// Everything a command read, embedded so the report can be replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub invocation: Invocation,
    pub caps: Caps,
    pub market: MarketFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub against: Option<MarketFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefs: Option<PreferenceProfile>,
}

impl Inputs {
    /// SHA-256 of the compact JSON encoding, in hex.
    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    /// Each college's rationalizing order over allocations, best first.
    pub orders: BTreeMap<CollegeId, Vec<ContractSet>>,
    /// Advisory: whether allocations ranked between `Ch(A)` and `A` are subsets of `A`.
    pub between_condition: BTreeMap<CollegeId, bool>,
    pub economy: KelsoCrawfordEconomy,
    pub isomorphism: Isomorphism,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayCheck {
    pub what: String,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub command: String,
    pub inputs_digest: String,
    pub status: Status,
    /// An axiom failure that stopped the command, such as a missing precondition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audits: Vec<AuditReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Allocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<DaTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    /// Digest of a written market file, in the same encoding as the inputs digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replay: Vec<ReplayCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Inputs>,
}

impl ReportFile {
    pub fn new(command: impl Into<String>, inputs_digest: String) -> Self {
        ReportFile {
            command: command.into(),
            inputs_digest,
            status: Status::Pass,
            error: None,
            audits: Vec::new(),
            outcome: None,
            trace: None,
            equivalence: None,
            classification: None,
            embedding: None,
            output_digest: None,
            replay: Vec::new(),
            timing: None,
            inputs: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// Sets the status from the audits and sections present.
    pub fn settle(&mut self) {
        let ok = self.error.is_none()
            && self.audits.iter().all(AuditReport::passed)
            && self
                .equivalence
                .as_ref()
                .is_none_or(EquivalenceReport::equivalent)
            && self.classification.as_ref().is_none_or(|c| {
                c.member
                    && c.colleges
                        .iter()
                        .all(|e| e.virtual_audits.iter().all(AuditReport::passed))
                    && c.equivalence
                        .as_ref()
                        .is_none_or(EquivalenceReport::equivalent)
                    && c.da_stability.as_ref().is_none_or(AuditReport::passed)
            })
            && self.replay.iter().all(|r| r.ok);
        self.status = if ok { Status::Pass } else { Status::Fail };
    }
}

/// Digest of any serializable value, as for [`Inputs::digest`].
pub fn digest_of<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(value).expect("serializable value"),
    ))
}
