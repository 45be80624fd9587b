//! Artifact payloads and the on-disk layout of a session.
//!
//! ```text
//! <out>/config.json
//! <out>/state.json
//! <out>/runtime_stats.json
//! <out>/session_report.json
//! <out>/report.md
//! <out>/iteration_<k>/<phase>/<file>.json
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::generation::TestCase;
use crate::mr::MetamorphicRelation;
use crate::relations::RelationVerdict;
use crate::reporting::{MrSummary, MutationSummary, RuntimeStats, TestSummary};
use crate::signals::{InstantiatedInputs, SignalBundle};

use super::Phase;

pub const CONFIG_FILE: &str = "config.json";
pub const STATE_FILE: &str = "state.json";
pub const RUNTIME_FILE: &str = "runtime_stats.json";
pub const REPORT_FILE: &str = "session_report.json";
pub const REPORT_MD_FILE: &str = "report.md";

/// File name and schema id of the artifact each phase writes.
pub fn phase_artifact(phase: Phase) -> Option<(&'static str, &'static str)> {
    match phase {
        Phase::Extraction => Some(("extraction.json", "extraction")),
        Phase::MrGeneration | Phase::MrRefinement => Some(("mrs.json", "mrs")),
        Phase::TestGeneration | Phase::TestValidation => Some(("tests.json", "tests")),
        Phase::Instantiation => Some(("inputs.json", "inputs")),
        Phase::Execution => Some(("results.json", "results")),
        Phase::MutationAnalysis => Some(("mutation_report.json", "mutation_report")),
        Phase::IterationEnd => Some(("summary.json", "iteration_summary")),
        Phase::Init | Phase::Completed => None,
    }
}

pub fn iteration_dir(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("iteration_{iteration}"))
}

/// `<out>/iteration_<k>/<phase>/<file>`, e.g.
/// `out/iteration_1/mr_generation/mrs.json`.
pub fn artifact_path(out: &Path, iteration: usize, phase: Phase) -> Option<PathBuf> {
    let (file, _) = phase_artifact(phase)?;
    Some(iteration_dir(out, iteration).join(phase.dir_name()).join(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrsArtifact {
    pub mrs: Vec<MetamorphicRelation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedMr {
    pub mr_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestsArtifact {
    pub tests: Vec<TestCase>,
    /// MRs for which no test could be generated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedMr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsArtifact {
    pub inputs: Vec<InstantiatedInputs>,
}

/// Outcome of one executed test with both recorded output bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestResult {
    pub test_id: String,
    pub mr_id: String,
    pub passed: bool,
    pub relations: Vec<RelationVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_outputs: Option<SignalBundle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followup_outputs: Option<SignalBundle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsArtifact {
    pub results: Vec<TestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationSummary {
    pub iteration: usize,
    pub mr_summary: MrSummary,
    pub test_summary: TestSummary,
    pub mutation: MutationSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureRecord {
    pub phase: Phase,
    pub cause: String,
}

/// Resume marker: the next phase to run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateMarker {
    pub phase: Phase,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTiming {
    pub iteration: usize,
    pub phase: Phase,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeLog {
    pub stats: RuntimeStats,
    pub phases: Vec<PhaseTiming>,
}
