//! Session metrics and their JSON and markdown renderings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::ExtractionOutput;
use crate::mr::MetamorphicRelation;
use crate::mutation::{score_display, MutationOperator, MutationReport, OperatorCounts};
use crate::schema::{self, CanonicalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("the extraction holds no test conditions")]
    EmptyRequirements,
    #[error("{mr} references unknown requirement `{req}`")]
    UnknownRequirement { mr: String, req: String },
}

/// `num / den` rounded half-up to `decimals` places, in exact integer
/// arithmetic. `den` must be positive.
pub fn fixed_half_up(num: u128, den: u128, decimals: u32) -> String {
    assert!(den > 0, "zero denominator");
    let scale = 10u128.pow(decimals);
    let scaled = (2 * num * scale + den) / (2 * den);
    let whole = scaled / scale;
    if decimals == 0 {
        return whole.to_string();
    }
    format!("{whole}.{:0width$}", scaled % scale, width = decimals as usize)
}

/// Percentage `100 * num / den` with two decimals, half-up.
pub fn percent_display(num: usize, den: usize) -> String {
    if den == 0 {
        return "0.00".into();
    }
    fixed_half_up(100 * num as u128, den as u128, 2)
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coverage {
    pub covered: usize,
    pub total: usize,
    pub percent: f64,
    pub display: String,
    pub covered_ids: Vec<String>,
    pub uncovered_ids: Vec<String>,
}

/// Share of test conditions referenced by at least one non-dropped MR.
/// Relationship ids in `req_ids` are accepted but not counted.
pub fn requirement_coverage(
    extraction: &ExtractionOutput,
    mrs: &[MetamorphicRelation],
) -> Result<Coverage, ReportError> {
    let total = extraction.test_conditions.len();
    if total == 0 {
        return Err(ReportError::EmptyRequirements);
    }
    let mut referenced = BTreeSet::new();
    for mr in mrs.iter().filter(|m| !m.is_dropped()) {
        for req in &mr.req_ids {
            if !extraction.knows_requirement(req) {
                return Err(ReportError::UnknownRequirement {
                    mr: mr.id.clone(),
                    req: req.clone(),
                });
            }
            if extraction.test_condition(req).is_some() {
                referenced.insert(req.as_str());
            }
        }
    }
    let (covered_ids, uncovered_ids): (Vec<String>, Vec<String>) = extraction
        .test_conditions
        .iter()
        .map(|tc| tc.id.clone())
        .partition(|id| referenced.contains(id.as_str()));
    let covered = covered_ids.len();
    Ok(Coverage {
        covered,
        total,
        percent: percent(covered, total),
        display: percent_display(covered, total),
        covered_ids,
        uncovered_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSummary {
    pub generated: usize,
    pub dropped: usize,
    pub executed: usize,
    pub passed: usize,
    pub failed: usize,
    pub pass_rate: f64,
    pub fail_rate: f64,
    pub pass_display: String,
    pub fail_display: String,
    /// Nothing was executed, so the rates carry no information.
    pub degenerate: bool,
}

/// Counts over executed tests; `verdicts` holds one pass flag per executed
/// test and `generated` counts dropped tests too.
pub fn test_summary(generated: usize, verdicts: &[bool]) -> TestSummary {
    let executed = verdicts.len();
    let passed = verdicts.iter().filter(|&&p| p).count();
    let failed = executed - passed;
    TestSummary {
        generated,
        dropped: generated.saturating_sub(executed),
        executed,
        passed,
        failed,
        pass_rate: percent(passed, executed),
        fail_rate: percent(failed, executed),
        pass_display: percent_display(passed, executed),
        fail_display: percent_display(failed, executed),
        degenerate: executed == 0,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrSummary {
    pub generated: usize,
    pub dropped: usize,
    pub refined_survivors: usize,
}

impl MrSummary {
    pub fn of(mrs: &[MetamorphicRelation]) -> Self {
        let dropped = mrs.iter().filter(|m| m.is_dropped()).count();
        Self {
            generated: mrs.len(),
            dropped,
            refined_survivors: mrs.len() - dropped,
        }
    }
}

/// Wall-clock seconds per phase and per unit of work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeStats {
    pub extraction: f64,
    /// MR generation including refinement.
    pub mr_generation: f64,
    /// Test generation, validation and instantiation.
    pub test_generation: f64,
    pub test_execution: f64,
    pub mutation_analysis: f64,
    pub total: f64,
    pub gen_time_per_mr: Option<f64>,
    pub gen_time_per_testcase: Option<f64>,
    pub exec_time_per_testcase: Option<f64>,
}

impl RuntimeStats {
    pub fn with_unit_stats(mut self, mrs: usize, tests: usize, executed: usize) -> Self {
        let per = |total: f64, n: usize| (n > 0).then(|| total / n as f64);
        self.gen_time_per_mr = per(self.mr_generation, mrs);
        self.gen_time_per_testcase = per(self.test_generation, tests);
        self.exec_time_per_testcase = per(self.test_execution, executed);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSummary {
    pub generated: usize,
    pub killed: usize,
    pub score: Option<f64>,
    pub score_display: String,
    pub discarded_null: usize,
    pub per_operator: BTreeMap<MutationOperator, OperatorCounts>,
}

impl MutationSummary {
    /// Adds up the reports of several iterations.
    pub fn combine<'a>(reports: impl IntoIterator<Item = &'a MutationReport>) -> Self {
        let mut per_operator: BTreeMap<MutationOperator, OperatorCounts> =
            MutationOperator::ALL.iter().map(|&op| (op, OperatorCounts::default())).collect();
        let mut discarded_null = 0;
        for report in reports {
            discarded_null += report.discarded_null;
            for (op, c) in &report.per_operator {
                let total = per_operator.entry(*op).or_default();
                total.generated += c.generated;
                total.killed += c.killed;
                total.discarded_null += c.discarded_null;
            }
        }
        let generated = per_operator.values().map(|c| c.generated).sum();
        let killed = per_operator.values().map(|c| c.killed).sum();
        Self {
            generated,
            killed,
            score: crate::mutation::mutation_score(generated, killed),
            score_display: score_display(generated, killed),
            discarded_null,
            per_operator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionReport {
    pub system_name: String,
    pub system_abv: String,
    pub sut: String,
    pub provider: String,
    pub rng_seed: u64,
    pub iterations: usize,
    pub mr_summary: MrSummary,
    pub coverage: Coverage,
    pub test_summary: TestSummary,
    pub mutation: MutationSummary,
    /// Left out of persisted reports so that reruns stay byte-identical;
    /// timings go to runtime_stats.json.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<RuntimeStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

pub fn render(report: &SessionReport, format: ReportFormat) -> Result<Vec<u8>, CanonicalError> {
    match format {
        ReportFormat::Json => schema::to_canonical_string(report).map(String::into_bytes),
        ReportFormat::Markdown => Ok(render_markdown(report).into_bytes()),
    }
}

fn secs(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |s| format!("{s:.3}"))
}

pub fn render_markdown(report: &SessionReport) -> String {
    let mut md = String::new();
    let r = report;
    let _ = writeln!(md, "# Session report: {} ({})\n", r.system_name, r.system_abv);
    let _ = writeln!(md, "- SUT: `{}`", r.sut);
    let _ = writeln!(md, "- Provider: `{}`", r.provider);
    let _ = writeln!(md, "- Seed: {}", r.rng_seed);
    let _ = writeln!(md, "- Iterations: {}\n", r.iterations);

    let _ = writeln!(md, "## Requirement Coverage\n");
    md.push_str("| Generated MRs | Dropped | Refined | Covered | Requirements | Coverage (%) |\n");
    md.push_str("|---:|---:|---:|---:|---:|---:|\n");
    let _ = writeln!(
        md,
        "| {} | {} | {} | {} | {} | {} |\n",
        r.mr_summary.generated,
        r.mr_summary.dropped,
        r.mr_summary.refined_survivors,
        r.coverage.covered,
        r.coverage.total,
        r.coverage.display
    );
    if !r.coverage.uncovered_ids.is_empty() {
        let _ = writeln!(md, "Uncovered: {}\n", r.coverage.uncovered_ids.join(", "));
    }

    let _ = writeln!(md, "## Test Summary\n");
    md.push_str("| Generated | Dropped | Executed | Passed (%) | Failed (%) |\n");
    md.push_str("|---:|---:|---:|---:|---:|\n");
    let t = &r.test_summary;
    let _ = writeln!(
        md,
        "| {} | {} | {} | {} | {} |\n",
        t.generated, t.dropped, t.executed, t.pass_display, t.fail_display
    );

    let _ = writeln!(md, "## Mutation\n");
    md.push_str("| Operator | Generated | Killed | Discarded (null) | Score |\n");
    md.push_str("|---|---:|---:|---:|---:|\n");
    let m = &r.mutation;
    for (op, c) in &m.per_operator {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} |",
            op.as_str(),
            c.generated,
            c.killed,
            c.discarded_null,
            score_display(c.generated, c.killed)
        );
    }
    let _ = writeln!(
        md,
        "| **Total** | {} | {} | {} | {} |",
        m.generated, m.killed, m.discarded_null, m.score_display
    );

    if let Some(rt) = &r.runtime {
        let _ = writeln!(md, "\n## Runtime\n");
        md.push_str("| Extraction (s) | MR Gen (s) | Test Gen (s) | Test Exec (s) | Mutation (s) | Gen/MR (s) | Gen/TC (s) | Exec/TC (s) |\n");
        md.push_str("|---:|---:|---:|---:|---:|---:|---:|---:|\n");
        let _ = writeln!(
            md,
            "| {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {} | {} | {} |",
            rt.extraction,
            rt.mr_generation,
            rt.test_generation,
            rt.test_execution,
            rt.mutation_analysis,
            secs(rt.gen_time_per_mr),
            secs(rt.gen_time_per_testcase),
            secs(rt.exec_time_per_testcase)
        );
    }
    md
}
