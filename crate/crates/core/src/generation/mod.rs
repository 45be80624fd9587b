//! MR and test-case generation through pluggable providers.
//!
//! A [`Provider`] proposes MRs, optionally revises them during refinement and
//! proposes concrete tests. The functions here wrap any provider with the
//! provider-independent rules: history deduplication, id assignment, the
//! static-check repair loop and tolerance defaults.

pub mod llm;
pub mod rule_based;
pub mod sampler;
pub mod validator;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::ExtractionOutput;
use crate::mr::{
    apply_repair, mr_id, static_check, Finding, MetamorphicRelation, MrCategory, MrSignature,
    OutputRelation, RelationKind, Refinement,
};
use crate::relations::ToleranceConfig;
use crate::signals::{SignalPattern, TimeGrid};

pub use rule_based::RuleBasedProvider;

/// Number of previous MR batches kept as deduplication context.
pub const HISTORY_WINDOW: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    Format(String),
    #[error("provider budget exceeded: {0}")]
    Budget(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("no novel MRs left to generate")]
    Exhausted,
    #[error("{mr_id}: cannot {op} `{var}`: {reason}")]
    InfeasibleTransform {
        mr_id: String,
        var: String,
        op: String,
        reason: String,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    MrGeneration,
    MrRefinement,
    TestGeneration,
}

/// Everything a provider may look at for one call.
#[derive(Debug, Clone, Serialize)]
pub struct ProviderRequest<'a> {
    pub kind: RequestKind,
    pub extraction: &'a ExtractionOutput,
    pub history: &'a [Vec<MetamorphicRelation>],
    /// `mr_count` for MR generation, `test_cases_per_mr` for tests.
    pub budget: usize,
    pub priority_order: Vec<MrCategory>,
    pub grid: TimeGrid,
    pub rng_seed: u64,
    pub tolerances: ToleranceConfig,
}

impl<'a> ProviderRequest<'a> {
    pub fn new(
        kind: RequestKind,
        extraction: &'a ExtractionOutput,
        history: &'a [Vec<MetamorphicRelation>],
        budget: usize,
        grid: TimeGrid,
        rng_seed: u64,
        tolerances: ToleranceConfig,
    ) -> Self {
        let start = history.len().saturating_sub(HISTORY_WINDOW);
        Self {
            kind,
            extraction,
            history: &history[start..],
            budget,
            priority_order: vec![MrCategory::Behavioral, MrCategory::Performance],
            grid,
            rng_seed,
            tolerances,
        }
    }
}

pub trait Provider {
    fn name(&self) -> String;

    fn propose_mrs(&mut self, request: &ProviderRequest<'_>) -> Result<Vec<MetamorphicRelation>, GenerationError>;

    /// Gives the provider a chance to revise an MR before the deterministic
    /// repairs run. The default keeps the MR as is.
    fn revise_mr(
        &mut self,
        _request: &ProviderRequest<'_>,
        mr: &MetamorphicRelation,
        _findings: &[Finding],
    ) -> Result<MetamorphicRelation, GenerationError> {
        Ok(mr.clone())
    }

    fn propose_tests(
        &mut self,
        request: &ProviderRequest<'_>,
        mr: &MetamorphicRelation,
    ) -> Result<Vec<TestCase>, GenerationError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Validation {
    pub fixed: bool,
    pub dropped: bool,
    #[serde(default)]
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestCase {
    pub id: String,
    pub mr_id: String,
    pub inputs: BTreeMap<String, SignalPattern>,
    pub relations: Vec<OutputRelation>,
    #[serde(default)]
    pub validation: Validation,
}

pub fn test_id(mr_id: &str, n: usize) -> String {
    format!("{mr_id}_T{n:03}")
}

/// Runs MR generation: drops anything already in the history window or
/// repeated within the batch, keeps at most `budget`, orders behavioral before
/// performance and numbers the survivors from `next_id`.
pub fn generate_mrs(
    provider: &mut dyn Provider,
    request: &ProviderRequest<'_>,
    next_id: usize,
) -> Result<Vec<MetamorphicRelation>, GenerationError> {
    if request.budget == 0 {
        return Err(GenerationError::InvalidRequest("mr_count must be at least 1".into()));
    }
    let proposed = provider.propose_mrs(request)?;
    let mut seen: BTreeSet<MrSignature> = request
        .history
        .iter()
        .flatten()
        .map(MetamorphicRelation::signature)
        .collect();
    let mut fresh: Vec<MetamorphicRelation> = proposed
        .into_iter()
        .filter(|mr| seen.insert(mr.signature()))
        .collect();
    if fresh.is_empty() {
        return Err(GenerationError::Exhausted);
    }
    fresh.sort_by_key(|mr| mr.category.priority());
    fresh.truncate(request.budget);
    for (offset, mr) in fresh.iter_mut().enumerate() {
        mr.id = mr_id(next_id + offset);
        mr.refinement = None;
    }
    Ok(fresh)
}

/// Provider revision followed by up to `repair_attempts` rounds of
/// deterministic repairs. MRs that still have fatal or unrepaired findings
/// are marked dropped; they are never removed from the list.
pub fn refine_mrs(
    provider: &mut dyn Provider,
    request: &ProviderRequest<'_>,
    mrs: &[MetamorphicRelation],
    repair_attempts: usize,
) -> Result<Vec<MetamorphicRelation>, GenerationError> {
    let extraction = request.extraction;
    let mut out = Vec::with_capacity(mrs.len());
    for original in mrs {
        let findings = static_check(original, extraction);
        let mut mr = provider.revise_mr(request, original, &findings)?;
        mr.id = original.id.clone();
        let mut notes = Vec::new();
        let mut dropped = false;
        let mut attempts = 0;
        loop {
            let findings = static_check(&mr, extraction);
            let fatal: Vec<String> = findings
                .iter()
                .filter_map(|f| match &f.outcome {
                    crate::mr::Outcome::Fatal { reason } => Some(reason.to_string()),
                    _ => None,
                })
                .collect();
            if !fatal.is_empty() {
                notes.extend(fatal);
                dropped = true;
                break;
            }
            let repairs: Vec<_> = findings.iter().filter_map(Finding::repair).cloned().collect();
            if repairs.is_empty() {
                break;
            }
            if attempts == repair_attempts {
                notes.push(format!("still needs repair after {repair_attempts} attempts"));
                dropped = true;
                break;
            }
            for repair in &repairs {
                apply_repair(&mut mr, repair);
                notes.push(repair.to_string());
            }
            attempts += 1;
        }
        let feedback = if notes.is_empty() {
            "passed all checks".to_string()
        } else {
            notes.join("; ")
        };
        mr.refinement = Some(Refinement { feedback, dropped });
        out.push(mr);
    }
    Ok(out)
}

/// Asks the provider for up to `request.budget` tests for one MR and
/// normalizes ids and relation tolerances.
pub fn generate_tests(
    provider: &mut dyn Provider,
    request: &ProviderRequest<'_>,
    mr: &MetamorphicRelation,
) -> Result<Vec<TestCase>, GenerationError> {
    if mr.is_dropped() {
        return Err(GenerationError::InvalidRequest(format!("{} is dropped", mr.id)));
    }
    if request.budget == 0 {
        return Err(GenerationError::InvalidRequest(
            "test_cases_per_mr must be at least 1".into(),
        ));
    }
    let mut tests = provider.propose_tests(request, mr)?;
    tests.truncate(request.budget);
    for (i, test) in tests.iter_mut().enumerate() {
        test.id = test_id(&mr.id, i + 1);
        test.mr_id = mr.id.clone();
        test.validation = Validation::default();
        for relation in &mut test.relations {
            concretize(relation, &request.grid, &request.tolerances);
        }
    }
    Ok(tests)
}

/// Fills every tolerance the relation leaves open with the configured default.
pub fn concretize(relation: &mut OutputRelation, grid: &TimeGrid, tol: &ToleranceConfig) {
    match relation.kind {
        RelationKind::EventuallyIncreases | RelationKind::EventuallyDecreases => {
            relation.tolerance.get_or_insert(tol.eventually_margin);
        }
        RelationKind::ProportionalTo => {
            relation.tolerance.get_or_insert(tol.proportional_rho);
        }
        RelationKind::EqualTo => {
            relation.tolerance.get_or_insert(tol.equal_atol);
            relation.rtol.get_or_insert(tol.equal_rtol);
        }
        RelationKind::SettlesWithin => {
            relation.tolerance.get_or_insert(tol.settle_band);
            relation
                .window
                .get_or_insert(tol.settle_window_fraction * grid.span());
        }
    }
}
