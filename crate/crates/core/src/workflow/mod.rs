//! Phase coordinator: owns the session state, runs one phase node per
//! [`Session::advance`] and persists every phase artifact.

pub mod artifacts;
pub mod execution;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{build_extraction_output, load_requirements, ExtractionOutput, InterfaceSpec};
use crate::generation::llm::{HttpTransport, LlmProvider, ReplayTransport};
use crate::generation::validator::validate_test;
use crate::generation::{
    generate_mrs, generate_tests, refine_mrs, GenerationError, Provider, ProviderRequest, RequestKind,
    RuleBasedProvider, TestCase, HISTORY_WINDOW,
};
use crate::mr::{mr_number, MetamorphicRelation};
use crate::mutation::{run_mutation_analysis, MutationError, MutationReport, PolynomialConfig, RecordedTest};
use crate::relations::ToleranceConfig;
use crate::reporting::{
    render_markdown, requirement_coverage, test_summary, MrSummary, MutationSummary, RuntimeStats, SessionReport,
};
use crate::schema::{self, ArtifactError};
use crate::signals::{instantiate, InstantiatedInputs, TimeGrid};
use crate::sut::SutRef;

use artifacts::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Init,
    Extraction,
    MrGeneration,
    MrRefinement,
    TestGeneration,
    TestValidation,
    Instantiation,
    Execution,
    MutationAnalysis,
    IterationEnd,
    Completed,
}

impl Phase {
    pub const ALL: [Phase; 11] = [
        Phase::Init,
        Phase::Extraction,
        Phase::MrGeneration,
        Phase::MrRefinement,
        Phase::TestGeneration,
        Phase::TestValidation,
        Phase::Instantiation,
        Phase::Execution,
        Phase::MutationAnalysis,
        Phase::IterationEnd,
        Phase::Completed,
    ];

    /// Successor in the fixed order. IterationEnd loops back to
    /// MrGeneration or finishes; that choice is made by the coordinator.
    pub fn next(self) -> Option<Phase> {
        let i = Self::ALL.iter().position(|&p| p == self).expect("listed");
        Self::ALL.get(i + 1).copied()
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Extraction => "extraction",
            Phase::MrGeneration => "mr_generation",
            Phase::MrRefinement => "mr_refinement",
            Phase::TestGeneration => "test_generation",
            Phase::TestValidation => "test_validation",
            Phase::Instantiation => "instantiation",
            Phase::Execution => "execution",
            Phase::MutationAnalysis => "mutation_analysis",
            Phase::IterationEnd => "iteration_end",
            Phase::Completed => "completed",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("unknown provider `{0}`; expected rule-based, llm or replay:<file>")]
    UnknownProvider(String),
}

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("phase {phase} failed: {cause}")]
    PhaseFailure { phase: Phase, cause: String },
    #[error("session is already completed")]
    AlreadyCompleted,
    #[error("session is at phase {found}, expected {expected}")]
    WrongPhase { expected: Phase, found: Phase },
    #[error("no session in {0}")]
    NoSession(PathBuf),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Which provider proposes MRs and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    RuleBased,
    Llm,
    Replay(PathBuf),
}

impl ProviderSpec {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "rule-based" | "rule_based" => Ok(Self::RuleBased),
            "llm" => Ok(Self::Llm),
            _ => match s.strip_prefix("replay:") {
                Some(path) if !path.is_empty() => Ok(Self::Replay(PathBuf::from(path))),
                _ => Err(ConfigError::UnknownProvider(s.into())),
            },
        }
    }

    /// Credentials for `llm` come from the environment only.
    pub fn open(&self) -> Result<Box<dyn Provider>, GenerationError> {
        Ok(match self {
            Self::RuleBased => Box::new(RuleBasedProvider),
            Self::Llm => Box::new(LlmProvider::new(Box::new(HttpTransport::from_env()?), "llm")),
            Self::Replay(path) => Box::new(LlmProvider::new(
                Box::new(ReplayTransport::from_file(path)?),
                format!("replay:{}", path.display()),
            )),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub system_name: String,
    pub system_abv: String,
    /// SUT locator, see [`SutRef::parse`].
    pub sut: String,
    /// Requirements document, as given on the command line.
    pub requirements: String,
    pub max_iterations: usize,
    pub mr_count: usize,
    pub test_cases_per_mr: usize,
    pub provider: String,
    pub rng_seed: u64,
    /// Falls back to the interface's default experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_grid: Option<TimeGrid>,
    pub relation_defaults: ToleranceConfig,
    pub repair_attempts: usize,
    pub polynomial: PolynomialConfig,
    /// Where artifacts go; not persisted so that sessions can move.
    #[serde(skip)]
    pub output_dir: PathBuf,
    /// Worker cap for execution; not persisted.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl SessionConfig {
    pub fn new(sut: &str, requirements: &str, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            system_name: "Lubricating oil cooling".into(),
            system_abv: "LOC".into(),
            sut: sut.into(),
            requirements: requirements.into(),
            max_iterations: 1,
            mr_count: 5,
            test_cases_per_mr: 2,
            provider: "rule-based".into(),
            rng_seed: 42,
            sim_grid: None,
            relation_defaults: ToleranceConfig::default(),
            repair_attempts: 2,
            polynomial: PolynomialConfig::default(),
            output_dir: output_dir.into(),
            jobs: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if self.mr_count < 1 {
            return bad("mr_count must be at least 1");
        }
        if self.test_cases_per_mr < 1 {
            return bad("test_cases_per_mr must be at least 1");
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1");
        }
        SutRef::parse(&self.sut).map_err(ConfigError::Invalid)?;
        ProviderSpec::parse(&self.provider)?;
        if let Some(grid) = &self.sim_grid {
            grid.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        self.relation_defaults.validate().map_err(ConfigError::Invalid)?;
        let p = self.polynomial;
        if !(p.eta > 0.0 && p.probability > 0.0 && p.probability <= 1.0) {
            return bad("polynomial mutation needs eta > 0 and 0 < p <= 1");
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output directory is empty");
        }
        Ok(())
    }

    fn grid(&self, interface: &InterfaceSpec) -> Result<TimeGrid, String> {
        self.sim_grid
            .or(interface.default_experiment)
            .ok_or_else(|| "no simulation grid configured and the interface has no default experiment".into())
    }
}

/// In-memory state of a session. Everything except timings can be rebuilt
/// from the artifact directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub phase: Phase,
    pub iteration: usize,
    pub extraction: Option<ExtractionOutput>,
    /// Most recent MR batches, at most [`HISTORY_WINDOW`].
    pub mr_history: Vec<Vec<MetamorphicRelation>>,
    pub current_mrs: Vec<MetamorphicRelation>,
    pub current_tests: Vec<TestCase>,
    pub skipped: Vec<SkippedMr>,
    pub current_inputs: Vec<InstantiatedInputs>,
    pub current_results: Vec<TestResult>,
    pub current_mutation: Option<MutationReport>,
    pub next_mr_number: usize,
    pub runtime: RuntimeLog,
    pub failure: Option<FailureRecord>,
}

impl Default for SessionState {
    fn default() -> Self {
        Self {
            phase: Phase::Init,
            iteration: 0,
            extraction: None,
            mr_history: Vec::new(),
            current_mrs: Vec::new(),
            current_tests: Vec::new(),
            skipped: Vec::new(),
            current_inputs: Vec::new(),
            current_results: Vec::new(),
            current_mutation: None,
            next_mr_number: 1,
            runtime: RuntimeLog::default(),
            failure: None,
        }
    }
}

impl SessionState {
    fn reset_iteration(&mut self) {
        self.current_mrs.clear();
        self.current_tests.clear();
        self.skipped.clear();
        self.current_inputs.clear();
        self.current_results.clear();
        self.current_mutation = None;
    }

    fn marker(&self) -> StateMarker {
        StateMarker {
            phase: self.phase,
            iteration: self.iteration,
            failure: self.failure.clone(),
        }
    }
}

fn fail(phase: Phase, cause: impl fmt::Display) -> WorkflowError {
    WorkflowError::PhaseFailure {
        phase,
        cause: cause.to_string(),
    }
}

pub struct Session {
    pub config: SessionConfig,
    pub state: SessionState,
    /// When set, mutation analysis without passed tests fails the phase
    /// instead of recording an empty report.
    pub strict_mutation: bool,
    provider: Option<Box<dyn Provider>>,
}

impl Session {
    /// Starts a new session in `config.output_dir`.
    pub fn create(config: SessionConfig) -> Result<Self, WorkflowError> {
        config.validate()?;
        Ok(Self {
            config,
            state: SessionState::default(),
            strict_mutation: false,
            provider: None,
        })
    }

    /// Reopens the session stored in `out`, rebuilding the state from its
    /// artifacts.
    pub fn resume(out: &Path, jobs: Option<usize>) -> Result<Self, WorkflowError> {
        let config_path = out.join(CONFIG_FILE);
        if !config_path.is_file() {
            return Err(WorkflowError::NoSession(out.to_path_buf()));
        }
        let mut config: SessionConfig = schema::read_document(&config_path, "session_config")?;
        config.output_dir = out.to_path_buf();
        config.jobs = jobs;
        config.validate()?;
        let marker: StateMarker = schema::read_document(&out.join(STATE_FILE), "session_state")?;
        let mut state = SessionState {
            phase: marker.phase,
            iteration: marker.iteration,
            failure: marker.failure,
            ..SessionState::default()
        };
        let runtime_path = out.join(RUNTIME_FILE);
        if runtime_path.is_file() {
            state.runtime = schema::read_document(&runtime_path, "runtime_stats")?;
        }
        let mut session = Self {
            config,
            state,
            strict_mutation: false,
            provider: None,
        };
        session.reload()?;
        Ok(session)
    }

    fn out(&self) -> &Path {
        &self.config.output_dir
    }

    fn read<T: serde::de::DeserializeOwned>(&self, iteration: usize, phase: Phase) -> Result<T, WorkflowError> {
        let (_, schema_id) = phase_artifact(phase).expect("phase writes an artifact");
        let path = artifact_path(self.out(), iteration, phase).expect("phase writes an artifact");
        Ok(schema::read_document(&path, schema_id)?)
    }

    fn write<T: Serialize>(&self, phase: Phase, payload: &T) -> Result<PathBuf, WorkflowError> {
        let (_, schema_id) = phase_artifact(phase).expect("phase writes an artifact");
        let path = artifact_path(self.out(), self.state.iteration, phase).expect("phase writes an artifact");
        schema::write_document(&path, schema_id, payload)?;
        Ok(path)
    }

    /// Loads whatever the completed phases of the session left on disk.
    fn reload(&mut self) -> Result<(), WorkflowError> {
        let (phase, k) = (self.state.phase, self.state.iteration);
        if k == 0 {
            return Ok(());
        }
        let past = |p: Phase| phase > p;
        if past(Phase::Extraction) || k > 1 {
            self.state.extraction = Some(self.read(1, Phase::Extraction)?);
        }
        let mut max_number = 0;
        for i in 1..=k {
            let path = artifact_path(self.out(), i, Phase::MrGeneration).expect("has artifact");
            if i == k && !past(Phase::MrGeneration) || !path.is_file() {
                continue;
            }
            let batch: MrsArtifact = self.read(i, Phase::MrGeneration)?;
            max_number = batch.mrs.iter().filter_map(|m| mr_number(&m.id)).fold(max_number, usize::max);
            if i < k {
                let refined: MrsArtifact = self.read(i, Phase::MrRefinement)?;
                self.state.mr_history.push(refined.mrs);
            }
        }
        let start = self.state.mr_history.len().saturating_sub(HISTORY_WINDOW);
        self.state.mr_history.drain(..start);
        self.state.next_mr_number = max_number + 1;

        if past(Phase::MrRefinement) {
            self.state.current_mrs = self.read::<MrsArtifact>(k, Phase::MrRefinement)?.mrs;
        } else if past(Phase::MrGeneration) {
            self.state.current_mrs = self.read::<MrsArtifact>(k, Phase::MrGeneration)?.mrs;
        }
        if past(Phase::TestGeneration) {
            let generated: TestsArtifact = self.read(k, Phase::TestGeneration)?;
            self.state.skipped = generated.skipped;
            self.state.current_tests = if past(Phase::TestValidation) {
                self.read::<TestsArtifact>(k, Phase::TestValidation)?.tests
            } else {
                generated.tests
            };
        }
        if past(Phase::Instantiation) {
            self.state.current_inputs = self.read::<InputsArtifact>(k, Phase::Instantiation)?.inputs;
        }
        if past(Phase::Execution) {
            self.state.current_results = self.read::<ResultsArtifact>(k, Phase::Execution)?.results;
        }
        if past(Phase::MutationAnalysis) {
            self.state.current_mutation = Some(self.read(k, Phase::MutationAnalysis)?);
        }
        Ok(())
    }

    fn provider(&mut self, phase: Phase) -> Result<&mut Box<dyn Provider>, WorkflowError> {
        if self.provider.is_none() {
            let spec = ProviderSpec::parse(&self.config.provider)?;
            self.provider = Some(spec.open().map_err(|e| fail(phase, e))?);
        }
        Ok(self.provider.as_mut().expect("just opened"))
    }

    fn extraction(&self) -> &ExtractionOutput {
        self.state.extraction.as_ref().expect("extraction runs first")
    }

    fn grid(&self, phase: Phase) -> Result<TimeGrid, WorkflowError> {
        self.config.grid(&self.extraction().variables).map_err(|e| fail(phase, e))
    }

    fn persist_state(&self) -> Result<(), WorkflowError> {
        schema::write_document(&self.out().join(STATE_FILE), "session_state", &self.state.marker())?;
        Ok(())
    }

    fn persist_runtime(&self) -> Result<(), WorkflowError> {
        schema::write_document(&self.out().join(RUNTIME_FILE), "runtime_stats", &self.state.runtime)?;
        Ok(())
    }

    /// Runs exactly one phase node, records its duration, persists its
    /// artifact and the resume marker, and moves to the next phase. On
    /// failure the marker keeps the failed phase so it can be retried.
    pub fn advance(&mut self) -> Result<Phase, WorkflowError> {
        let phase = self.state.phase;
        if phase == Phase::Completed {
            return Err(WorkflowError::AlreadyCompleted);
        }
        let started = Instant::now();
        let outcome = self.run_phase(phase);
        let seconds = started.elapsed().as_secs_f64();
        match outcome {
            Ok(next) => {
                self.record_time(phase, seconds);
                self.state.failure = None;
                self.state.phase = next;
                self.persist_runtime()?;
                self.persist_state()?;
                Ok(next)
            }
            Err(e) => {
                self.state.failure = Some(FailureRecord {
                    phase,
                    cause: e.to_string(),
                });
                if self.out().is_dir() {
                    self.persist_state()?;
                }
                Err(e)
            }
        }
    }

    fn record_time(&mut self, phase: Phase, seconds: f64) {
        let log = &mut self.state.runtime;
        log.phases.push(PhaseTiming {
            iteration: self.state.iteration,
            phase,
            seconds,
        });
        let stats = &mut log.stats;
        match phase {
            Phase::Extraction => stats.extraction += seconds,
            Phase::MrGeneration | Phase::MrRefinement => stats.mr_generation += seconds,
            Phase::TestGeneration | Phase::TestValidation | Phase::Instantiation => stats.test_generation += seconds,
            Phase::Execution => stats.test_execution += seconds,
            Phase::MutationAnalysis => stats.mutation_analysis += seconds,
            Phase::Init | Phase::IterationEnd | Phase::Completed => {}
        }
        stats.total += seconds;
    }

    fn run_phase(&mut self, phase: Phase) -> Result<Phase, WorkflowError> {
        match phase {
            Phase::Init => self.init(),
            Phase::Extraction => self.extract(),
            Phase::MrGeneration => self.generate_mrs(),
            Phase::MrRefinement => self.refine_mrs(),
            Phase::TestGeneration => self.generate_tests(),
            Phase::TestValidation => self.validate_tests(),
            Phase::Instantiation => self.instantiate(),
            Phase::Execution => self.execute(),
            Phase::MutationAnalysis => self.mutate(),
            Phase::IterationEnd => self.end_iteration(),
            Phase::Completed => Err(WorkflowError::AlreadyCompleted),
        }
    }

    fn init(&mut self) -> Result<Phase, WorkflowError> {
        self.config.validate()?;
        fs::create_dir_all(self.out()).map_err(|e| fail(Phase::Init, format!("{}: {e}", self.out().display())))?;
        schema::write_document(&self.out().join(CONFIG_FILE), "session_config", &self.config)?;
        self.state.iteration = 1;
        Ok(Phase::Extraction)
    }

    fn extract(&mut self) -> Result<Phase, WorkflowError> {
        let p = Phase::Extraction;
        let sut = SutRef::parse(&self.config.sut).map_err(|e| fail(p, e))?;
        let interface = sut.open().map_err(|e| fail(p, e))?.descriptor().interface.clone();
        let text = fs::read_to_string(&self.config.requirements)
            .map_err(|e| fail(p, format!("{}: {e}", self.config.requirements)))?;
        let requirements = load_requirements(&text).map_err(|e| fail(p, e))?;
        let extraction = build_extraction_output(&interface, &requirements).map_err(|e| fail(p, e))?;
        self.config.grid(&extraction.variables).map_err(|e| fail(p, e))?;
        self.write(p, &extraction)?;
        self.state.extraction = Some(extraction);
        Ok(Phase::MrGeneration)
    }

    fn request(&self, kind: RequestKind, budget: usize, grid: TimeGrid) -> ProviderRequest<'_> {
        ProviderRequest::new(
            kind,
            self.extraction(),
            &self.state.mr_history,
            budget,
            grid,
            self.config.rng_seed,
            self.config.relation_defaults,
        )
    }

    fn generate_mrs(&mut self) -> Result<Phase, WorkflowError> {
        let p = Phase::MrGeneration;
        let next = self.state.next_mr_number;
        let mrs = self.with_provider(p, RequestKind::MrGeneration, self.config.mr_count, |provider, request| {
            generate_mrs(provider, request, next)
        })?;
        let mrs = match mrs {
            Ok(mrs) => mrs,
            Err(GenerationError::Exhausted) => {
                log::warn!("iteration {}: no novel MRs left", self.state.iteration);
                Vec::new()
            }
            Err(e) => return Err(fail(p, e)),
        };
        self.state.next_mr_number += mrs.len();
        self.write(p, &MrsArtifact { mrs: mrs.clone() })?;
        self.state.current_mrs = mrs;
        Ok(Phase::MrRefinement)
    }

    /// Runs `f` with the provider and a request borrowed from the session.
    fn with_provider<T>(
        &mut self,
        phase: Phase,
        kind: RequestKind,
        budget: usize,
        f: impl FnOnce(&mut dyn Provider, &ProviderRequest<'_>) -> T,
    ) -> Result<T, WorkflowError> {
        let grid = self.grid(phase)?;
        self.provider(phase)?;
        let mut provider = self.provider.take().expect("opened");
        let out = {
            let request = self.request(kind, budget, grid);
            f(provider.as_mut(), &request)
        };
        self.provider = Some(provider);
        Ok(out)
    }

    fn refine_mrs(&mut self) -> Result<Phase, WorkflowError> {
        let p = Phase::MrRefinement;
        let mrs = std::mem::take(&mut self.state.current_mrs);
        let attempts = self.config.repair_attempts;
        let refined = self
            .with_provider(p, RequestKind::MrRefinement, mrs.len(), |provider, request| {
                refine_mrs(provider, request, &mrs, attempts)
            })?
            .map_err(|e| fail(p, e))?;
        self.write(p, &MrsArtifact { mrs: refined.clone() })?;
        self.state.current_mrs = refined;
        Ok(Phase::TestGeneration)
    }

    fn generate_tests(&mut self) -> Result<Phase, WorkflowError> {
        let p = Phase::TestGeneration;
        let mrs: Vec<MetamorphicRelation> = self.state.current_mrs.iter().filter(|m| !m.is_dropped()).cloned().collect();
        let budget = self.config.test_cases_per_mr;
        let (tests, skipped) = self.with_provider(p, RequestKind::TestGeneration, budget, |provider, request| {
            let mut tests = Vec::new();
            let mut skipped = Vec::new();
            for mr in &mrs {
                match generate_tests(provider, request, mr) {
                    Ok(t) => tests.extend(t),
                    Err(e @ (GenerationError::InfeasibleTransform { .. } | GenerationError::Exhausted)) => {
                        log::warn!("{}: {e}", mr.id);
                        skipped.push(SkippedMr {
                            mr_id: mr.id.clone(),
                            reason: e.to_string(),
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok((tests, skipped))
        })?
        .map_err(|e| fail(p, e))?;
        let artifact = TestsArtifact { tests, skipped };
        self.write(p, &artifact)?;
        self.state.current_tests = artifact.tests;
        self.state.skipped = artifact.skipped;
        Ok(Phase::TestValidation)
    }

    fn validate_tests(&mut self) -> Result<Phase, WorkflowError> {
        let p = Phase::TestValidation;
        let grid = self.grid(p)?;
        let interface = &self.extraction().variables;
        let tol = &self.config.relation_defaults;
        let validated: Vec<TestCase> = self
            .state
            .current_tests
            .iter()
            .map(|t| validate_test(t, interface, &grid, tol))
            .collect();
        self.write(
            p,
            &TestsArtifact {
                tests: validated.clone(),
                skipped: Vec::new(),
            },
        )?;
        self.state.current_tests = validated;
        Ok(Phase::Instantiation)
    }

    fn instantiate(&mut self) -> Result<Phase, WorkflowError> {
        let p = Phase::Instantiation;
        let grid = self.grid(p)?;
        let inputs = self
            .state
            .current_tests
            .iter()
            .filter(|t| !t.validation.dropped)
            .map(|t| instantiate(t, &grid))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| fail(p, e))?;
        self.write(p, &InputsArtifact { inputs: inputs.clone() })?;
        self.state.current_inputs = inputs;
        Ok(Phase::Execution)
    }

    fn execute(&mut self) -> Result<Phase, WorkflowError> {
        let p = Phase::Execution;
        let sut = SutRef::parse(&self.config.sut).map_err(|e| fail(p, e))?;
        let jobs = self.config.jobs.unwrap_or_else(rayon::current_num_threads);
        let results = execution::execute_all(
            &sut,
            &self.state.current_tests,
            &self.state.current_inputs,
            &self.config.relation_defaults,
            jobs,
        )
        .map_err(|e| fail(p, e))?;
        self.write(p, &ResultsArtifact { results: results.clone() })?;
        self.state.current_results = results;
        Ok(Phase::MutationAnalysis)
    }

    fn mutate(&mut self) -> Result<Phase, WorkflowError> {
        let p = Phase::MutationAnalysis;
        let tests = &self.state.current_tests;
        let recorded: Vec<RecordedTest<'_>> = self
            .state
            .current_results
            .iter()
            .filter(|r| r.passed)
            .filter_map(|r| {
                let test = tests.iter().find(|t| t.id == r.test_id)?;
                Some(RecordedTest {
                    test_id: &r.test_id,
                    relations: &test.relations,
                    seed: r.seed_outputs.as_ref()?,
                    followup: r.followup_outputs.as_ref()?,
                })
            })
            .collect();
        let report = match run_mutation_analysis(
            &recorded,
            &self.extraction().variables,
            &self.config.relation_defaults,
            self.config.polynomial,
            self.config.rng_seed,
        ) {
            Ok(r) => r,
            Err(MutationError::NoPassedTests) if !self.strict_mutation => {
                log::warn!("iteration {}: no passed tests to mutate", self.state.iteration);
                MutationReport::from_records(Vec::new(), &Default::default())
            }
            Err(e) => return Err(fail(p, e)),
        };
        self.write(p, &report)?;
        self.state.current_mutation = Some(report);
        Ok(Phase::IterationEnd)
    }

    fn end_iteration(&mut self) -> Result<Phase, WorkflowError> {
        let p = Phase::IterationEnd;
        let verdicts: Vec<bool> = self.state.current_results.iter().map(|r| r.passed).collect();
        let summary = IterationSummary {
            iteration: self.state.iteration,
            mr_summary: MrSummary::of(&self.state.current_mrs),
            test_summary: test_summary(self.state.current_tests.len(), &verdicts),
            mutation: MutationSummary::combine(self.state.current_mutation.as_ref()),
        };
        self.write(p, &summary)?;

        if self.state.iteration < self.config.max_iterations {
            let batch = std::mem::take(&mut self.state.current_mrs);
            self.state.mr_history.push(batch);
            let start = self.state.mr_history.len().saturating_sub(HISTORY_WINDOW);
            self.state.mr_history.drain(..start);
            self.state.reset_iteration();
            self.state.iteration += 1;
            return Ok(Phase::MrGeneration);
        }
        let report = collect_report(&self.config, self.state.iteration).map_err(|e| fail(p, e))?;
        write_report(self.out(), &report)?;
        Ok(Phase::Completed)
    }

    /// Advances until the session completes.
    pub fn run(&mut self) -> Result<SessionReport, WorkflowError> {
        while self.state.phase != Phase::Completed {
            self.advance()?;
        }
        self.report()
    }

    /// The persisted report plus this session's timings.
    pub fn report(&self) -> Result<SessionReport, WorkflowError> {
        let mut report = collect_report(&self.config, self.state.iteration)?;
        report.runtime = Some(self.unit_stats(&report));
        Ok(report)
    }

    fn unit_stats(&self, report: &SessionReport) -> RuntimeStats {
        self.state.runtime.stats.with_unit_stats(
            report.mr_summary.generated,
            report.test_summary.generated,
            report.test_summary.executed,
        )
    }
}

fn write_report(out: &Path, report: &SessionReport) -> Result<(), WorkflowError> {
    schema::write_document(&out.join(REPORT_FILE), "session_report", report)?;
    fs::write(out.join(REPORT_MD_FILE), render_markdown(report)).map_err(|e| {
        WorkflowError::Artifact(ArtifactError::Io {
            path: out.join(REPORT_MD_FILE),
            message: e.to_string(),
        })
    })
}

/// Aggregates the artifacts of iterations `1..=iterations` into a report
/// without timings.
pub fn collect_report(config: &SessionConfig, iterations: usize) -> Result<SessionReport, WorkflowError> {
    let out = &config.output_dir;
    let read = |i: usize, phase: Phase| -> Result<PathBuf, WorkflowError> {
        Ok(artifact_path(out, i, phase).expect("phase writes an artifact"))
    };
    let extraction: ExtractionOutput = schema::read_document(&read(1, Phase::Extraction)?, "extraction")?;
    let mut mrs = Vec::new();
    let mut generated_tests = 0;
    let mut verdicts = Vec::new();
    let mut mutation = Vec::new();
    for i in 1..=iterations {
        mrs.extend(schema::read_document::<MrsArtifact>(&read(i, Phase::MrRefinement)?, "mrs")?.mrs);
        generated_tests += schema::read_document::<TestsArtifact>(&read(i, Phase::TestValidation)?, "tests")?
            .tests
            .len();
        let results: ResultsArtifact = schema::read_document(&read(i, Phase::Execution)?, "results")?;
        verdicts.extend(results.results.iter().map(|r| r.passed));
        mutation.push(schema::read_document::<MutationReport>(
            &read(i, Phase::MutationAnalysis)?,
            "mutation_report",
        )?);
    }
    let coverage = requirement_coverage(&extraction, &mrs).map_err(|e| fail(Phase::IterationEnd, e))?;
    Ok(SessionReport {
        system_name: config.system_name.clone(),
        system_abv: config.system_abv.clone(),
        sut: config.sut.clone(),
        provider: config.provider.clone(),
        rng_seed: config.rng_seed,
        iterations,
        mr_summary: MrSummary::of(&mrs),
        coverage,
        test_summary: test_summary(generated_tests, &verdicts),
        mutation: MutationSummary::combine(&mutation),
        runtime: None,
    })
}

/// Creates a session and runs it to completion.
pub fn run_session(config: SessionConfig) -> Result<SessionReport, WorkflowError> {
    Session::create(config)?.run()
}
