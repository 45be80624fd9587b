use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrflow_core::workflow::artifacts::{artifact_path, REPORT_MD_FILE};
use mrflow_core::workflow::{Phase, Session, SessionConfig, WorkflowError};

#[derive(Debug, Parser)]
#[command(name = "mrflow", version, about = "Metamorphic testing for FMU-style simulation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a full session.
    Run(NewSession),
    /// Start a session and extract the interface and requirements.
    Extract(NewSession),
    /// Generate and refine the MRs of the current iteration.
    GenerateMrs(Existing),
    /// Generate, validate and instantiate test cases.
    GenerateTests(Existing),
    /// Execute the instantiated tests against the SUT.
    Execute(Existing),
    /// Mutate the outputs of passed tests; fails when no test passed.
    Mutate(Existing),
    /// Close the current iteration; prints the report once the session completes.
    Report(Existing),
    /// Continue an interrupted session to completion.
    Resume(Existing),
}

#[derive(Debug, Args)]
struct NewSession {
    /// `builtin:loc`, `fmu:<path>` or a path to a `.fmu` file.
    #[arg(long)]
    sut: String,
    /// Requirements document (markdown).
    #[arg(long)]
    requirements: PathBuf,
    /// `rule-based`, `llm` or `replay:<file>`.
    #[arg(long, default_value = "rule-based")]
    provider: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    iterations: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    mr_count: u64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    tests_per_mr: u64,
    #[arg(long, default_value_t = 2)]
    repair_attempts: usize,
    #[arg(long, default_value = "Lubricating oil cooling")]
    system_name: String,
    #[arg(long, default_value = "LOC")]
    system_abv: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Existing {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Artifact directory.
    #[arg(long)]
    out: PathBuf,
    /// Caps parallel test execution.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
}

impl Common {
    fn jobs(&self) -> Option<usize> {
        self.jobs.map(|j| j as usize)
    }
}

impl NewSession {
    fn config(&self) -> SessionConfig {
        let mut c = SessionConfig::new(&self.sut, &self.requirements.to_string_lossy(), &self.common.out);
        c.provider = self.provider.clone();
        c.rng_seed = self.seed;
        c.max_iterations = self.iterations as usize;
        c.mr_count = self.mr_count as usize;
        c.test_cases_per_mr = self.tests_per_mr as usize;
        c.repair_attempts = self.repair_attempts;
        c.system_name = self.system_name.clone();
        c.system_abv = self.system_abv.clone();
        c.jobs = self.common.jobs();
        c
    }

    fn create(&self) -> Result<Session, WorkflowError> {
        let out = &self.common.out;
        if out.join(mrflow_core::workflow::artifacts::CONFIG_FILE).exists() {
            return Err(WorkflowError::PhaseFailure {
                phase: Phase::Init,
                cause: format!("{} already holds a session; use `resume`", out.display()),
            });
        }
        Session::create(self.config())
    }
}

/// Runs `phases` in order; the session must be at the first one.
fn advance_through(session: &mut Session, phases: &[Phase]) -> Result<(), WorkflowError> {
    if session.state.phase != phases[0] {
        return Err(WorkflowError::WrongPhase {
            expected: phases[0],
            found: session.state.phase,
        });
    }
    for &phase in phases {
        let iteration = session.state.iteration.max(1);
        session.advance()?;
        if let Some(path) = artifact_path(&session.config.output_dir, iteration, phase) {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn print_report(out: &Path) -> Result<(), WorkflowError> {
    let path = out.join(REPORT_MD_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        WorkflowError::Artifact(mrflow_core::schema::ArtifactError::Io {
            path: path.clone(),
            message: e.to_string(),
        })
    })?;
    print!("{text}");
    Ok(())
}

fn execute(command: Command) -> Result<(), WorkflowError> {
    use Phase::*;
    let phase_step = |args: &Existing, phases: &[Phase], strict: bool| -> Result<Session, WorkflowError> {
        let mut session = Session::resume(&args.common.out, args.common.jobs())?;
        session.strict_mutation = strict;
        advance_through(&mut session, phases)?;
        Ok(session)
    };
    match command {
        Command::Run(args) => {
            args.create()?.run()?;
            print_report(&args.common.out)
        }
        Command::Extract(args) => {
            let mut session = args.create()?;
            advance_through(&mut session, &[Init, Extraction])
        }
        Command::GenerateMrs(args) => phase_step(&args, &[MrGeneration, MrRefinement], false).map(drop),
        Command::GenerateTests(args) => {
            phase_step(&args, &[TestGeneration, TestValidation, Instantiation], false).map(drop)
        }
        Command::Execute(args) => phase_step(&args, &[Execution], false).map(drop),
        Command::Mutate(args) => phase_step(&args, &[MutationAnalysis], true).map(drop),
        Command::Report(args) => {
            let mut session = Session::resume(&args.common.out, args.common.jobs())?;
            if session.state.phase != Completed {
                advance_through(&mut session, &[IterationEnd])?;
            }
            if session.state.phase == Completed {
                print_report(&args.common.out)?;
            }
            Ok(())
        }
        Command::Resume(args) => {
            let mut session = Session::resume(&args.common.out, args.common.jobs())?;
            if session.state.phase != Completed {
                session.run()?;
            }
            print_report(&args.common.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ WorkflowError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
