use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrflow_core::schema;
use mrflow_core::workflow::artifacts::{artifact_path, ResultsArtifact, REPORT_FILE, REPORT_MD_FILE};
use mrflow_core::workflow::Phase;

fn requirements() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/loc_requirements.md")
}

fn mrflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrflow"))
        .args(args)
        .env_remove("LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn session_flags(out: &Path) -> Vec<String> {
    let req = requirements();
    [
        "--sut", "builtin:loc",
        "--requirements", req.to_str().unwrap(),
        "--provider", "rule-based",
        "--seed", "42",
        "--iterations", "1",
        "--mr-count", "5",
        "--tests-per-mr", "5",
        "--out", out.to_str().unwrap(),
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

fn run_with(sub: &str, flags: &[String]) -> Output {
    let mut args = vec![sub];
    args.extend(flags.iter().map(String::as_str));
    mrflow(&args)
}

#[test]
fn run_writes_the_session_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run_with("run", &session_flags(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join(REPORT_FILE).is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("## Requirement Coverage"));
}

#[test]
fn zero_iterations_is_a_usage_error() {
    let o = mrflow(&["run", "--iterations", "0", "--sut", "builtin:loc", "--requirements", "r.md", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flags_are_rejected() {
    let o = mrflow(&["run", "--sut", "builtin:loc", "--requirements", "r.md", "--out", "o", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(mrflow(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_provider_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut flags = session_flags(&dir.path().join("out"));
    let i = flags.iter().position(|f| f == "rule-based").unwrap();
    flags[i] = "oracle".into();
    assert_eq!(run_with("run", &flags).status.code(), Some(2));
}

#[test]
fn llm_provider_without_credentials_fails_the_phase() {
    let dir = tempfile::tempdir().unwrap();
    let mut flags = session_flags(&dir.path().join("out"));
    let i = flags.iter().position(|f| f == "rule-based").unwrap();
    flags[i] = "llm".into();
    let o = run_with("run", &flags);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("MrGeneration"), "{err}");
    assert!(err.contains("LLM_API_KEY"), "{err}");
}

#[test]
fn chained_phases_equal_run() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole");
    let steps = dir.path().join("steps");
    assert_eq!(run_with("run", &session_flags(&whole)).status.code(), Some(0));

    assert_eq!(run_with("extract", &session_flags(&steps)).status.code(), Some(0));
    let out = ["--out".to_string(), steps.to_string_lossy().into_owned()];
    for sub in ["generate-mrs", "generate-tests", "execute", "mutate", "report"] {
        let o = run_with(sub, &out);
        assert_eq!(o.status.code(), Some(0), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for file in [REPORT_FILE, REPORT_MD_FILE, "config.json"] {
        assert_eq!(fs::read(whole.join(file)).unwrap(), fs::read(steps.join(file)).unwrap(), "{file}");
    }
    // The report subcommand is idempotent on a completed session.
    assert_eq!(run_with("report", &out).status.code(), Some(0));
}

#[test]
fn phase_out_of_order_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run_with("extract", &session_flags(&out)).status.code(), Some(0));
    let o = mrflow(&["execute", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("expected Execution"));
}

#[test]
fn mutate_without_executed_tests_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run_with("extract", &session_flags(&out)).status.code(), Some(0));
    let flag = ["--out", out.to_str().unwrap()];
    for sub in ["generate-mrs", "generate-tests", "execute"] {
        assert_eq!(mrflow(&[&[sub][..], &flag[..]].concat()).status.code(), Some(0));
    }
    let results = artifact_path(&out, 1, Phase::Execution).unwrap();
    schema::write_document(&results, "results", &ResultsArtifact { results: Vec::new() }).unwrap();
    let o = mrflow(&["mutate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no passed tests to mutate"));
}

#[test]
fn run_refuses_an_existing_session() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(run_with("extract", &session_flags(&out)).status.code(), Some(0));
    assert_eq!(run_with("run", &session_flags(&out)).status.code(), Some(1));
}

#[test]
fn resume_finishes_a_partial_session() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole");
    let part = dir.path().join("part");
    assert_eq!(run_with("run", &session_flags(&whole)).status.code(), Some(0));
    assert_eq!(run_with("extract", &session_flags(&part)).status.code(), Some(0));
    assert_eq!(mrflow(&["generate-mrs", "--out", part.to_str().unwrap()]).status.code(), Some(0));
    let o = mrflow(&["resume", "--out", part.to_str().unwrap(), "--jobs", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(whole.join(REPORT_FILE)).unwrap(), fs::read(part.join(REPORT_FILE)).unwrap());
}

#[test]
fn resume_without_session_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrflow(&["resume", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
