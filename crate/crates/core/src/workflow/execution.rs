//! Runs instantiated tests against the system under test.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::generation::TestCase;
use crate::relations::{check_relation, RelationError, ToleranceConfig};
use crate::signals::{InstantiatedInputs, SignalBundle};
use crate::sut::{Simulator, SutError, SutRef};

use super::artifacts::TestResult;

/// Simulates seed and follow-up inputs of one test and checks its relations.
/// Numeric divergence and relation errors fail the test; backend and
/// interface errors abort the phase.
pub fn execute_test(
    sim: &mut dyn Simulator,
    test: &TestCase,
    inputs: &InstantiatedInputs,
    tol: &ToleranceConfig,
) -> Result<TestResult, SutError> {
    let failed = |error: String| TestResult {
        test_id: test.id.clone(),
        mr_id: test.mr_id.clone(),
        passed: false,
        relations: Vec::new(),
        error: Some(error),
        seed_outputs: None,
        followup_outputs: None,
    };
    let simulate = |sim: &mut dyn Simulator, bundle: &SignalBundle| match sim.simulate(bundle) {
        Ok(out) => Ok(Ok(out)),
        Err(e @ SutError::Numeric { .. }) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    };
    let seed = match simulate(sim, &inputs.seed)? {
        Ok(out) => out,
        Err(e) => return Ok(failed(format!("seed run: {e}"))),
    };
    let followup = match simulate(sim, &inputs.followup)? {
        Ok(out) => out,
        Err(e) => return Ok(failed(format!("follow-up run: {e}"))),
    };

    let mut relations = Vec::with_capacity(test.relations.len());
    let mut errors = Vec::new();
    for relation in &test.relations {
        let pair = seed
            .get(&relation.var)
            .zip(followup.get(&relation.var))
            .ok_or_else(|| RelationError::MissingOutput(relation.var.clone()));
        match pair.and_then(|(s, m)| check_relation(relation, &s, &m, tol)) {
            Ok(v) => relations.push(v),
            Err(e) => errors.push(e.to_string()),
        }
    }
    Ok(TestResult {
        test_id: test.id.clone(),
        mr_id: test.mr_id.clone(),
        passed: errors.is_empty() && relations.iter().all(|v| v.passed),
        relations,
        error: (!errors.is_empty()).then(|| errors.join("; ")),
        seed_outputs: Some(seed),
        followup_outputs: Some(followup),
    })
}

/// Executes every instantiated test, spreading them over at most `jobs`
/// workers that each open their own simulator. Results come back sorted by
/// test id.
pub fn execute_all(
    sut: &SutRef,
    tests: &[TestCase],
    inputs: &[InstantiatedInputs],
    tol: &ToleranceConfig,
    jobs: usize,
) -> Result<Vec<TestResult>, SutError> {
    let by_id: BTreeMap<&str, &TestCase> = tests.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut work: Vec<(&TestCase, &InstantiatedInputs)> = Vec::with_capacity(inputs.len());
    for inp in inputs {
        let test = by_id.get(inp.test_id.as_str()).ok_or_else(|| {
            SutError::InterfaceMismatch(format!("inputs for unknown test `{}`", inp.test_id))
        })?;
        work.push((test, inp));
    }
    if work.is_empty() {
        return Ok(Vec::new());
    }
    let workers = jobs.max(1).min(work.len());
    let chunk = work.len().div_ceil(workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SutError::InterfaceMismatch(format!("cannot start workers: {e}")))?;
    let chunks: Vec<Result<Vec<TestResult>, SutError>> = pool.install(|| {
        work.par_chunks(chunk)
            .map(|part| {
                let mut sim = sut.open()?;
                part.iter()
                    .map(|(test, inp)| execute_test(sim.as_mut(), test, inp, tol))
                    .collect()
            })
            .collect()
    });
    let mut results = Vec::with_capacity(work.len());
    for c in chunks {
        results.extend(c?);
    }
    results.sort_by(|a, b| a.test_id.cmp(&b.test_id));
    Ok(results)
}
