//! Output-level mutation analysis on the recorded traces of passed tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::extraction::InterfaceSpec;
use crate::mr::OutputRelation;
use crate::relations::{evaluate_test, RelationError, RelationVerdict, ToleranceConfig};
use crate::reporting::fixed_half_up;
use crate::signals::{SignalBundle, Trace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutationError {
    #[error("traces `{0}` and `{1}` are on different grids")]
    GridMismatch(String, String),
    #[error("crossover site {site} outside 1..={last}")]
    SiteOutOfRange { site: usize, last: usize },
    #[error("invalid polynomial mutation bounds [{min}, {max}]")]
    BoundsError { min: f64, max: f64 },
    #[error("invalid polynomial mutation parameters: eta={eta}, p={probability}")]
    BadParameters { eta: f64, probability: f64 },
    #[error("no passed tests to mutate")]
    NoPassedTests,
    #[error("test {test_id}: {source}")]
    Relation {
        test_id: String,
        #[source]
        source: RelationError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MutationOperator {
    Mirror,
    Crossover,
    Polynomial,
}

impl MutationOperator {
    pub const ALL: [MutationOperator; 3] = [Self::Mirror, Self::Crossover, Self::Polynomial];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mirror => "Mirror",
            Self::Crossover => "Crossover",
            Self::Polynomial => "Polynomial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialConfig {
    /// Distribution index; larger values keep mutations closer to the original.
    pub eta: f64,
    /// Chance that any one sample is perturbed.
    pub probability: f64,
}

impl Default for PolynomialConfig {
    fn default() -> Self {
        Self {
            eta: 20.0,
            probability: 0.1,
        }
    }
}

/// Time reversal on the same grid.
pub fn mirror(trace: &Trace) -> Trace {
    trace.with_values(trace.values.iter().rev().copied().collect())
}

/// Swaps the tails of `a` and `b` from `site` on.
pub fn crossover(a: &Trace, b: &Trace, site: usize) -> Result<(Trace, Trace), MutationError> {
    if a.grid != b.grid || a.len() != b.len() {
        return Err(MutationError::GridMismatch(a.var.clone(), b.var.clone()));
    }
    // A site equal to the length leaves both tails empty.
    let last = a.len();
    if site == 0 || site > last {
        return Err(MutationError::SiteOutOfRange { site, last });
    }
    let splice = |head: &Trace, tail: &Trace| -> Vec<f64> {
        head.values[..site].iter().chain(&tail.values[site..]).copied().collect()
    };
    Ok((a.with_values(splice(a, b)), b.with_values(splice(b, a))))
}

/// Midpoint of the index range, used as the crossover site.
pub fn midpoint_site(len: usize) -> usize {
    len / 2
}

/// Perturbation factor of polynomial mutation for a uniform draw `u`.
pub fn polynomial_delta(u: f64, eta: f64) -> f64 {
    let exponent = 1.0 / (eta + 1.0);
    if u < 0.5 {
        (2.0 * u).powf(exponent) - 1.0
    } else {
        1.0 - (2.0 * (1.0 - u)).powf(exponent)
    }
}

pub fn polynomial_mutate(
    trace: &Trace,
    bounds: (f64, f64),
    config: PolynomialConfig,
    rng_seed: u64,
) -> Result<Trace, MutationError> {
    let (lo, hi) = bounds;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(MutationError::BoundsError { min: lo, max: hi });
    }
    let PolynomialConfig { eta, probability } = config;
    if !(eta > 0.0 && eta.is_finite() && probability > 0.0 && probability <= 1.0) {
        return Err(MutationError::BadParameters { eta, probability });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let values = trace
        .values
        .iter()
        .map(|&x| {
            if rng.random::<f64>() < probability {
                let delta = polynomial_delta(rng.random::<f64>(), eta);
                (x + delta * (hi - lo)).clamp(lo, hi)
            } else {
                x
            }
        })
        .collect();
    Ok(trace.with_values(values))
}

/// Declared bounds of `var` when both are present, else the observed range
/// widened by 10% on each side.
pub fn mutation_bounds(interface: &InterfaceSpec, trace: &Trace) -> (f64, f64) {
    if let Some(spec) = interface.variable(&trace.var) {
        if let (Some(lo), Some(hi)) = (spec.min, spec.max) {
            if lo < hi {
                return (lo, hi);
            }
        }
    }
    let (lo, hi) = trace.min_max();
    let mut pad = 0.1 * (hi - lo);
    if pad == 0.0 {
        pad = 0.1 * lo.abs().max(hi.abs());
    }
    if pad == 0.0 {
        pad = 0.1;
    }
    (lo - pad, hi + pad)
}

fn mutant_seed(rng_seed: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(rng_seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// A passed test with both recorded output bundles.
#[derive(Debug, Clone, Copy)]
pub struct RecordedTest<'a> {
    pub test_id: &'a str,
    pub relations: &'a [OutputRelation],
    pub seed: &'a SignalBundle,
    pub followup: &'a SignalBundle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mutant {
    pub id: String,
    pub test_id: String,
    pub operator: MutationOperator,
    pub targets: Vec<String>,
    /// Follow-up outputs with the target traces replaced.
    pub mutated: SignalBundle,
    pub killed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutantRecord {
    pub id: String,
    pub test_id: String,
    pub operator: MutationOperator,
    pub targets: Vec<String>,
    pub killed: bool,
    pub verdicts: Vec<RelationVerdict>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorCounts {
    pub generated: usize,
    pub killed: usize,
    pub discarded_null: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationReport {
    pub generated: usize,
    pub killed: usize,
    /// killed / generated, or None when nothing was generated.
    pub score: Option<f64>,
    /// Score rounded half-up to two decimals.
    pub score_display: String,
    pub discarded_null: usize,
    pub per_operator: BTreeMap<MutationOperator, OperatorCounts>,
    pub mutants: Vec<MutantRecord>,
}

impl MutationReport {
    /// Builds the report from per-mutant records, sorting them by id.
    pub fn from_records(mut mutants: Vec<MutantRecord>, discarded: &BTreeMap<MutationOperator, usize>) -> Self {
        mutants.sort_by(|a, b| a.id.cmp(&b.id));
        let mut per_operator: BTreeMap<MutationOperator, OperatorCounts> =
            MutationOperator::ALL.iter().map(|&op| (op, OperatorCounts::default())).collect();
        for m in &mutants {
            let counts = per_operator.get_mut(&m.operator).expect("all operators present");
            counts.generated += 1;
            counts.killed += usize::from(m.killed);
        }
        for (op, n) in discarded {
            per_operator.get_mut(op).expect("all operators present").discarded_null += n;
        }
        let generated = mutants.len();
        let killed = mutants.iter().filter(|m| m.killed).count();
        Self {
            generated,
            killed,
            score: mutation_score(generated, killed),
            score_display: score_display(generated, killed),
            discarded_null: discarded.values().sum(),
            per_operator,
            mutants,
        }
    }
}

pub fn mutation_score(generated: usize, killed: usize) -> Option<f64> {
    (generated > 0).then(|| killed as f64 / generated as f64)
}

/// `killed / generated` to two decimals, half-up, computed on integers so
/// that exact halves such as 65/104 = 0.625 round up.
pub fn score_display(generated: usize, killed: usize) -> String {
    if generated == 0 {
        return "n/a".into();
    }
    fixed_half_up(killed as u128, generated as u128, 2)
}

/// True when every target of the mutant matches the original within the
/// default equality tolerance.
fn is_null(original: &SignalBundle, mutated: &SignalBundle, targets: &[String], tol: &ToleranceConfig) -> bool {
    targets.iter().all(|var| {
        let (Some(o), Some(m)) = (original.values(var), mutated.values(var)) else {
            return false;
        };
        o.iter()
            .zip(m)
            .all(|(o, m)| (m - o).abs() <= tol.equal_atol + tol.equal_rtol * o.abs())
    })
}

/// Relation-bearing outputs of a test, deduplicated, in first-use order.
fn relation_vars(relations: &[OutputRelation]) -> Vec<String> {
    let mut vars: Vec<String> = Vec::new();
    for r in relations {
        if !vars.contains(&r.var) {
            vars.push(r.var.clone());
        }
    }
    vars
}

fn replace(bundle: &SignalBundle, traces: &[Trace]) -> SignalBundle {
    let mut out = bundle.clone();
    for t in traces {
        out.traces.insert(t.var.clone(), t.values.clone());
    }
    out
}

/// Every mutant of one passed test, before null filtering and evaluation.
pub fn mutants_for(
    test: &RecordedTest<'_>,
    interface: &InterfaceSpec,
    config: PolynomialConfig,
    rng_seed: u64,
) -> Result<Vec<Mutant>, MutationError> {
    let vars = relation_vars(test.relations);
    let mut traces = Vec::with_capacity(vars.len());
    for var in &vars {
        let trace = test.followup.get(var).ok_or_else(|| MutationError::Relation {
            test_id: test.test_id.into(),
            source: RelationError::MissingOutput(var.clone()),
        })?;
        traces.push(trace);
    }

    let make = |operator: MutationOperator, replaced: Vec<Trace>| {
        let targets: Vec<String> = replaced.iter().map(|t| t.var.clone()).collect();
        Mutant {
            id: format!("{}:{}:{}", test.test_id, operator.as_str(), targets.join("+")),
            test_id: test.test_id.into(),
            operator,
            mutated: replace(test.followup, &replaced),
            targets,
            killed: None,
        }
    };

    let mut out = Vec::new();
    for trace in &traces {
        out.push(make(MutationOperator::Mirror, vec![mirror(trace)]));
    }
    for (i, a) in traces.iter().enumerate() {
        for b in &traces[i + 1..] {
            let site = midpoint_site(a.len());
            match crossover(a, b, site) {
                Ok((x, y)) => out.push(make(MutationOperator::Crossover, vec![x, y])),
                // Length-1 traces have no site to cut at.
                Err(MutationError::SiteOutOfRange { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    for trace in &traces {
        let key = format!("{}/{}/polynomial", test.test_id, trace.var);
        let mutated = polynomial_mutate(trace, mutation_bounds(interface, trace), config, mutant_seed(rng_seed, &key))?;
        out.push(make(MutationOperator::Polynomial, vec![mutated]));
    }
    Ok(out)
}

/// Mutates the follow-up outputs of each passed test and re-evaluates the
/// test's relations against its untouched seed outputs.
pub fn run_mutation_analysis(
    tests: &[RecordedTest<'_>],
    interface: &InterfaceSpec,
    tol: &ToleranceConfig,
    config: PolynomialConfig,
    rng_seed: u64,
) -> Result<MutationReport, MutationError> {
    if tests.is_empty() {
        return Err(MutationError::NoPassedTests);
    }
    type Evaluated = (Vec<MutantRecord>, Vec<MutationOperator>);
    let per_test: Vec<Result<Evaluated, MutationError>> = tests
        .par_iter()
        .map(|test| {
            let mut records = Vec::new();
            let mut nulls = Vec::new();
            for mutant in mutants_for(test, interface, config, rng_seed)? {
                if is_null(test.followup, &mutant.mutated, &mutant.targets, &ToleranceConfig::default()) {
                    nulls.push(mutant.operator);
                    continue;
                }
                let verdict = evaluate_test(test.relations, test.seed, &mutant.mutated, tol).map_err(|source| {
                    MutationError::Relation {
                        test_id: test.test_id.into(),
                        source,
                    }
                })?;
                records.push(MutantRecord {
                    id: mutant.id,
                    test_id: mutant.test_id,
                    operator: mutant.operator,
                    targets: mutant.targets,
                    killed: !verdict.passed,
                    verdicts: verdict.relations,
                });
            }
            Ok((records, nulls))
        })
        .collect();

    let mut records = Vec::new();
    let mut discarded: BTreeMap<MutationOperator, usize> = BTreeMap::new();
    for result in per_test {
        let (r, nulls) = result?;
        records.extend(r);
        for op in nulls {
            *discarded.entry(op).or_default() += 1;
        }
    }
    Ok(MutationReport::from_records(records, &discarded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mr::RelationKind;
    use crate::signals::TimeGrid;
    use proptest::prelude::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, (n - 1) as f64, 1.0).unwrap()
    }

    fn trace(var: &str, values: &[f64]) -> Trace {
        Trace::new(var, grid(values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn mirror_examples() {
        assert_eq!(mirror(&trace("y", &[1.0, 2.0, 3.0])).values, vec![3.0, 2.0, 1.0]);
        assert_eq!(mirror(&trace("y", &[1.0, 5.0, 1.0])).values, vec![1.0, 5.0, 1.0]);
        // Grids hold at least two samples, so build the single-sample trace by hand.
        let single = Trace {
            var: "y".into(),
            grid: grid(2),
            values: vec![4.0],
        };
        assert_eq!(mirror(&single).values, vec![4.0]);
    }

    #[test]
    fn crossover_examples() {
        let a = trace("a", &[1.0; 4]);
        let b = trace("b", &[9.0; 4]);
        let (x, y) = crossover(&a, &b, 2).unwrap();
        assert_eq!(x.values, vec![1.0, 1.0, 9.0, 9.0]);
        assert_eq!(y.values, vec![9.0, 9.0, 1.0, 1.0]);
        assert_eq!(x.var, "a");

        let (x2, y2) = crossover(&x, &y, 2).unwrap();
        assert_eq!((x2, y2), (a.clone(), b.clone()));

        assert_eq!(crossover(&a, &b, 4), Ok((a.clone(), b.clone())));
        assert_eq!(
            crossover(&a, &b, 5),
            Err(MutationError::SiteOutOfRange { site: 5, last: 4 })
        );
        assert!(matches!(crossover(&a, &b, 0), Err(MutationError::SiteOutOfRange { .. })));
        let short = trace("c", &[1.0; 3]);
        assert!(matches!(crossover(&a, &short, 1), Err(MutationError::GridMismatch(..))));
    }

    #[test]
    fn polynomial_symmetry_point_and_clamping() {
        assert_eq!(polynomial_delta(0.5, 20.0), 0.0);
        assert!(polynomial_delta(0.0, 20.0) == -1.0);
        assert!(polynomial_delta(0.9, 20.0) > 0.0);

        let t = trace("y", &[1.0; 50]);
        let cfg = PolynomialConfig { eta: 20.0, probability: 1.0 };
        let a = polynomial_mutate(&t, (0.0, 1.0), cfg, 7).unwrap();
        let b = polynomial_mutate(&t, (0.0, 1.0), cfg, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&v| v <= 1.0));
        assert!(a.values.contains(&1.0));
        assert!(a.values.iter().any(|&v| v < 1.0));

        assert!(matches!(
            polynomial_mutate(&t, (1.0, 1.0), cfg, 7),
            Err(MutationError::BoundsError { .. })
        ));
        assert!(matches!(
            polynomial_mutate(&t, (0.0, 1.0), PolynomialConfig { eta: 20.0, probability: 0.0 }, 7),
            Err(MutationError::BadParameters { .. })
        ));
    }

    #[test]
    fn score_rounds_half_up() {
        assert_eq!(score_display(104, 65), "0.63");
        assert_eq!(score_display(176, 83), "0.47");
        assert_eq!(score_display(94, 63), "0.67");
        assert_eq!(score_display(8, 1), "0.13");
        assert_eq!(score_display(0, 0), "n/a");
        assert_eq!(mutation_score(104, 65), Some(0.625));
        assert_eq!(mutation_score(0, 0), None);
    }

    #[test]
    fn bounds_fall_back_to_widened_observed_range() {
        let iface = crate::sut::loc_interface();
        assert_eq!(mutation_bounds(&iface, &trace("position_valve", &[0.2, 0.4])), (0.0, 1.0));
        let (lo, hi) = mutation_bounds(&iface, &trace("unknown", &[2.0, 4.0]));
        assert!((lo - 1.8).abs() < 1e-12 && (hi - 4.2).abs() < 1e-12);
        assert_eq!(mutation_bounds(&iface, &trace("unknown", &[0.0, 0.0])), (-0.1, 0.1));
    }

    fn bundle(traces: &[Trace]) -> SignalBundle {
        let mut b = SignalBundle::new(traces[0].grid);
        for t in traces {
            b.insert(t.clone()).unwrap();
        }
        b
    }

    #[test]
    fn mirror_of_rising_output_is_killed() {
        let seed = bundle(&[trace("y", &[0.0; 6])]);
        let followup = bundle(&[trace("y", &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0])]);
        let relations = vec![OutputRelation::new("y", RelationKind::EventuallyIncreases)];
        let test = RecordedTest {
            test_id: "MR001_T001",
            relations: &relations,
            seed: &seed,
            followup: &followup,
        };
        let iface = crate::sut::loc_interface();
        let report =
            run_mutation_analysis(&[test], &iface, &ToleranceConfig::default(), PolynomialConfig::default(), 1)
                .unwrap();
        let mirror = report
            .mutants
            .iter()
            .find(|m| m.operator == MutationOperator::Mirror)
            .unwrap();
        assert!(mirror.killed);
        // One output: no crossover pair.
        assert_eq!(report.per_operator[&MutationOperator::Crossover].generated, 0);
        assert!(report.killed <= report.generated);
    }

    #[test]
    fn constant_mirror_is_discarded_as_null() {
        let seed = bundle(&[trace("y", &[1.0; 5]), trace("z", &[1.0; 5])]);
        let followup = bundle(&[trace("y", &[2.0; 5]), trace("z", &[2.0; 5])]);
        let relations = vec![
            OutputRelation::new("y", RelationKind::EventuallyIncreases),
            OutputRelation::new("z", RelationKind::EventuallyIncreases),
        ];
        let test = RecordedTest {
            test_id: "MR001_T001",
            relations: &relations,
            seed: &seed,
            followup: &followup,
        };
        let report = run_mutation_analysis(
            &[test],
            &crate::sut::loc_interface(),
            &ToleranceConfig::default(),
            PolynomialConfig::default(),
            1,
        )
        .unwrap();
        let counts = &report.per_operator;
        assert_eq!(counts[&MutationOperator::Mirror].generated, 0);
        assert_eq!(counts[&MutationOperator::Mirror].discarded_null, 2);
        assert_eq!(counts[&MutationOperator::Crossover].discarded_null, 1);
    }

    #[test]
    fn no_passed_tests() {
        let r = run_mutation_analysis(
            &[],
            &crate::sut::loc_interface(),
            &ToleranceConfig::default(),
            PolynomialConfig::default(),
            1,
        );
        assert_eq!(r, Err(MutationError::NoPassedTests));
    }

    #[test]
    fn report_counts_add_up() {
        let rec = |id: &str, op, killed| MutantRecord {
            id: id.into(),
            test_id: "T".into(),
            operator: op,
            targets: vec!["y".into()],
            killed,
            verdicts: vec![],
        };
        let report = MutationReport::from_records(
            vec![
                rec("b", MutationOperator::Polynomial, false),
                rec("a", MutationOperator::Mirror, true),
                rec("c", MutationOperator::Crossover, true),
            ],
            &BTreeMap::new(),
        );
        assert_eq!(report.mutants[0].id, "a");
        assert_eq!((report.generated, report.killed), (3, 2));
        let killed: usize = report.per_operator.values().map(|c| c.killed).sum();
        assert_eq!(killed, report.killed);
        assert_eq!(report.score_display, "0.67");
    }

    proptest! {
        #[test]
        fn mirror_is_an_involution(values in prop::collection::vec(-1e6f64..1e6, 2..40)) {
            let t = trace("y", &values);
            prop_assert_eq!(mirror(&mirror(&t)), t);
        }

        #[test]
        fn crossover_is_an_involution(
            pair in (2usize..40).prop_flat_map(|n| (
                prop::collection::vec(-1e6f64..1e6, n),
                prop::collection::vec(-1e6f64..1e6, n),
                1..n,
            ))
        ) {
            let (a, b, site) = pair;
            let (a, b) = (trace("a", &a), trace("b", &b));
            let (x, y) = crossover(&a, &b, site).unwrap();
            let (x2, y2) = crossover(&x, &y, site).unwrap();
            prop_assert_eq!(x2, a);
            prop_assert_eq!(y2, b);
        }

        #[test]
        fn polynomial_stays_in_bounds(
            values in prop::collection::vec(-50.0f64..50.0, 2..40),
            lo in -100.0f64..0.0,
            width in 1e-3f64..200.0,
            eta in 0.5f64..100.0,
            p in 0.01f64..=1.0,
            seed in any::<u64>(),
        ) {
            let hi = lo + width;
            let clamped: Vec<f64> = values.iter().map(|v| v.clamp(lo, hi)).collect();
            let t = trace("y", &clamped);
            let m = polynomial_mutate(&t, (lo, hi), PolynomialConfig { eta, probability: p }, seed).unwrap();
            prop_assert!(m.values.iter().all(|v| (lo..=hi).contains(v)));
            prop_assert_eq!(m.len(), t.len());
        }
    }
}
