//! Seeded test sampler used by the rule-based provider.
//!
//! Onsets are drawn uniformly from the onset window and snapped to the grid
//! when a grid point falls inside it. Magnitudes walk a fixed ladder of
//! fractions of the available headroom, one rung per test index.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::extraction::{is_setpoint_name, DataType, ExtractionOutput, VariableSpec};
use crate::mr::{MetamorphicRelation, PatternKind, Transform, TransformOp};
use crate::signals::{SignalPattern, TimeGrid};

use super::{test_id, GenerationError, TestCase, Validation};

/// Onset window as fractions of the simulated span.
pub const ONSET_WINDOW: (f64, f64) = (0.10, 0.25);
/// Fractions of the headroom between seed value and bound, cycled per test.
pub const MAGNITUDE_LADDER: [f64; 5] = [0.5, 0.75, 0.9, 0.6, 0.8];
/// Ramp duration as a fraction of the simulated span.
pub const RAMP_FRACTION: f64 = 0.2;

pub fn onset_bounds(grid: &TimeGrid) -> (f64, f64) {
    (
        grid.start + ONSET_WINDOW.0 * grid.span(),
        grid.start + ONSET_WINDOW.1 * grid.span(),
    )
}

/// Onset check with a relative slack for float noise.
pub fn in_onset_window(grid: &TimeGrid, t: f64) -> bool {
    let (lo, hi) = onset_bounds(grid);
    let slack = 1e-9 * grid.span();
    t >= lo - slack && t <= hi + slack
}

pub fn rng_for(rng_seed: u64, mr_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(rng_seed.to_le_bytes());
    hasher.update(mr_id.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

pub fn draw_onset(rng: &mut impl Rng, grid: &TimeGrid) -> f64 {
    let fraction = rng.random_range(ONSET_WINDOW.0..=ONSET_WINDOW.1);
    let t = grid.start + fraction * grid.span();
    let index = ((t - grid.start) / grid.step).round() as usize;
    let snapped = grid.time(index.min(grid.intervals()));
    if in_onset_window(grid, snapped) {
        snapped
    } else {
        t
    }
}

/// Follow-up level for one transform, or the reason none exists.
pub fn transform_target(spec: &VariableSpec, seed: f64, transform: &Transform, fraction: f64) -> Result<f64, String> {
    let raw = match transform.op {
        TransformOp::Hold => return Ok(seed),
        TransformOp::Increase => {
            let headroom = spec.max.map_or(seed.abs().max(1.0), |hi| hi - seed);
            if headroom <= 0.0 {
                return Err("value is already at its upper bound".into());
            }
            seed + transform.magnitude_hint.map_or(fraction * headroom, f64::abs)
        }
        TransformOp::Decrease => {
            let headroom = spec.min.map_or(seed.abs().max(1.0), |lo| seed - lo);
            if headroom <= 0.0 {
                return Err("value is already at its lower bound".into());
            }
            seed - transform.magnitude_hint.map_or(fraction * headroom, f64::abs)
        }
        TransformOp::Scale => seed * transform.magnitude_hint.unwrap_or(1.0 + fraction),
    };
    let mut target = spec.clamp(raw);
    if spec.data_type != DataType::Real {
        target = spec.clamp(target.round());
    }
    if target == seed {
        return Err("bounds leave no room for a change".into());
    }
    Ok(target)
}

/// Draws `n` tests for `mr`. Deterministic in (`rng_seed`, `mr.id`).
pub fn sample_tests(
    mr: &MetamorphicRelation,
    extraction: &ExtractionOutput,
    grid: &TimeGrid,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<TestCase>, GenerationError> {
    grid.validate()
        .map_err(|e| GenerationError::InvalidRequest(e.to_string()))?;
    let iface = &extraction.variables;
    let infeasible = |t: &Transform, reason: String| GenerationError::InfeasibleTransform {
        mr_id: mr.id.clone(),
        var: t.var.clone(),
        op: format!("{:?}", t.op).to_lowercase(),
        reason,
    };

    let mut seeds = BTreeMap::new();
    for spec in iface.inputs() {
        let value = mr
            .given
            .initial
            .get(&spec.name)
            .copied()
            .or_else(|| extraction.initial_value(&spec.name))
            .ok_or_else(|| {
                GenerationError::InvalidRequest(format!("no initial value for input `{}`", spec.name))
            })?;
        seeds.insert(spec.name.clone(), spec.clamp(value));
    }

    for t in &mr.when.transforms {
        let spec = iface
            .variable(&t.var)
            .filter(|v| v.is_input())
            .ok_or_else(|| infeasible(t, "not an input of the system".into()))?;
        if t.op != TransformOp::Hold
            && (is_setpoint_name(&spec.name) || mr.given.held_constant.contains(&spec.name))
        {
            return Err(infeasible(t, "set-point and held inputs stay constant".into()));
        }
    }

    let mut rng = rng_for(rng_seed, &mr.id);
    let span = grid.span();
    let mut tests = Vec::with_capacity(n);
    for j in 0..n {
        let onset = draw_onset(&mut rng, grid);
        let fraction = MAGNITUDE_LADDER[j % MAGNITUDE_LADDER.len()];
        let mut inputs: BTreeMap<String, SignalPattern> = seeds
            .iter()
            .map(|(var, &value)| (var.clone(), SignalPattern::Constant { value }))
            .collect();

        for t in mr.when.transforms.iter().filter(|t| t.op != TransformOp::Hold) {
            let spec = iface.variable(&t.var).expect("checked above");
            let from = seeds[&t.var];
            let to = transform_target(spec, from, t, fraction).map_err(|r| infeasible(t, r))?;
            let kind = match t.pattern_hint {
                Some(PatternKind::Step) => PatternKind::Step,
                Some(PatternKind::Ramp) => PatternKind::Ramp,
                _ if j % 2 == 0 => PatternKind::Step,
                _ => PatternKind::Ramp,
            };
            let pattern = match kind {
                PatternKind::Ramp => SignalPattern::Ramp {
                    from,
                    to,
                    begin: onset,
                    duration: (RAMP_FRACTION * span).min(grid.stop - onset),
                },
                _ => SignalPattern::Step { from, to, at: onset },
            };
            inputs.insert(t.var.clone(), pattern);
        }

        tests.push(TestCase {
            id: test_id(&mr.id, j + 1),
            mr_id: mr.id.clone(),
            inputs,
            relations: mr.then.relations.clone(),
            validation: Validation::default(),
        });
    }
    Ok(tests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::generation::rule_based::mr_for_relationship;
    use proptest::prelude::*;

    fn loc_grid() -> TimeGrid {
        TimeGrid::new(0.0, 3000.0, 5.0).unwrap()
    }

    #[test]
    fn engine_load_tests_alternate_step_and_ramp() {
        let ex = fixtures::loc_extraction();
        let mut mr = mr_for_relationship(&ex, &ex.relationships[1]).unwrap();
        mr.id = "MR001".into();
        let tests = sample_tests(&mr, &ex, &loc_grid(), 2, 42).unwrap();
        assert_eq!(tests[0].id, "MR001_T001");
        match tests[0].inputs["engine_load"] {
            SignalPattern::Step { from, to, at } => {
                assert_eq!(from, 0.5);
                assert_eq!(to, 0.75);
                assert!((300.0..=750.0).contains(&at));
                assert_eq!(at % 5.0, 0.0);
            }
            ref other => panic!("{other:?}"),
        }
        match tests[1].inputs["engine_load"] {
            SignalPattern::Ramp { from, to, duration, .. } => {
                assert_eq!((from, to, duration), (0.5, 0.875, 600.0));
            }
            ref other => panic!("{other:?}"),
        }
        for test in &tests {
            assert_eq!(test.inputs.len(), 4);
            assert!(test.inputs["setpoint_temperature_oil"].is_constant());
            assert!(test.inputs["mass_flow_cooling_liquid_in"].is_constant());
        }
        assert_eq!(tests, sample_tests(&mr, &ex, &loc_grid(), 2, 42).unwrap());
    }

    #[test]
    fn increase_at_max_is_infeasible() {
        let ex = fixtures::loc_extraction();
        let mut mr = mr_for_relationship(&ex, &ex.relationships[1]).unwrap();
        mr.given.initial.insert("engine_load".into(), 1.0);
        assert!(matches!(
            sample_tests(&mr, &ex, &loc_grid(), 1, 1),
            Err(GenerationError::InfeasibleTransform { ref var, .. }) if var == "engine_load"
        ));
    }

    #[test]
    fn hold_only_mr_gives_all_constant_test() {
        let ex = fixtures::loc_extraction();
        let mut mr = mr_for_relationship(&ex, &ex.relationships[0]).unwrap();
        mr.when.transforms.retain(|t| t.op == TransformOp::Hold);
        let tests = sample_tests(&mr, &ex, &loc_grid(), 1, 42).unwrap();
        assert_eq!(tests.len(), 1);
        assert!(tests[0].inputs.values().all(SignalPattern::is_constant));
    }

    #[test]
    fn magnitude_hint_is_an_absolute_change() {
        let ex = fixtures::loc_extraction();
        let spec = ex.variables.variable("engine_load").unwrap();
        let mut t = Transform {
            var: "engine_load".into(),
            op: TransformOp::Decrease,
            pattern_hint: None,
            magnitude_hint: Some(0.2),
        };
        assert!((transform_target(spec, 0.5, &t, 0.9).unwrap() - 0.3).abs() < 1e-12);
        t.magnitude_hint = Some(2.0);
        assert_eq!(transform_target(spec, 0.5, &t, 0.9), Ok(0.0));
        t.op = TransformOp::Scale;
        t.magnitude_hint = Some(1.5);
        assert_eq!(transform_target(spec, 0.5, &t, 0.9), Ok(0.75));
        assert!(transform_target(spec, 0.0, &t, 0.9).is_err());
    }

    #[test]
    fn transforming_a_setpoint_is_rejected() {
        let ex = fixtures::loc_extraction();
        let mut mr = mr_for_relationship(&ex, &ex.relationships[0]).unwrap();
        for t in &mut mr.when.transforms {
            t.op = TransformOp::Increase;
        }
        assert!(matches!(
            sample_tests(&mr, &ex, &loc_grid(), 1, 1),
            Err(GenerationError::InfeasibleTransform { .. })
        ));
    }

    proptest! {
        #[test]
        fn onsets_stay_in_window(seed in any::<u64>(), step in prop::sample::select(vec![0.5, 1.0, 5.0, 7.5, 100.0, 600.0])) {
            let ex = fixtures::loc_extraction();
            let grid = TimeGrid::new(0.0, 3000.0, step).unwrap();
            for vr in &ex.relationships {
                let mr = mr_for_relationship(&ex, vr).unwrap();
                for test in sample_tests(&mr, &ex, &grid, 3, seed).unwrap() {
                    for (var, p) in &test.inputs {
                        if let Some(onset) = p.onset() {
                            prop_assert!(in_onset_window(&grid, onset), "{var} at {onset}");
                        }
                    }
                }
            }
        }
    }
}
