//! Output-relation evaluators comparing a seed trace with a follow-up trace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mr::{OutputRelation, RelationKind};
use crate::signals::{SignalBundle, Trace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelationError {
    #[error("seed and follow-up traces of `{0}` are on different grids")]
    GridMismatch(String),
    #[error("seed trace of `{0}` is identically zero")]
    DegenerateSeed(String),
    #[error("settling window {window} s lies outside the simulated span of {span} s")]
    WindowError { window: f64, span: f64 },
    #[error("relation on `{0}` has no set_point")]
    MissingSetPoint(String),
    #[error("output `{0}` is missing from the simulation results")]
    MissingOutput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub eventually_margin: f64,
    pub equal_atol: f64,
    pub equal_rtol: f64,
    pub proportional_rho: f64,
    pub settle_band: f64,
    /// Default settling window as a fraction of the simulated span.
    pub settle_window_fraction: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            eventually_margin: 1e-9,
            equal_atol: 1e-6,
            equal_rtol: 1e-3,
            proportional_rho: 0.02,
            settle_band: 1.0,
            settle_window_fraction: 0.8,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.eventually_margin >= 0.0
            && self.equal_atol >= 0.0
            && self.equal_rtol >= 0.0
            && self.proportional_rho > 0.0
            && self.proportional_rho < 1.0
            && self.settle_band > 0.0
            && self.settle_window_fraction > 0.0
            && self.settle_window_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(format!("tolerances out of range: {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Witness {
    /// Eventually*: the suffix from `index` on satisfies the relation.
    HoldsFrom { index: usize, time: f64 },
    /// Eventually*: last index where the relation does not hold.
    LastViolation { index: usize, time: f64, difference: f64 },
    Fit {
        constant: f64,
        max_relative_deviation: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        violation_time: Option<f64>,
    },
    /// Equal_to: largest deviation when passing, first violation when failing.
    Deviation { time: f64, deviation: f64, allowed: f64 },
    Settling {
        set_point: f64,
        deadline: f64,
        seed: SettleWitness,
        followup: SettleWitness,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SettleWitness {
    /// Last time the trace entered the band and stayed there.
    Settled { entry_time: f64 },
    Violation { time: f64, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationVerdict {
    pub var: String,
    pub kind: RelationKind,
    pub passed: bool,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub passed: bool,
    pub relations: Vec<RelationVerdict>,
}

fn same_grid(seed: &Trace, morph: &Trace) -> Result<(), RelationError> {
    if seed.grid != morph.grid || seed.values.len() != morph.values.len() {
        Err(RelationError::GridMismatch(seed.var.clone()))
    } else {
        Ok(())
    }
}

fn eventually(
    seed: &Trace,
    morph: &Trace,
    kind: RelationKind,
    holds: impl Fn(f64) -> bool,
) -> Result<RelationVerdict, RelationError> {
    same_grid(seed, morph)?;
    let diffs: Vec<f64> = morph.values.iter().zip(&seed.values).map(|(m, s)| m - s).collect();
    let last_bad = diffs.iter().rposition(|&d| !holds(d));
    let (passed, witness) = match last_bad {
        None => (
            !diffs.is_empty(),
            Witness::HoldsFrom {
                index: 0,
                time: seed.grid.time(0),
            },
        ),
        Some(i) if i + 1 < diffs.len() => (
            true,
            Witness::HoldsFrom {
                index: i + 1,
                time: seed.grid.time(i + 1),
            },
        ),
        Some(i) => (
            false,
            Witness::LastViolation {
                index: i,
                time: seed.grid.time(i),
                difference: diffs[i],
            },
        ),
    };
    Ok(RelationVerdict {
        var: seed.var.clone(),
        kind,
        passed,
        witness,
    })
}

/// Passes when, from some index on, every follow-up sample exceeds the seed by
/// more than `margin`.
pub fn eventually_increases(seed: &Trace, morph: &Trace, margin: f64) -> Result<RelationVerdict, RelationError> {
    eventually(seed, morph, RelationKind::EventuallyIncreases, |d| d > margin)
}

pub fn eventually_decreases(seed: &Trace, morph: &Trace, margin: f64) -> Result<RelationVerdict, RelationError> {
    eventually(seed, morph, RelationKind::EventuallyDecreases, |d| d < -margin)
}

/// Origin-constrained least-squares fit `morph ≈ c·seed` with a relative
/// residual bound `rho` on every non-negligible seed sample.
pub fn proportional_to(seed: &Trace, morph: &Trace, rho: f64) -> Result<RelationVerdict, RelationError> {
    same_grid(seed, morph)?;
    let max_abs = seed.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let eps0 = 1e-9 * max_abs;
    if max_abs == 0.0 || !seed.values.iter().any(|v| v.abs() > eps0) {
        return Err(RelationError::DegenerateSeed(seed.var.clone()));
    }
    let sm: f64 = seed.values.iter().zip(&morph.values).map(|(s, m)| s * m).sum();
    let ss: f64 = seed.values.iter().map(|s| s * s).sum();
    let c = sm / ss;
    let mut worst = 0.0_f64;
    let mut violation_time = None;
    for (i, (s, m)) in seed.values.iter().zip(&morph.values).enumerate() {
        if s.abs() <= eps0 {
            continue;
        }
        let fitted = c * s;
        let residual = (m - fitted).abs();
        if fitted != 0.0 {
            worst = worst.max(residual / fitted.abs());
        }
        if violation_time.is_none() && residual > rho * fitted.abs() {
            violation_time = Some(seed.grid.time(i));
        }
    }
    Ok(RelationVerdict {
        var: seed.var.clone(),
        kind: RelationKind::ProportionalTo,
        passed: violation_time.is_none(),
        witness: Witness::Fit {
            constant: c,
            max_relative_deviation: worst,
            violation_time,
        },
    })
}

pub fn equal_to(seed: &Trace, morph: &Trace, atol: f64, rtol: f64) -> Result<RelationVerdict, RelationError> {
    same_grid(seed, morph)?;
    let mut worst: Option<(f64, f64, f64)> = None;
    for (i, (s, m)) in seed.values.iter().zip(&morph.values).enumerate() {
        let deviation = (m - s).abs();
        let allowed = atol + rtol * s.abs();
        let entry = (seed.grid.time(i), deviation, allowed);
        if deviation > allowed {
            return Ok(RelationVerdict {
                var: seed.var.clone(),
                kind: RelationKind::EqualTo,
                passed: false,
                witness: Witness::Deviation {
                    time: entry.0,
                    deviation,
                    allowed,
                },
            });
        }
        if worst.is_none_or(|w| deviation > w.1) {
            worst = Some(entry);
        }
    }
    let (time, deviation, allowed) = worst.unwrap_or((seed.grid.start, 0.0, atol));
    Ok(RelationVerdict {
        var: seed.var.clone(),
        kind: RelationKind::EqualTo,
        passed: true,
        witness: Witness::Deviation {
            time,
            deviation,
            allowed,
        },
    })
}

fn settle_trace(trace: &Trace, set_point: f64, deadline: f64, band: f64) -> SettleWitness {
    let inside = |v: f64| (v - set_point).abs() <= band;
    for (i, &v) in trace.values.iter().enumerate() {
        let t = trace.grid.time(i);
        if t >= deadline && !inside(v) {
            return SettleWitness::Violation { time: t, value: v };
        }
    }
    let entry = trace
        .values
        .iter()
        .rposition(|&v| !inside(v))
        .map_or(trace.grid.start, |i| trace.grid.time(i + 1));
    SettleWitness::Settled { entry_time: entry }
}

/// Both traces must stay within `band` of `set_point` from `start + window` on.
pub fn settles_within(
    seed: &Trace,
    morph: &Trace,
    set_point: f64,
    window: f64,
    band: f64,
) -> Result<RelationVerdict, RelationError> {
    same_grid(seed, morph)?;
    let span = seed.grid.span();
    if !(0.0..=span).contains(&window) {
        return Err(RelationError::WindowError { window, span });
    }
    let deadline = seed.grid.start + window;
    let s = settle_trace(seed, set_point, deadline, band);
    let m = settle_trace(morph, set_point, deadline, band);
    let passed = matches!(
        (s, m),
        (SettleWitness::Settled { .. }, SettleWitness::Settled { .. })
    );
    Ok(RelationVerdict {
        var: seed.var.clone(),
        kind: RelationKind::SettlesWithin,
        passed,
        witness: Witness::Settling {
            set_point,
            deadline,
            seed: s,
            followup: m,
        },
    })
}

/// Evaluates one relation, filling unspecified tolerances from `tol`.
pub fn check_relation(
    relation: &OutputRelation,
    seed: &Trace,
    morph: &Trace,
    tol: &ToleranceConfig,
) -> Result<RelationVerdict, RelationError> {
    match relation.kind {
        RelationKind::EventuallyIncreases => {
            eventually_increases(seed, morph, relation.tolerance.unwrap_or(tol.eventually_margin))
        }
        RelationKind::EventuallyDecreases => {
            eventually_decreases(seed, morph, relation.tolerance.unwrap_or(tol.eventually_margin))
        }
        RelationKind::ProportionalTo => {
            proportional_to(seed, morph, relation.tolerance.unwrap_or(tol.proportional_rho))
        }
        RelationKind::EqualTo => equal_to(
            seed,
            morph,
            relation.tolerance.unwrap_or(tol.equal_atol),
            relation.rtol.unwrap_or(tol.equal_rtol),
        ),
        RelationKind::SettlesWithin => {
            let set_point = relation
                .set_point
                .ok_or_else(|| RelationError::MissingSetPoint(relation.var.clone()))?;
            let window = relation
                .window
                .unwrap_or(tol.settle_window_fraction * seed.grid.span());
            settles_within(
                seed,
                morph,
                set_point,
                window,
                relation.tolerance.unwrap_or(tol.settle_band),
            )
        }
    }
}

/// A test passes when every one of its relations holds.
pub fn evaluate_test(
    relations: &[OutputRelation],
    seed: &SignalBundle,
    morph: &SignalBundle,
    tol: &ToleranceConfig,
) -> Result<TestVerdict, RelationError> {
    let mut verdicts = Vec::with_capacity(relations.len());
    for relation in relations {
        let s = seed
            .get(&relation.var)
            .ok_or_else(|| RelationError::MissingOutput(relation.var.clone()))?;
        let m = morph
            .get(&relation.var)
            .ok_or_else(|| RelationError::MissingOutput(relation.var.clone()))?;
        verdicts.push(check_relation(relation, &s, &m, tol)?);
    }
    Ok(TestVerdict {
        passed: verdicts.iter().all(|v| v.passed),
        relations: verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::TimeGrid;
    use proptest::prelude::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, n as f64, 1.0).unwrap()
    }

    fn trace(values: &[f64]) -> Trace {
        Trace::new("y", grid(values.len() - 1), values.to_vec()).unwrap()
    }

    fn loc_grid() -> TimeGrid {
        TimeGrid::new(0.0, 3000.0, 5.0).unwrap()
    }

    #[test]
    fn rising_followup_passes_from_first_persistent_time() {
        let g = loc_grid();
        let seed = Trace::constant("temperature_oil", g, 75.0);
        let morph = Trace::new(
            "temperature_oil",
            g,
            g.times().map(|t| if t >= 900.0 { 78.0 } else { 75.0 }).collect(),
        )
        .unwrap();
        let v = eventually_increases(&seed, &morph, 1e-9).unwrap();
        assert!(v.passed);
        assert_eq!(v.witness, Witness::HoldsFrom { index: 180, time: 900.0 });
    }

    #[test]
    fn eventually_edge_cases() {
        let s = trace(&[1.0, 2.0, 3.0]);
        assert!(!eventually_increases(&s, &s, 1e-9).unwrap().passed);
        let m = trace(&[2.0, 3.0, 3.0]);
        let v = eventually_increases(&s, &m, 1e-9).unwrap();
        assert!(!v.passed);
        assert!(matches!(v.witness, Witness::LastViolation { index: 2, .. }));

        let m = trace(&[0.0, 1.0, 2.0]);
        let v = eventually_decreases(&s, &m, 0.5).unwrap();
        assert!(v.passed);
        assert_eq!(v.witness, Witness::HoldsFrom { index: 0, time: 0.0 });

        let m = trace(&[0.0, 3.0, 2.0, 5.0]);
        let s = trace(&[1.0, 2.0, 3.0, 4.0]);
        assert!(!eventually_decreases(&s, &m, 1e-9).unwrap().passed);
    }

    #[test]
    fn proportional_cases() {
        let s = trace(&[1.0, 2.0, 3.0]);
        let v = proportional_to(&s, &trace(&[2.0, 4.0, 6.0]), 0.02).unwrap();
        assert!(v.passed);
        assert!(matches!(v.witness, Witness::Fit { constant, .. } if (constant - 2.0).abs() < 1e-12));
        assert!(!proportional_to(&s, &trace(&[7.0, 9.0, 11.0]), 0.02).unwrap().passed);
        let zero = trace(&[0.0, 0.0, 0.0]);
        assert_eq!(
            proportional_to(&zero, &s, 0.02),
            Err(RelationError::DegenerateSeed("y".into()))
        );
    }

    #[test]
    fn equal_cases() {
        let s = trace(&[10.0, 20.0, 30.0, 40.0]);
        assert!(equal_to(&s, &s, 1e-6, 1e-3).unwrap().passed);
        let allowed = 1e-6 + 1e-3 * 30.0;
        let m = trace(&[10.0, 20.0, 30.0 + 10.0 * allowed, 40.0]);
        let v = equal_to(&s, &m, 1e-6, 1e-3).unwrap();
        assert!(!v.passed);
        assert!(matches!(v.witness, Witness::Deviation { time, .. } if time == 2.0));
        let half = trace(&[10.0 + 5e-7, 20.0 + 5e-7, 30.0 + 5e-7, 40.0 + 5e-7]);
        assert!(equal_to(&s, &half, 1e-6, 0.0).unwrap().passed);
    }

    #[test]
    fn settling_cases() {
        let s = trace(&[5.0; 11]);
        assert!(settles_within(&s, &s, 5.0, 8.0, 1.0).unwrap().passed);

        let exits = trace(&[9.0, 7.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 7.5, 5.0]);
        let v = settles_within(&s, &exits, 5.0, 5.0, 1.0).unwrap();
        assert!(!v.passed);
        match v.witness {
            Witness::Settling { followup, seed, .. } => {
                assert_eq!(followup, SettleWitness::Violation { time: 9.0, value: 7.5 });
                assert_eq!(seed, SettleWitness::Settled { entry_time: 0.0 });
            }
            other => panic!("unexpected witness {other:?}"),
        }

        let offset = trace(&[9.0, 8.0, 7.0, 7.0, 7.0, 7.0, 7.0, 7.0, 7.0, 7.0, 7.0]);
        let v = settles_within(&s, &offset, 5.0, 8.0, 1.0).unwrap();
        assert!(!v.passed);
        assert!(matches!(
            v.witness,
            Witness::Settling { followup: SettleWitness::Violation { time, .. }, .. } if time == 8.0
        ));
        assert_eq!(
            settles_within(&s, &s, 5.0, 11.0, 1.0),
            Err(RelationError::WindowError { window: 11.0, span: 10.0 })
        );
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = trace(&[1.0, 2.0]);
        let b = trace(&[1.0, 2.0, 3.0]);
        assert!(matches!(equal_to(&a, &b, 0.0, 0.0), Err(RelationError::GridMismatch(_))));
    }

    #[test]
    fn evaluate_test_is_a_conjunction() {
        let g = grid(3);
        let mut seed = SignalBundle::new(g);
        let mut morph = SignalBundle::new(g);
        seed.insert(Trace::new("a", g, vec![1.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        seed.insert(Trace::new("b", g, vec![1.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        morph.insert(Trace::new("a", g, vec![1.0, 2.0, 2.0, 2.0]).unwrap()).unwrap();
        morph.insert(Trace::new("b", g, vec![1.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        let tol = ToleranceConfig::default();
        let inc = OutputRelation::new("a", RelationKind::EventuallyIncreases);
        let eq = OutputRelation::new("b", RelationKind::EqualTo);
        assert!(evaluate_test(&[inc.clone(), eq.clone()], &seed, &morph, &tol).unwrap().passed);
        let dec = OutputRelation::new("b", RelationKind::EventuallyDecreases);
        let v = evaluate_test(&[inc, dec], &seed, &morph, &tol).unwrap();
        assert!(!v.passed);
        assert!(v.relations[0].passed && !v.relations[1].passed);
        let missing = OutputRelation::new("c", RelationKind::EqualTo);
        assert_eq!(
            evaluate_test(&[missing], &seed, &morph, &tol),
            Err(RelationError::MissingOutput("c".into()))
        );
    }

    fn brute_eventually(s: &[f64], m: &[f64], holds: impl Fn(f64) -> bool) -> bool {
        (0..s.len()).any(|k| (k..s.len()).all(|i| holds(m[i] - s[i])))
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=12).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn eventually_matches_brute_force((s, m) in pair(), eps in 0.0f64..1.0) {
            let (ts, tm) = (trace_n(&s), trace_n(&m));
            let inc = eventually_increases(&ts, &tm, eps).unwrap();
            let dec = eventually_decreases(&ts, &tm, eps).unwrap();
            prop_assert_eq!(inc.passed, brute_eventually(&s, &m, |d| d > eps));
            prop_assert_eq!(dec.passed, brute_eventually(&s, &m, |d| d < -eps));
            prop_assert!(!(inc.passed && dec.passed));
            prop_assert_eq!(dec.passed, eventually_increases(&tm, &ts, eps).unwrap().passed);
        }

        #[test]
        fn equal_matches_brute_force((s, m) in pair(), atol in 0.0f64..2.0, rtol in 0.0f64..0.5) {
            let v = equal_to(&trace_n(&s), &trace_n(&m), atol, rtol).unwrap();
            let brute = s.iter().zip(&m).all(|(s, m)| (m - s).abs() <= atol + rtol * s.abs());
            prop_assert_eq!(v.passed, brute);
            prop_assert!(equal_to(&trace_n(&s), &trace_n(&s), atol, 0.0).unwrap().passed);
        }

        #[test]
        fn proportional_matches_brute_force((s, m) in pair(), rho in 0.01f64..0.5) {
            let ts = trace_n(&s);
            match proportional_to(&ts, &trace_n(&m), rho) {
                Ok(v) => {
                    let c = s.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>()
                        / s.iter().map(|a| a * a).sum::<f64>();
                    let eps0 = 1e-9 * s.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                    let brute = s.iter().zip(&m).filter(|(a, _)| a.abs() > eps0)
                        .all(|(a, b)| (b - c * a).abs() <= rho * (c * a).abs());
                    prop_assert_eq!(v.passed, brute);
                }
                Err(e) => prop_assert_eq!(e, RelationError::DegenerateSeed("y".into())),
            }
        }

        #[test]
        fn proportional_is_scale_consistent(s in prop::collection::vec(0.5f64..5.0, 2..12), c in 0.5f64..3.0, k in 0.1f64..10.0) {
            let ts = trace_n(&s);
            let m: Vec<f64> = s.iter().map(|v| v * c).collect();
            let v = proportional_to(&ts, &trace_n(&m), 0.02).unwrap();
            prop_assert!(v.passed);
            let km: Vec<f64> = m.iter().map(|v| v * k).collect();
            let kv = proportional_to(&ts, &trace_n(&km), 0.02).unwrap();
            prop_assert!(kv.passed);
            if let Witness::Fit { constant, .. } = kv.witness {
                prop_assert!((constant - k * c).abs() <= 1e-9 * k * c);
            }
        }

        #[test]
        fn settles_matches_brute_force((s, m) in pair(), sp in -2.0f64..2.0, band in 0.1f64..3.0, frac in 0.0f64..=1.0) {
            let (ts, tm) = (trace_n(&s), trace_n(&m));
            let window = (frac * ts.grid.span()).floor();
            let v = settles_within(&ts, &tm, sp, window, band).unwrap();
            let ok = |x: &[f64]| x.iter().enumerate().filter(|(i, _)| *i as f64 >= window).all(|(_, v)| (v - sp).abs() <= band);
            prop_assert_eq!(v.passed, ok(&s) && ok(&m));
        }

        #[test]
        fn verdicts_ignore_common_time_shift((s, m) in pair(), shift in -100.0f64..100.0) {
            let n = s.len() - 1;
            let shifted = TimeGrid::new(shift, shift + n as f64, 1.0).unwrap();
            let a = Trace::new("y", shifted, s.clone()).unwrap();
            let b = Trace::new("y", shifted, m.clone()).unwrap();
            let (ts, tm) = (trace_n(&s), trace_n(&m));
            prop_assert_eq!(
                eventually_increases(&a, &b, 0.1).unwrap().passed,
                eventually_increases(&ts, &tm, 0.1).unwrap().passed
            );
            prop_assert_eq!(equal_to(&a, &b, 0.5, 0.1).unwrap().passed, equal_to(&ts, &tm, 0.5, 0.1).unwrap().passed);
            prop_assert_eq!(
                settles_within(&a, &b, 0.0, n as f64 / 2.0, 2.0).unwrap().passed,
                settles_within(&ts, &tm, 0.0, n as f64 / 2.0, 2.0).unwrap().passed
            );
        }
    }

    fn trace_n(values: &[f64]) -> Trace {
        trace(values)
    }
}
