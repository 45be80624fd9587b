//! Keep / fix / drop validation of concrete tests.
//!
//! A test is kept when nothing is wrong, fixed when the smallest repair
//! (clamping a value, clipping a time into the onset window, filling a
//! missing tolerance) makes it valid, and dropped when it is broken beyond
//! that. A single reason to drop outweighs any number of fixes.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::extraction::{is_setpoint_name, InterfaceSpec, VariableSpec};
use crate::mr::{from_value_with_path, OutputRelation, RelationKind};
use crate::relations::ToleranceConfig;
use crate::signals::{SignalPattern, TimeGrid};

use super::sampler::{in_onset_window, onset_bounds};
use super::{TestCase, Validation};

#[derive(Default)]
struct Findings {
    fixes: Vec<String>,
    drops: Vec<String>,
}

impl Findings {
    fn fix(&mut self, msg: String) {
        self.fixes.push(msg);
    }
    fn drop(&mut self, msg: String) {
        self.drops.push(msg);
    }
}

/// Validates a typed test. Already dropped tests and tests with nothing left
/// to repair come back unchanged, so validation is idempotent.
pub fn validate_test(test: &TestCase, interface: &InterfaceSpec, grid: &TimeGrid, tol: &ToleranceConfig) -> TestCase {
    if test.validation.dropped {
        return test.clone();
    }
    let mut f = Findings::default();
    if let Err(e) = grid.validate() {
        f.drop(e.to_string());
    }

    let mut inputs = BTreeMap::new();
    for (var, pattern) in &test.inputs {
        let Some(spec) = interface.variable(var) else {
            f.drop(format!("unknown variable `{var}`"));
            continue;
        };
        if !spec.is_input() {
            f.drop(format!("`{var}` is not an input"));
            continue;
        }
        if let Some(p) = check_pattern(var, spec, pattern, grid, &mut f) {
            inputs.insert(var.clone(), p);
        }
    }
    for spec in interface.inputs() {
        if test.inputs.contains_key(&spec.name) {
            continue;
        }
        match spec.start {
            Some(value) => {
                f.fix(format!("added missing input `{}` as CONSTANT {value}", spec.name));
                inputs.insert(spec.name.clone(), SignalPattern::Constant { value });
            }
            None => f.drop(format!("input `{}` has no pattern and no start value", spec.name)),
        }
    }

    if test.relations.is_empty() {
        f.drop("test has no output relations".into());
    }
    let mut relations: Vec<OutputRelation> = Vec::new();
    for relation in &test.relations {
        let Some(r) = check_relation(relation, interface, grid, tol, &mut f) else {
            continue;
        };
        match relations.iter().find(|existing| existing.var == r.var) {
            Some(existing) if *existing == r => {
                f.fix(format!("removed duplicate relation on `{}`", r.var));
            }
            Some(_) => f.drop(format!("conflicting relations on `{}`", r.var)),
            None => relations.push(r),
        }
    }

    if !f.drops.is_empty() {
        let mut out = test.clone();
        out.validation = Validation {
            fixed: false,
            dropped: true,
            summary: f.drops.join("; "),
        };
        return out;
    }
    if f.fixes.is_empty() {
        let mut out = test.clone();
        if out.validation.summary.is_empty() {
            out.validation.summary = "valid".into();
        }
        return out;
    }
    let summary = match test.validation.summary.as_str() {
        "" | "valid" => f.fixes.join("; "),
        previous => format!("{previous}; {}", f.fixes.join("; ")),
    };
    TestCase {
        id: test.id.clone(),
        mr_id: test.mr_id.clone(),
        inputs,
        relations,
        validation: Validation {
            fixed: true,
            dropped: false,
            summary,
        },
    }
}

/// Validates a test that may not even parse, such as provider output with an
/// unknown pattern or relation kind. Unparseable tests come back dropped with
/// whatever parts could be recovered.
pub fn validate_raw_test(value: &Value, interface: &InterfaceSpec, grid: &TimeGrid, tol: &ToleranceConfig) -> TestCase {
    match from_value_with_path::<TestCase>(value) {
        Ok(test) => validate_test(&test, interface, grid, tol),
        Err(err) => {
            let text = |key: &str| value.get(key).and_then(Value::as_str).unwrap_or("").to_string();
            let inputs = value
                .get("inputs")
                .and_then(Value::as_object)
                .map(|m| {
                    m.iter()
                        .filter_map(|(k, v)| serde_json::from_value(v.clone()).ok().map(|p| (k.clone(), p)))
                        .collect()
                })
                .unwrap_or_default();
            let relations = value
                .get("relations")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(|v| serde_json::from_value(v.clone()).ok()).collect())
                .unwrap_or_default();
            TestCase {
                id: text("id"),
                mr_id: text("mr_id"),
                inputs,
                relations,
                validation: Validation {
                    fixed: false,
                    dropped: true,
                    summary: err.to_string(),
                },
            }
        }
    }
}

fn check_pattern(
    var: &str,
    spec: &VariableSpec,
    pattern: &SignalPattern,
    grid: &TimeGrid,
    f: &mut Findings,
) -> Option<SignalPattern> {
    if pattern.numbers().iter().any(|x| !x.is_finite()) {
        f.drop(format!("`{var}` pattern has a non-finite number"));
        return None;
    }
    if let SignalPattern::Ramp { duration, .. } = *pattern {
        if duration <= 0.0 {
            f.drop(format!("`{var}` ramp duration {duration} is not positive"));
            return None;
        }
    }

    let mut p = pattern.clone();
    if is_setpoint_name(var) && !p.is_constant() {
        let value = spec.clamp(p.seed_value());
        f.fix(format!("held set-point `{var}` constant at {value}"));
        p = SignalPattern::Constant { value };
    }

    let mut clamp = |name: &str, x: &mut f64| {
        let c = spec.clamp(*x);
        if c != *x {
            f.fix(format!("clamped `{var}` {name} from {x} to {c}"));
            *x = c;
        }
    };
    match &mut p {
        SignalPattern::Constant { value } => clamp("value", value),
        SignalPattern::Step { from, to, .. } | SignalPattern::Ramp { from, to, .. } => {
            clamp("from", from);
            clamp("to", to);
        }
    }

    let (lo, hi) = onset_bounds(grid);
    match &mut p {
        SignalPattern::Constant { .. } => {}
        SignalPattern::Step { at: onset, .. } | SignalPattern::Ramp { begin: onset, .. } => {
            if !in_onset_window(grid, *onset) {
                let clipped = onset.clamp(lo, hi);
                f.fix(format!("moved `{var}` onset from {onset} to {clipped}"));
                *onset = clipped;
            }
        }
    }
    if let SignalPattern::Ramp { begin, duration, .. } = &mut p {
        if *begin + *duration > grid.stop {
            let shortened = grid.stop - *begin;
            f.fix(format!("shortened `{var}` ramp from {duration} s to {shortened} s"));
            *duration = shortened;
        }
    }
    Some(p)
}

fn check_relation(
    relation: &OutputRelation,
    interface: &InterfaceSpec,
    grid: &TimeGrid,
    tol: &ToleranceConfig,
    f: &mut Findings,
) -> Option<OutputRelation> {
    let var = &relation.var;
    match interface.variable(var) {
        None => {
            f.drop(format!("relation on unknown variable `{var}`"));
            return None;
        }
        Some(spec) if !spec.is_output() => {
            f.drop(format!("relation on `{var}`, which is not an output"));
            return None;
        }
        Some(_) => {}
    }
    let numbers = [relation.tolerance, relation.rtol, relation.window, relation.set_point];
    if numbers.iter().flatten().any(|x| !x.is_finite()) {
        f.drop(format!("relation on `{var}` has a non-finite parameter"));
        return None;
    }
    let spec = interface.variable(var).expect("checked above");
    let mut r = relation.clone();
    let kind = r.kind;

    let default = match kind {
        RelationKind::EventuallyIncreases | RelationKind::EventuallyDecreases => tol.eventually_margin,
        RelationKind::ProportionalTo => tol.proportional_rho,
        RelationKind::EqualTo => tol.equal_atol,
        RelationKind::SettlesWithin => tol.settle_band,
    };
    match r.tolerance {
        None => {
            f.fix(format!("set `{var}` tolerance to the default {default}"));
            r.tolerance = Some(default);
        }
        Some(t) if t < 0.0 => {
            f.fix(format!("made `{var}` tolerance {t} positive"));
            r.tolerance = Some(-t);
        }
        Some(t) if t == 0.0 || (kind == RelationKind::ProportionalTo && t >= 1.0) => {
            f.fix(format!("replaced `{var}` tolerance {t} with the default {default}"));
            r.tolerance = Some(default);
        }
        Some(_) => {}
    }

    if kind == RelationKind::EqualTo {
        match r.rtol {
            None => {
                f.fix(format!("set `{var}` rtol to the default {}", tol.equal_rtol));
                r.rtol = Some(tol.equal_rtol);
            }
            Some(t) if t < 0.0 => {
                f.fix(format!("made `{var}` rtol {t} non-negative"));
                r.rtol = Some(-t);
            }
            Some(_) => {}
        }
    } else if r.rtol.take().is_some() {
        f.fix(format!("removed rtol from {kind} relation on `{var}`"));
    }

    if kind == RelationKind::SettlesWithin {
        let Some(sp) = r.set_point else {
            f.drop(format!("Settles_within on `{var}` has no set_point"));
            return None;
        };
        let clamped = spec.clamp(sp);
        if clamped != sp {
            f.fix(format!("clamped `{var}` set_point from {sp} to {clamped}"));
            r.set_point = Some(clamped);
        }
        let default_window = tol.settle_window_fraction * grid.span();
        match r.window {
            None => {
                f.fix(format!("set `{var}` window to the default {default_window} s"));
                r.window = Some(default_window);
            }
            Some(w) if w <= 0.0 => {
                f.fix(format!("replaced `{var}` window {w} s with the default {default_window} s"));
                r.window = Some(default_window);
            }
            Some(w) if w > grid.span() => {
                f.fix(format!("clipped `{var}` window from {w} s to {} s", grid.span()));
                r.window = Some(grid.span());
            }
            Some(_) => {}
        }
    } else {
        if r.set_point.take().is_some() {
            f.fix(format!("removed set_point from {kind} relation on `{var}`"));
        }
        if r.window.take().is_some() {
            f.fix(format!("removed window from {kind} relation on `{var}`"));
        }
    }
    Some(r)
}
