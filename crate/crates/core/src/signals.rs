//! Uniform time grids, sampled traces and input-pattern instantiation.
//!
//! Every seed/follow-up pair shares one [`TimeGrid`], so relations can compare
//! traces sample by sample.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack allowed between `N * step` and the grid span.
const GRID_FIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid time grid: {0}")]
    Invalid(String),
    #[error("trace `{var}` has {actual} samples, grid expects {expected}")]
    LengthMismatch {
        var: String,
        expected: usize,
        actual: usize,
    },
    #[error("trace `{var}` contains a non-finite value at index {index}")]
    NonFinite { var: String, index: usize },
    #[error("traces are sampled on different grids")]
    Mismatch,
    #[error("pattern for `{var}` places time {time} outside the grid [{start}, {stop}]")]
    OutOfGrid {
        var: String,
        time: f64,
        start: f64,
        stop: f64,
    },
    #[error("test `{0}` was dropped by validation and cannot be instantiated")]
    DroppedTest(String),
}

/// A uniformly sampled time window `[start, stop]` with spacing `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl TimeGrid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self, GridError> {
        let grid = Self { start, stop, step };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.step.is_finite()) {
            return Err(GridError::Invalid("non-finite bound".into()));
        }
        if self.stop <= self.start {
            return Err(GridError::Invalid(format!(
                "stop {} must exceed start {}",
                self.stop, self.start
            )));
        }
        if self.step <= 0.0 {
            return Err(GridError::Invalid(format!("step {} must be positive", self.step)));
        }
        let span = self.span();
        let intervals = (span / self.step).round();
        if (intervals * self.step - span).abs() >= self.step * GRID_FIT_TOLERANCE {
            return Err(GridError::Invalid(format!(
                "span {span} is not a whole multiple of step {}",
                self.step
            )));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.stop - self.start
    }

    /// Number of intervals `N`; the grid holds `N + 1` samples.
    pub fn intervals(&self) -> usize {
        (self.span() / self.step).round() as usize
    }

    pub fn len(&self) -> usize {
        self.intervals() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, index: usize) -> f64 {
        if index == self.intervals() {
            self.stop
        } else {
            self.start + index as f64 * self.step
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.time(i))
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.stop
    }

    /// Time at `fraction` of the span, measured from `start`.
    pub fn at_fraction(&self, fraction: f64) -> f64 {
        self.start + fraction * self.span()
    }
}

/// Piecewise input stimulus applied to one SUT input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "UPPERCASE", deny_unknown_fields)]
pub enum SignalPattern {
    Constant { value: f64 },
    Step { from: f64, to: f64, at: f64 },
    Ramp { from: f64, to: f64, begin: f64, duration: f64 },
}

impl SignalPattern {
    pub fn name(&self) -> &'static str {
        match self {
            SignalPattern::Constant { .. } => "CONSTANT",
            SignalPattern::Step { .. } => "STEP",
            SignalPattern::Ramp { .. } => "RAMP",
        }
    }

    /// Level the signal holds before any transformation.
    pub fn seed_value(&self) -> f64 {
        match *self {
            SignalPattern::Constant { value } => value,
            SignalPattern::Step { from, .. } | SignalPattern::Ramp { from, .. } => from,
        }
    }

    pub fn final_value(&self) -> f64 {
        match *self {
            SignalPattern::Constant { value } => value,
            SignalPattern::Step { to, .. } | SignalPattern::Ramp { to, .. } => to,
        }
    }

    /// Time at which the signal first departs from its seed value.
    pub fn onset(&self) -> Option<f64> {
        match *self {
            SignalPattern::Constant { .. } => None,
            SignalPattern::Step { at, .. } => Some(at),
            SignalPattern::Ramp { begin, .. } => Some(begin),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SignalPattern::Constant { .. })
    }

    /// All numeric fields, for finiteness checks.
    pub fn numbers(&self) -> Vec<f64> {
        match *self {
            SignalPattern::Constant { value } => vec![value],
            SignalPattern::Step { from, to, at } => vec![from, to, at],
            SignalPattern::Ramp {
                from,
                to,
                begin,
                duration,
            } => vec![from, to, begin, duration],
        }
    }
}

/// Value of `pattern` at time `t`. Steps are right-continuous.
pub fn eval_pattern(pattern: &SignalPattern, t: f64) -> f64 {
    match *pattern {
        SignalPattern::Constant { value } => value,
        SignalPattern::Step { from, to, at } => {
            if t < at {
                from
            } else {
                to
            }
        }
        SignalPattern::Ramp {
            from,
            to,
            begin,
            duration,
        } => {
            if t < begin {
                from
            } else if t >= begin + duration {
                to
            } else {
                from + (to - from) * (t - begin) / duration
            }
        }
    }
}

/// Samples of one variable on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trace {
    pub var: String,
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl Trace {
    pub fn new(var: impl Into<String>, grid: TimeGrid, values: Vec<f64>) -> Result<Self, GridError> {
        let trace = Self {
            var: var.into(),
            grid,
            values,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn constant(var: impl Into<String>, grid: TimeGrid, value: f64) -> Self {
        Self {
            var: var.into(),
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn sample(var: impl Into<String>, grid: TimeGrid, pattern: &SignalPattern) -> Self {
        Self {
            var: var.into(),
            grid,
            values: grid.times().map(|t| eval_pattern(pattern, t)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        self.grid.validate()?;
        if self.values.len() != self.grid.len() {
            return Err(GridError::LengthMismatch {
                var: self.var.clone(),
                expected: self.grid.len(),
                actual: self.values.len(),
            });
        }
        if let Some(index) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite {
                var: self.var.clone(),
                index,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            var: self.var.clone(),
            grid: self.grid,
            values,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// A named set of traces sharing one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalBundle {
    pub grid: TimeGrid,
    pub traces: BTreeMap<String, Vec<f64>>,
}

impl SignalBundle {
    pub fn new(grid: TimeGrid) -> Self {
        Self {
            grid,
            traces: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, trace: Trace) -> Result<(), GridError> {
        if trace.grid != self.grid {
            return Err(GridError::Mismatch);
        }
        trace.validate()?;
        self.traces.insert(trace.var, trace.values);
        Ok(())
    }

    pub fn get(&self, var: &str) -> Option<Trace> {
        self.traces.get(var).map(|values| Trace {
            var: var.to_string(),
            grid: self.grid,
            values: values.clone(),
        })
    }

    pub fn values(&self, var: &str) -> Option<&[f64]> {
        self.traces.get(var).map(Vec::as_slice)
    }

    pub fn contains(&self, var: &str) -> bool {
        self.traces.contains_key(var)
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.traces.keys().map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        self.grid.validate()?;
        for (var, values) in &self.traces {
            if values.len() != self.grid.len() {
                return Err(GridError::LengthMismatch {
                    var: var.clone(),
                    expected: self.grid.len(),
                    actual: values.len(),
                });
            }
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(GridError::NonFinite {
                    var: var.clone(),
                    index,
                });
            }
        }
        Ok(())
    }

    /// CSV with a `time` column followed by one column per variable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for var in self.traces.keys() {
            out.push(',');
            out.push_str(var);
        }
        out.push('\n');
        for (i, t) in self.grid.times().enumerate() {
            let _ = write!(out, "{t:?}");
            for values in self.traces.values() {
                let _ = write!(out, ",{:?}", values[i]);
            }
            out.push('\n');
        }
        out
    }
}

/// Seed and follow-up input bundles for one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstantiatedInputs {
    pub test_id: String,
    pub seed: SignalBundle,
    pub followup: SignalBundle,
}

/// Turns a test's input patterns into seed and follow-up time series.
///
/// The seed bundle holds every input at its pre-transformation level; the
/// follow-up bundle samples each pattern on the grid.
pub fn instantiate(
    test: &crate::generation::TestCase,
    grid: &TimeGrid,
) -> Result<InstantiatedInputs, GridError> {
    grid.validate()?;
    if test.validation.dropped {
        return Err(GridError::DroppedTest(test.id.clone()));
    }
    let mut seed = SignalBundle::new(*grid);
    let mut followup = SignalBundle::new(*grid);
    for (var, pattern) in &test.inputs {
        check_pattern_times(var, pattern, grid)?;
        seed.insert(Trace::constant(var.clone(), *grid, pattern.seed_value()))?;
        followup.insert(Trace::sample(var.clone(), *grid, pattern))?;
    }
    Ok(InstantiatedInputs {
        test_id: test.id.clone(),
        seed,
        followup,
    })
}

fn check_pattern_times(var: &str, pattern: &SignalPattern, grid: &TimeGrid) -> Result<(), GridError> {
    let out_of_grid = |time: f64| GridError::OutOfGrid {
        var: var.to_string(),
        time,
        start: grid.start,
        stop: grid.stop,
    };
    match *pattern {
        SignalPattern::Constant { .. } => Ok(()),
        SignalPattern::Step { at, .. } => {
            if grid.contains(at) {
                Ok(())
            } else {
                Err(out_of_grid(at))
            }
        }
        SignalPattern::Ramp { begin, duration, .. } => {
            if !grid.contains(begin) {
                Err(out_of_grid(begin))
            } else if !(duration > 0.0) || !grid.contains(begin + duration) {
                Err(out_of_grid(begin + duration))
            } else {
                Ok(())
            }
        }
    }
}
