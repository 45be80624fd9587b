//! Given–When–Then metamorphic relations.
//!
//! MRs are stored as structured JSON; [`render_gherkin`] gives a read-only
//! prose rendering for reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::extraction::{ConditionCategory, ExtractionOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationKind {
    #[serde(rename = "Eventually_Increases")]
    EventuallyIncreases,
    #[serde(rename = "Eventually_Decreases")]
    EventuallyDecreases,
    #[serde(rename = "Proportional_to")]
    ProportionalTo,
    #[serde(rename = "Equal_to")]
    EqualTo,
    #[serde(rename = "Settles_within")]
    SettlesWithin,
}

impl RelationKind {
    pub const ALL: [RelationKind; 5] = [
        RelationKind::EventuallyIncreases,
        RelationKind::EventuallyDecreases,
        RelationKind::ProportionalTo,
        RelationKind::EqualTo,
        RelationKind::SettlesWithin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::EventuallyIncreases => "Eventually_Increases",
            RelationKind::EventuallyDecreases => "Eventually_Decreases",
            RelationKind::ProportionalTo => "Proportional_to",
            RelationKind::EqualTo => "Equal_to",
            RelationKind::SettlesWithin => "Settles_within",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Output relation between a seed and a follow-up trace of one variable.
///
/// `tolerance` is the kind's primary tolerance: the margin for the
/// `Eventually_*` kinds, the absolute tolerance for `Equal_to`, the maximum
/// relative deviation for `Proportional_to` and the band half-width for
/// `Settles_within`. Missing values fall back to the session defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRelation {
    pub var: String,
    pub kind: RelationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_point: Option<f64>,
    /// Settling deadline in seconds after the start of the window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Relative tolerance, `Equal_to` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
}

impl OutputRelation {
    pub fn new(var: impl Into<String>, kind: RelationKind) -> Self {
        Self {
            var: var.into(),
            kind,
            set_point: None,
            window: None,
            tolerance: None,
            rtol: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformOp {
    Increase,
    Decrease,
    Scale,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PatternKind {
    Step,
    Ramp,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transform {
    pub var: String,
    pub op: TransformOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_hint: Option<PatternKind>,
    /// Absolute change for increase/decrease, factor for scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude_hint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GivenClause {
    pub initial: BTreeMap<String, f64>,
    #[serde(default)]
    pub held_constant: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhenClause {
    pub transforms: Vec<Transform>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThenClause {
    pub relations: Vec<OutputRelation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MrCategory {
    Behavioral,
    Performance,
}

impl MrCategory {
    pub fn priority(self) -> u8 {
        match self {
            MrCategory::Behavioral => 1,
            MrCategory::Performance => 2,
        }
    }

    pub fn from_condition(category: ConditionCategory) -> Option<Self> {
        match category {
            ConditionCategory::Behavioral => Some(MrCategory::Behavioral),
            ConditionCategory::Performance => Some(MrCategory::Performance),
            ConditionCategory::Other => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Refinement {
    pub feedback: String,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetamorphicRelation {
    pub id: String,
    pub req_ids: Vec<String>,
    pub scenario: String,
    pub category: MrCategory,
    pub priority: u8,
    pub given: GivenClause,
    pub when: WhenClause,
    pub then: ThenClause,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement: Option<Refinement>,
}

/// Identity of an MR for duplicate detection: what is transformed and how,
/// and which outputs are related by which kind.
pub type MrSignature = (
    BTreeSet<(String, TransformOp)>,
    BTreeSet<(String, RelationKind)>,
);

impl MetamorphicRelation {
    pub fn is_dropped(&self) -> bool {
        self.refinement.as_ref().is_some_and(|r| r.dropped)
    }

    pub fn signature(&self) -> MrSignature {
        (
            self.when
                .transforms
                .iter()
                .map(|t| (t.var.clone(), t.op))
                .collect(),
            self.then
                .relations
                .iter()
                .map(|r| (r.var.clone(), r.kind))
                .collect(),
        )
    }

    pub fn transform(&self, var: &str) -> Option<&Transform> {
        self.when.transforms.iter().find(|t| t.var == var)
    }
}

pub fn mr_id(n: usize) -> String {
    format!("MR{n:03}")
}

/// Numeric suffix of an `MR###` identifier.
pub fn mr_number(id: &str) -> Option<usize> {
    id.strip_prefix("MR")
        .filter(|digits| digits.len() >= 3 && digits.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|digits| digits.parse().ok())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum SchemaCause {
    Missing,
    UnknownField(String),
    Invalid(String),
    Empty,
    BadIdentifier(String),
    DuplicateRelationVar(String),
    DuplicateTransformVar(String),
    HoldWithPattern,
}

impl fmt::Display for SchemaCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaCause::Missing => f.write_str("missing"),
            SchemaCause::UnknownField(name) => write!(f, "unknown field `{name}`"),
            SchemaCause::Invalid(msg) => write!(f, "invalid: {msg}"),
            SchemaCause::Empty => f.write_str("must not be empty"),
            SchemaCause::BadIdentifier(id) => write!(f, "bad identifier `{id}`"),
            SchemaCause::DuplicateRelationVar(v) => {
                write!(f, "only one relation per output, `{v}` repeated")
            }
            SchemaCause::DuplicateTransformVar(v) => {
                write!(f, "only one transform per input, `{v}` repeated")
            }
            SchemaCause::HoldWithPattern => f.write_str("hold transforms only admit CONSTANT"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{path}: {cause}")]
pub struct SchemaError {
    pub path: String,
    pub cause: SchemaCause,
}

impl SchemaError {
    fn at(path: impl Into<String>, cause: SchemaCause) -> Self {
        Self {
            path: path.into(),
            cause,
        }
    }

    fn prefixed(mut self, prefix: &str) -> Self {
        self.path = format!("{prefix}{}", self.path);
        self
    }
}

/// Strict parse of a single MR document.
pub fn parse_mr(json: &str) -> Result<MetamorphicRelation, SchemaError> {
    let value: Value = serde_json::from_str(json)
        .map_err(|e| SchemaError::at("", SchemaCause::Invalid(e.to_string())))?;
    parse_mr_value(&value)
}

pub fn parse_mr_value(value: &Value) -> Result<MetamorphicRelation, SchemaError> {
    let mr: MetamorphicRelation = from_value_with_path(value)?;
    check_mr_shape(&mr)?;
    Ok(mr)
}

/// Parses `{"mrs": [...]}`.
pub fn parse_mr_batch(value: &Value) -> Result<Vec<MetamorphicRelation>, SchemaError> {
    let items = value
        .get("mrs")
        .ok_or_else(|| SchemaError::at(".mrs", SchemaCause::Missing))?
        .as_array()
        .ok_or_else(|| SchemaError::at(".mrs", SchemaCause::Invalid("expected an array".into())))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| parse_mr_value(item).map_err(|e| e.prefixed(&format!(".mrs[{i}]"))))
        .collect()
}

pub fn serialize_mr(mr: &MetamorphicRelation) -> Value {
    serde_json::to_value(mr).expect("MR serialization is infallible")
}

/// Deserializes with a JSON path attached to any error.
pub(crate) fn from_value_with_path<T: serde::de::DeserializeOwned>(
    value: &Value,
) -> Result<T, SchemaError> {
    serde_path_to_error::deserialize(value).map_err(|err| {
        let path = err.path().to_string();
        let mut path = if path == "." { String::new() } else { format!(".{path}") };
        let message = err.into_inner().to_string();
        let cause = if let Some(field) = backticked(&message, "missing field `") {
            path.push('.');
            path.push_str(&field);
            SchemaCause::Missing
        } else if let Some(field) = backticked(&message, "unknown field `") {
            SchemaCause::UnknownField(field)
        } else {
            SchemaCause::Invalid(message)
        };
        SchemaError { path, cause }
    })
}

fn backticked(message: &str, prefix: &str) -> Option<String> {
    let rest = message.strip_prefix(prefix)?;
    rest.split('`').next().map(String::from)
}

fn check_mr_shape(mr: &MetamorphicRelation) -> Result<(), SchemaError> {
    if mr_number(&mr.id).is_none() {
        return Err(SchemaError::at(".id", SchemaCause::BadIdentifier(mr.id.clone())));
    }
    if mr.req_ids.is_empty() {
        return Err(SchemaError::at(".req_ids", SchemaCause::Empty));
    }
    if mr.when.transforms.is_empty() {
        return Err(SchemaError::at(".when.transforms", SchemaCause::Empty));
    }
    if mr.then.relations.is_empty() {
        return Err(SchemaError::at(".then.relations", SchemaCause::Empty));
    }
    let mut seen = BTreeSet::new();
    for (i, t) in mr.when.transforms.iter().enumerate() {
        if !seen.insert(t.var.as_str()) {
            return Err(SchemaError::at(
                format!(".when.transforms[{i}].var"),
                SchemaCause::DuplicateTransformVar(t.var.clone()),
            ));
        }
        if t.op == TransformOp::Hold && t.pattern_hint.is_some_and(|p| p != PatternKind::Constant) {
            return Err(SchemaError::at(
                format!(".when.transforms[{i}].pattern_hint"),
                SchemaCause::HoldWithPattern,
            ));
        }
    }
    let mut seen = BTreeSet::new();
    for (i, r) in mr.then.relations.iter().enumerate() {
        if !seen.insert(r.var.as_str()) {
            return Err(SchemaError::at(
                format!(".then.relations[{i}].var"),
                SchemaCause::DuplicateRelationVar(r.var.clone()),
            ));
        }
        if r.kind == RelationKind::SettlesWithin && r.set_point.is_none() {
            return Err(SchemaError::at(
                format!(".then.relations[{i}].set_point"),
                SchemaCause::Missing,
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Static checks

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckRule {
    FactualCorrectness,
    CategoryConsistency,
    ConstraintCompliance,
    CausalValidity,
    Testability,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "repair", rename_all = "snake_case")]
pub enum Repair {
    ClampGiven { var: String, from: f64, to: f64 },
    RemoveGiven { var: String },
    RemoveHeldConstant { var: String },
    SetCategory { category: MrCategory },
    SetPriority { priority: u8 },
    ClampSetPoint { var: String, from: f64, to: f64 },
    DefaultTolerance { var: String },
    DefaultWindow { var: String },
}

impl fmt::Display for Repair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repair::ClampGiven { var, from, to } => {
                write!(f, "clamped given {var} from {from} to {to}")
            }
            Repair::RemoveGiven { var } => write!(f, "removed given value for non-input {var}"),
            Repair::RemoveHeldConstant { var } => {
                write!(f, "removed non-input {var} from held_constant")
            }
            Repair::SetCategory { category } => write!(f, "set category to {category:?}"),
            Repair::SetPriority { priority } => write!(f, "set priority to {priority}"),
            Repair::ClampSetPoint { var, from, to } => {
                write!(f, "clamped set_point of {var} from {from} to {to}")
            }
            Repair::DefaultTolerance { var } => {
                write!(f, "replaced non-positive tolerance on {var} with the default")
            }
            Repair::DefaultWindow { var } => {
                write!(f, "replaced non-positive window on {var} with the default")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum FatalReason {
    UnknownRequirement(String),
    UnknownVariable(String),
    NotAnInput(String),
    NotAnOutput(String),
    NoCausalLink { from: String, to: String },
    TransformsHeldInput(String),
}

impl fmt::Display for FatalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FatalReason::UnknownRequirement(id) => write!(f, "requirement {id} does not exist"),
            FatalReason::UnknownVariable(v) => write!(f, "variable {v} is not in the interface"),
            FatalReason::NotAnInput(v) => write!(f, "{v} is transformed but is not an input"),
            FatalReason::NotAnOutput(v) => write!(f, "{v} carries a relation but is not an output"),
            FatalReason::NoCausalLink { from, to } => {
                write!(f, "no stated relationship links {from} to {to}")
            }
            FatalReason::TransformsHeldInput(v) => {
                write!(f, "{v} is held constant but also transformed")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Repairable { fix: Repair },
    Fatal { reason: FatalReason },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub rule: CheckRule,
    pub outcome: Outcome,
}

impl Finding {
    pub fn is_fatal(&self) -> bool {
        matches!(self.outcome, Outcome::Fatal { .. })
    }

    pub fn repair(&self) -> Option<&Repair> {
        match &self.outcome {
            Outcome::Repairable { fix } => Some(fix),
            _ => None,
        }
    }
}

/// Checks an MR against the extraction output.
///
/// Every rule yields at least one finding; a rule with nothing to report
/// yields a single `Ok`.
pub fn static_check(mr: &MetamorphicRelation, extraction: &ExtractionOutput) -> Vec<Finding> {
    let iface = &extraction.variables;
    let mut findings = Vec::new();
    let mut push = |rule, outcome| findings.push(Finding { rule, outcome });

    // factual correctness: every id and name resolves
    let mut factual = Vec::new();
    for id in &mr.req_ids {
        if !extraction.knows_requirement(id) {
            factual.push(FatalReason::UnknownRequirement(id.clone()));
        }
    }
    let referenced: BTreeSet<&str> = mr
        .given
        .initial
        .keys()
        .chain(mr.given.held_constant.iter())
        .chain(mr.when.transforms.iter().map(|t| &t.var))
        .chain(mr.then.relations.iter().map(|r| &r.var))
        .map(String::as_str)
        .collect();
    for name in referenced {
        if iface.variable(name).is_none() {
            factual.push(FatalReason::UnknownVariable(name.to_string()));
        }
    }
    finish(&mut push, CheckRule::FactualCorrectness, factual.into_iter().map(|reason| Outcome::Fatal { reason }));

    // category consistency with the linked test conditions
    let linked: BTreeSet<MrCategory> = mr
        .req_ids
        .iter()
        .filter_map(|id| {
            extraction
                .test_condition(id)
                .map(|tc| tc.category)
                .or_else(|| extraction.relationship(id).map(|vr| extraction.relationship_category(vr)))
        })
        .filter_map(MrCategory::from_condition)
        .collect();
    let mut category = Vec::new();
    let mut expected = mr.category;
    if linked.len() == 1 {
        let only = *linked.iter().next().unwrap();
        if only != mr.category {
            category.push(Outcome::Repairable {
                fix: Repair::SetCategory { category: only },
            });
            expected = only;
        }
    }
    if mr.priority != expected.priority() {
        category.push(Outcome::Repairable {
            fix: Repair::SetPriority {
                priority: expected.priority(),
            },
        });
    }
    finish(&mut push, CheckRule::CategoryConsistency, category.into_iter());

    // constraint compliance: bounds and held inputs
    let mut constraint = Vec::new();
    for (var, &value) in &mr.given.initial {
        let Some(spec) = iface.variable(var) else { continue };
        if !spec.is_input() && spec.causality != crate::extraction::Causality::Parameter {
            constraint.push(Outcome::Repairable {
                fix: Repair::RemoveGiven { var: var.clone() },
            });
        } else if !spec.admits(value) {
            constraint.push(Outcome::Repairable {
                fix: Repair::ClampGiven {
                    var: var.clone(),
                    from: value,
                    to: spec.clamp(value),
                },
            });
        }
    }
    for var in &mr.given.held_constant {
        if iface.variable(var).is_some_and(|v| !v.is_input()) {
            constraint.push(Outcome::Repairable {
                fix: Repair::RemoveHeldConstant { var: var.clone() },
            });
        }
    }
    for t in &mr.when.transforms {
        if t.op != TransformOp::Hold && mr.given.held_constant.contains(&t.var) {
            constraint.push(Outcome::Fatal {
                reason: FatalReason::TransformsHeldInput(t.var.clone()),
            });
        }
    }
    for r in &mr.then.relations {
        if let (Some(sp), Some(spec)) = (r.set_point, iface.variable(&r.var)) {
            if !spec.admits(sp) {
                constraint.push(Outcome::Repairable {
                    fix: Repair::ClampSetPoint {
                        var: r.var.clone(),
                        from: sp,
                        to: spec.clamp(sp),
                    },
                });
            }
        }
        if r.tolerance.is_some_and(|t| !(t > 0.0)) || r.rtol.is_some_and(|t| !(t >= 0.0)) {
            constraint.push(Outcome::Repairable {
                fix: Repair::DefaultTolerance { var: r.var.clone() },
            });
        }
        if r.window.is_some_and(|w| !(w > 0.0)) {
            constraint.push(Outcome::Repairable {
                fix: Repair::DefaultWindow { var: r.var.clone() },
            });
        }
    }
    finish(&mut push, CheckRule::ConstraintCompliance, constraint.into_iter());

    // testability: transforms act on inputs, relations observe outputs
    let mut testability = Vec::new();
    for t in &mr.when.transforms {
        if iface.variable(&t.var).is_some_and(|v| !v.is_input()) {
            testability.push(FatalReason::NotAnInput(t.var.clone()));
        }
    }
    for r in &mr.then.relations {
        if iface.variable(&r.var).is_some_and(|v| !v.is_output()) {
            testability.push(FatalReason::NotAnOutput(r.var.clone()));
        }
    }

    // causal validity: a direct relationship backs every transform→relation pair
    let mut causal = Vec::new();
    for t in &mr.when.transforms {
        for r in &mr.then.relations {
            let resolvable = iface.variable(&t.var).is_some_and(|v| v.is_input())
                && iface.variable(&r.var).is_some_and(|v| v.is_output());
            if resolvable && !extraction.relationships.iter().any(|vr| vr.links(&t.var, &r.var)) {
                causal.push(FatalReason::NoCausalLink {
                    from: t.var.clone(),
                    to: r.var.clone(),
                });
            }
        }
    }
    finish(&mut push, CheckRule::CausalValidity, causal.into_iter().map(|reason| Outcome::Fatal { reason }));
    finish(&mut push, CheckRule::Testability, testability.into_iter().map(|reason| Outcome::Fatal { reason }));

    findings
}

fn finish(
    push: &mut impl FnMut(CheckRule, Outcome),
    rule: CheckRule,
    outcomes: impl Iterator<Item = Outcome>,
) {
    let mut any = false;
    for outcome in outcomes {
        any = true;
        push(rule, outcome);
    }
    if !any {
        push(rule, Outcome::Ok);
    }
}

pub fn apply_repair(mr: &mut MetamorphicRelation, repair: &Repair) {
    match repair {
        Repair::ClampGiven { var, to, .. } => {
            if let Some(v) = mr.given.initial.get_mut(var) {
                *v = *to;
            }
        }
        Repair::RemoveGiven { var } => {
            mr.given.initial.remove(var);
        }
        Repair::RemoveHeldConstant { var } => {
            mr.given.held_constant.remove(var);
        }
        Repair::SetCategory { category } => mr.category = *category,
        Repair::SetPriority { priority } => mr.priority = *priority,
        Repair::ClampSetPoint { var, to, .. } => {
            for r in mr.then.relations.iter_mut().filter(|r| &r.var == var) {
                r.set_point = Some(*to);
            }
        }
        Repair::DefaultTolerance { var } => {
            for r in mr.then.relations.iter_mut().filter(|r| &r.var == var) {
                r.tolerance = r.tolerance.filter(|t| *t > 0.0);
                r.rtol = r.rtol.filter(|t| *t >= 0.0);
            }
        }
        Repair::DefaultWindow { var } => {
            for r in mr.then.relations.iter_mut().filter(|r| &r.var == var) {
                r.window = r.window.filter(|w| *w > 0.0);
            }
        }
    }
}

/// Human-readable Given/When/Then text.
pub fn render_gherkin(mr: &MetamorphicRelation) -> String {
    let mut out = format!("Scenario: {} - {}\n", mr.id, mr.scenario);
    let given: Vec<String> = mr
        .given
        .initial
        .iter()
        .map(|(var, value)| {
            if mr.given.held_constant.contains(var) {
                format!("{var} = {value} (held constant)")
            } else {
                format!("{var} = {value}")
            }
        })
        .collect();
    out.push_str(&format!("  Given {}\n", given.join(" and ")));
    let when: Vec<String> = mr
        .when
        .transforms
        .iter()
        .map(|t| {
            let verb = match t.op {
                TransformOp::Increase => "increases",
                TransformOp::Decrease => "decreases",
                TransformOp::Scale => "is scaled",
                TransformOp::Hold => "is held",
            };
            match t.pattern_hint {
                Some(p) => format!("{} {verb} as a {p:?}", t.var).replace("as a Step", "as a step").replace("as a Ramp", "as a ramp").replace("as a Constant", "constant"),
                None => format!("{} {verb}", t.var),
            }
        })
        .collect();
    out.push_str(&format!("  When {}\n", when.join(" and ")));
    let then: Vec<String> = mr
        .then
        .relations
        .iter()
        .map(|r| match r.kind {
            RelationKind::EventuallyIncreases => {
                format!("{} eventually increases than the seed output", r.var)
            }
            RelationKind::EventuallyDecreases => {
                format!("{} eventually decreases than the seed output", r.var)
            }
            RelationKind::ProportionalTo => format!("{} is proportional to the seed output", r.var),
            RelationKind::EqualTo => format!("{} equals the seed output", r.var),
            RelationKind::SettlesWithin => {
                let window = r.window.map_or("the default window".to_string(), |w| format!("{w} s"));
                format!(
                    "{} settles within {window} to {}",
                    r.var,
                    r.set_point.unwrap_or_default()
                )
            }
        })
        .collect();
    out.push_str(&format!("  Then {}\n", then.join(" and ")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use serde_json::json;

    const MR001: &str = r#"{
        "id": "MR001",
        "req_ids": ["TC002", "VR002"],
        "scenario": "Higher engine load drives the oil temperature up",
        "category": "behavioral",
        "priority": 1,
        "given": {"initial": {"engine_load": 0.5}, "held_constant": ["setpoint_temperature_oil"]},
        "when": {"transforms": [{"var": "engine_load", "op": "increase", "pattern_hint": "STEP"}]},
        "then": {"relations": [{"var": "temperature_oil", "kind": "Eventually_Increases"}]}
    }"#;

    #[test]
    fn parses_narrated_mr001() {
        let mr = parse_mr(MR001).unwrap();
        assert_eq!(mr.id, "MR001");
        assert_eq!(mr.given.initial["engine_load"], 0.5);
        assert_eq!(mr.when.transforms[0].op, TransformOp::Increase);
        assert_eq!(mr.then.relations[0].kind, RelationKind::EventuallyIncreases);
        let text = render_gherkin(&mr);
        assert!(text.contains("When engine_load increases as a step"), "{text}");
    }

    #[test]
    fn missing_then_reports_path() {
        let mut v: Value = serde_json::from_str(MR001).unwrap();
        v.as_object_mut().unwrap().remove("then");
        let err = parse_mr_value(&v).unwrap_err();
        assert_eq!(err, SchemaError::at(".then", SchemaCause::Missing));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: Value = serde_json::from_str(MR001).unwrap();
        v["then"]["relations"][0]["colour"] = json!("red");
        let err = parse_mr_value(&v).unwrap_err();
        assert_eq!(err.cause, SchemaCause::UnknownField("colour".into()));
        assert!(err.path.starts_with(".then.relations[0]"), "{}", err.path);
    }

    #[test]
    fn duplicate_relation_var_is_rejected() {
        let mut v: Value = serde_json::from_str(MR001).unwrap();
        v["then"]["relations"] = json!([
            {"var": "temperature_oil", "kind": "Eventually_Increases"},
            {"var": "temperature_oil", "kind": "Equal_to"}
        ]);
        let err = parse_mr_value(&v).unwrap_err();
        assert_eq!(err.cause, SchemaCause::DuplicateRelationVar("temperature_oil".into()));
    }

    #[test]
    fn hold_rejects_step_hint_and_settles_needs_set_point() {
        let mut v: Value = serde_json::from_str(MR001).unwrap();
        v["when"]["transforms"][0]["op"] = json!("hold");
        assert_eq!(parse_mr_value(&v).unwrap_err().cause, SchemaCause::HoldWithPattern);
        let mut v: Value = serde_json::from_str(MR001).unwrap();
        v["then"]["relations"][0]["kind"] = json!("Settles_within");
        assert_eq!(
            parse_mr_value(&v).unwrap_err(),
            SchemaError::at(".then.relations[0].set_point", SchemaCause::Missing)
        );
    }

    #[test]
    fn batch_paths_are_indexed() {
        let mut v: Value = serde_json::from_str(MR001).unwrap();
        v.as_object_mut().unwrap().remove("req_ids");
        let batch = json!({ "mrs": [v] });
        let err = parse_mr_batch(&batch).unwrap_err();
        assert_eq!(err.to_string(), ".mrs[0].req_ids: missing");
    }

    fn loc_mr() -> (MetamorphicRelation, ExtractionOutput) {
        let extraction = fixtures::loc_extraction();
        let mut mr = parse_mr(MR001).unwrap();
        mr.then.relations[0].var = "position_valve".into();
        (mr, extraction)
    }

    #[test]
    fn clean_mr_has_only_ok_findings() {
        let (mr, ex) = loc_mr();
        let findings = static_check(&mr, &ex);
        assert!(findings.iter().all(|f| f.outcome == Outcome::Ok), "{findings:?}");
        assert_eq!(findings.len(), 5);
    }

    #[test]
    fn relation_on_input_is_fatal() {
        let (mut mr, ex) = loc_mr();
        mr.then.relations[0].var = "mass_flow_cooling_liquid_in".into();
        let findings = static_check(&mr, &ex);
        assert!(findings.iter().any(|f| f.outcome
            == Outcome::Fatal {
                reason: FatalReason::NotAnOutput("mass_flow_cooling_liquid_in".into())
            }));
    }

    #[test]
    fn out_of_bounds_given_is_clamped() {
        let (mut mr, ex) = loc_mr();
        mr.given.initial.insert("engine_load".into(), 1.2);
        let findings = static_check(&mr, &ex);
        let fix = findings.iter().find_map(Finding::repair).unwrap().clone();
        assert_eq!(
            fix,
            Repair::ClampGiven {
                var: "engine_load".into(),
                from: 1.2,
                to: 1.0
            }
        );
        apply_repair(&mut mr, &fix);
        assert!(static_check(&mr, &ex).iter().all(|f| f.outcome == Outcome::Ok));
    }

    #[test]
    fn unknown_requirement_is_fatal() {
        let (mut mr, ex) = loc_mr();
        mr.req_ids.push("TC999".into());
        assert!(static_check(&mr, &ex).iter().any(|f| f.outcome
            == Outcome::Fatal {
                reason: FatalReason::UnknownRequirement("TC999".into())
            }));
    }

    #[test]
    fn missing_causal_link_is_fatal() {
        let (mut mr, ex) = loc_mr();
        mr.then.relations[0].var = "mass_flow_cooling_liquid_out".into();
        let findings = static_check(&mr, &ex);
        assert!(findings.iter().any(|f| f.rule == CheckRule::CausalValidity && f.is_fatal()));
    }

    #[test]
    fn category_is_aligned_with_linked_condition() {
        let (mut mr, ex) = loc_mr();
        mr.category = MrCategory::Performance;
        let repairs: Vec<_> = static_check(&mr, &ex).iter().filter_map(Finding::repair).cloned().collect();
        assert_eq!(
            repairs,
            [
                Repair::SetCategory { category: MrCategory::Behavioral },
            ]
        );
        mr.priority = 2;
        let repairs: Vec<_> = static_check(&mr, &ex).iter().filter_map(Finding::repair).cloned().collect();
        assert_eq!(repairs.len(), 2);
    }
}
