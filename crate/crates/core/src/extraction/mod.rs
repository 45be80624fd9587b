//! Interface and requirement extraction.
//!
//! The interface comes from an FMI `modelDescription.xml`; requirements come
//! from a markdown document with tagged requirement blocks (see
//! `docs/requirements_format.md`). [`build_extraction_output`] cross-checks the
//! two and produces the [`ExtractionOutput`] every later phase consumes.

mod model_description;
mod requirements;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::TimeGrid;

pub use model_description::{load_interface, parse_model_description, to_model_description_xml};
pub use requirements::{load_requirements, RequirementsDocument};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("model description schema error: {0}")]
    Schema(SchemaProblem),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("requirements line {line}: {cause}")]
    Parse { line: usize, cause: String },
    #[error("requirements document contains no tagged requirements")]
    EmptyRequirements,
    #[error("unknown variable `{name}` in {location}")]
    UnknownVariable { name: String, location: String },
    #[error("initial condition for `{name}` is {value}, outside [{min}, {max}]")]
    InitialOutOfBounds {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("no initial condition or start value for input `{0}`")]
    MissingInitialCondition(String),
    #[error("i/o error reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaProblem {
    #[error("root element is not fmiModelDescription")]
    NotModelDescription,
    #[error("no ModelVariables section")]
    NoModelVariables,
    #[error("ModelVariables declares no variables")]
    NoVariables,
    #[error("variable without a name")]
    UnnamedVariable,
    #[error("variable `{0}` has min > max")]
    InvertedBounds(String),
    #[error("variable `{0}` has a start value outside [min, max]")]
    StartOutOfBounds(String),
    #[error("attribute `{attribute}` of `{name}` is not a number: {value}")]
    BadNumber {
        name: String,
        attribute: String,
        value: String,
    },
    #[error("unsupported causality `{1}` on `{0}`")]
    BadCausality(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Causality {
    Input,
    Output,
    Parameter,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Real,
    Integer,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub causality: Causality,
    #[serde(default)]
    pub variability: String,
    pub data_type: DataType,
    #[serde(default)]
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
}

impl VariableSpec {
    /// True when `value` respects whichever bounds are declared.
    pub fn admits(&self, value: f64) -> bool {
        self.min.is_none_or(|lo| value >= lo) && self.max.is_none_or(|hi| value <= hi)
    }

    pub fn clamp(&self, value: f64) -> f64 {
        let mut v = value;
        if let Some(lo) = self.min {
            v = v.max(lo);
        }
        if let Some(hi) = self.max {
            v = v.min(hi);
        }
        v
    }

    pub fn is_input(&self) -> bool {
        self.causality == Causality::Input
    }

    pub fn is_output(&self) -> bool {
        self.causality == Causality::Output
    }
}

/// Set-point inputs are identified by name and must never be transformed.
pub fn is_setpoint_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.contains("setpoint") || lower.contains("set_point")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceSpec {
    pub model_name: String,
    pub variables: Vec<VariableSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_experiment: Option<TimeGrid>,
}

impl InterfaceSpec {
    pub fn variable(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables.iter().filter(|v| v.is_input())
    }

    pub fn outputs(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables.iter().filter(|v| v.is_output())
    }

    pub fn input_names(&self) -> Vec<String> {
        self.inputs().map(|v| v.name.clone()).collect()
    }

    pub fn output_names(&self) -> Vec<String> {
        self.outputs().map(|v| v.name.clone()).collect()
    }

    pub fn is_testable(&self) -> bool {
        self.inputs().next().is_some() && self.outputs().next().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionCategory {
    Behavioral,
    Performance,
    Other,
}

impl ConditionCategory {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "behavioral" | "behavioural" => Some(Self::Behavioral),
            "performance" => Some(Self::Performance),
            "other" => Some(Self::Other),
            _ => None,
        }
    }

    /// Generation priority; lower runs first.
    pub fn rank(self) -> u8 {
        match self {
            Self::Behavioral => 1,
            Self::Performance => 2,
            Self::Other => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestCondition {
    pub id: String,
    pub text: String,
    pub category: ConditionCategory,
    pub evidence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increases,
    Decreases,
    Proportional,
    RegulatesToSetpoint,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "increases" => Some(Self::Increases),
            "decreases" => Some(Self::Decreases),
            "proportional" => Some(Self::Proportional),
            "regulates_to_setpoint" => Some(Self::RegulatesToSetpoint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableRelationship {
    pub id: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub direction: Direction,
    pub statement: String,
    /// Test condition the relationship was stated in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_condition: Option<String>,
}

impl VariableRelationship {
    pub fn links(&self, input: &str, output: &str) -> bool {
        self.inputs.iter().any(|i| i == input) && self.outputs.iter().any(|o| o == output)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionOutput {
    pub system_summary: String,
    pub test_conditions: Vec<TestCondition>,
    pub relationships: Vec<VariableRelationship>,
    pub variables: InterfaceSpec,
    pub initial_conditions: BTreeMap<String, f64>,
}

impl ExtractionOutput {
    pub fn test_condition(&self, id: &str) -> Option<&TestCondition> {
        self.test_conditions.iter().find(|tc| tc.id == id)
    }

    pub fn relationship(&self, id: &str) -> Option<&VariableRelationship> {
        self.relationships.iter().find(|vr| vr.id == id)
    }

    pub fn knows_requirement(&self, id: &str) -> bool {
        self.test_condition(id).is_some() || self.relationship(id).is_some()
    }

    /// Category of a relationship, taken from the test condition it came from.
    pub fn relationship_category(&self, vr: &VariableRelationship) -> ConditionCategory {
        vr.test_condition
            .as_deref()
            .and_then(|id| self.test_condition(id))
            .map_or(ConditionCategory::Other, |tc| tc.category)
    }

    pub fn initial_value(&self, var: &str) -> Option<f64> {
        self.initial_conditions
            .get(var)
            .copied()
            .or_else(|| self.variables.variable(var).and_then(|v| v.start))
    }
}

/// Cross-checks requirements against the interface and fills in initial
/// conditions from start values where the document is silent.
pub fn build_extraction_output(
    interface: &InterfaceSpec,
    requirements: &RequirementsDocument,
) -> Result<ExtractionOutput, ExtractionError> {
    if requirements.test_conditions.is_empty() {
        return Err(ExtractionError::EmptyRequirements);
    }

    for vr in &requirements.relationships {
        for name in &vr.inputs {
            match interface.variable(name) {
                Some(v) if v.is_input() => {}
                _ => {
                    return Err(ExtractionError::UnknownVariable {
                        name: name.clone(),
                        location: format!("{} inputs", vr.id),
                    })
                }
            }
        }
        for name in &vr.outputs {
            match interface.variable(name) {
                Some(v) if v.is_output() => {}
                _ => {
                    return Err(ExtractionError::UnknownVariable {
                        name: name.clone(),
                        location: format!("{} outputs", vr.id),
                    })
                }
            }
        }
        if let Some(shared) = vr.inputs.iter().find(|i| vr.outputs.contains(i)) {
            return Err(ExtractionError::UnknownVariable {
                name: shared.clone(),
                location: format!("{} (listed as both input and output)", vr.id),
            });
        }
    }

    let mut initial_conditions = BTreeMap::new();
    for (name, &value) in &requirements.initial_conditions {
        let spec = interface
            .variable(name)
            .filter(|v| matches!(v.causality, Causality::Input | Causality::Parameter))
            .ok_or_else(|| ExtractionError::UnknownVariable {
                name: name.clone(),
                location: "initial conditions".into(),
            })?;
        if !spec.admits(value) {
            return Err(ExtractionError::InitialOutOfBounds {
                name: name.clone(),
                value,
                min: spec.min.unwrap_or(f64::NEG_INFINITY),
                max: spec.max.unwrap_or(f64::INFINITY),
            });
        }
        initial_conditions.insert(name.clone(), value);
    }
    for input in interface.inputs() {
        if initial_conditions.contains_key(&input.name) {
            continue;
        }
        let start = input
            .start
            .ok_or_else(|| ExtractionError::MissingInitialCondition(input.name.clone()))?;
        initial_conditions.insert(input.name.clone(), start);
    }

    Ok(ExtractionOutput {
        system_summary: requirements.system_summary.clone(),
        test_conditions: requirements.test_conditions.clone(),
        relationships: requirements.relationships.clone(),
        variables: interface.clone(),
        initial_conditions,
    })
}
