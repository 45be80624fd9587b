use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Read as _;
use std::path::Path;

use roxmltree::{Document, Node};

use super::{Causality, DataType, ExtractionError, InterfaceSpec, SchemaProblem, VariableSpec};
use crate::signals::TimeGrid;

/// Parses the ModelVariables of an FMI 2.0 or 3.0 model description.
///
/// FMI 2.0 `ScalarVariable` elements and FMI 3.0 typed elements (`Float64`,
/// `Int32`, `Boolean`, ...) normalize to the same [`VariableSpec`]. String,
/// binary and clock variables are skipped.
pub fn parse_model_description(xml: &[u8]) -> Result<InterfaceSpec, ExtractionError> {
    let text = std::str::from_utf8(xml).map_err(|e| ExtractionError::Xml(e.to_string()))?;
    let doc = Document::parse(text).map_err(|e| ExtractionError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "fmiModelDescription" {
        return Err(ExtractionError::Schema(SchemaProblem::NotModelDescription));
    }
    let model_name = root.attribute("modelName").unwrap_or_default().to_string();

    let model_variables = root
        .children()
        .find(|n| n.has_tag_name("ModelVariables"))
        .ok_or(ExtractionError::Schema(SchemaProblem::NoModelVariables))?;

    let mut variables = Vec::new();
    let mut seen = BTreeSet::new();
    for node in model_variables.children().filter(Node::is_element) {
        let parsed = if node.has_tag_name("ScalarVariable") {
            parse_fmi2_variable(node)?
        } else {
            parse_fmi3_variable(node)?
        };
        let Some(var) = parsed else { continue };
        check_bounds(&var)?;
        if !seen.insert(var.name.clone()) {
            return Err(ExtractionError::DuplicateVariable(var.name));
        }
        variables.push(var);
    }
    if variables.is_empty() {
        return Err(ExtractionError::Schema(SchemaProblem::NoVariables));
    }

    let default_experiment = root
        .children()
        .find(|n| n.has_tag_name("DefaultExperiment"))
        .and_then(default_experiment);

    Ok(InterfaceSpec {
        model_name,
        variables,
        default_experiment,
    })
}

/// Reads the interface from a standalone `modelDescription.xml` or from the
/// root of an `.fmu` archive.
pub fn load_interface(path: &Path) -> Result<InterfaceSpec, ExtractionError> {
    let io_err = |e: &dyn std::fmt::Display| ExtractionError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let is_fmu = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("fmu"));
    if is_fmu {
        let file = std::fs::File::open(path).map_err(|e| io_err(&e))?;
        let mut archive = zip::ZipArchive::new(file).map_err(|e| io_err(&e))?;
        let mut entry = archive
            .by_name("modelDescription.xml")
            .map_err(|e| io_err(&e))?;
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(|e| io_err(&e))?;
        parse_model_description(&bytes)
    } else {
        let bytes = std::fs::read(path).map_err(|e| io_err(&e))?;
        parse_model_description(&bytes)
    }
}

fn parse_fmi2_variable(node: Node<'_, '_>) -> Result<Option<VariableSpec>, ExtractionError> {
    let Some(type_node) = node.children().find(Node::is_element) else {
        return Ok(None);
    };
    let data_type = match type_node.tag_name().name() {
        "Real" => DataType::Real,
        "Integer" | "Enumeration" => DataType::Integer,
        "Boolean" => DataType::Boolean,
        _ => return Ok(None),
    };
    build_variable(node, type_node, data_type).map(Some)
}

fn parse_fmi3_variable(node: Node<'_, '_>) -> Result<Option<VariableSpec>, ExtractionError> {
    let data_type = match node.tag_name().name() {
        "Float32" | "Float64" => DataType::Real,
        "Int8" | "Int16" | "Int32" | "Int64" | "UInt8" | "UInt16" | "UInt32" | "UInt64"
        | "Enumeration" => DataType::Integer,
        "Boolean" => DataType::Boolean,
        _ => return Ok(None),
    };
    build_variable(node, node, data_type).map(Some)
}

fn build_variable(
    var_node: Node<'_, '_>,
    type_node: Node<'_, '_>,
    data_type: DataType,
) -> Result<VariableSpec, ExtractionError> {
    let name = var_node
        .attribute("name")
        .filter(|n| !n.is_empty())
        .ok_or(ExtractionError::Schema(SchemaProblem::UnnamedVariable))?
        .to_string();
    let causality = match var_node.attribute("causality") {
        None | Some("local") | Some("independent") => Causality::Local,
        Some("input") => Causality::Input,
        Some("output") => Causality::Output,
        Some("parameter") | Some("calculatedParameter") | Some("structuralParameter") => {
            Causality::Parameter
        }
        Some(other) => {
            return Err(ExtractionError::Schema(SchemaProblem::BadCausality(
                name,
                other.to_string(),
            )))
        }
    };
    let number = |attr: &str| -> Result<Option<f64>, ExtractionError> {
        match type_node.attribute(attr) {
            None => Ok(None),
            Some(raw) => parse_number(raw, data_type).map(Some).ok_or_else(|| {
                ExtractionError::Schema(SchemaProblem::BadNumber {
                    name: name.clone(),
                    attribute: attr.to_string(),
                    value: raw.to_string(),
                })
            }),
        }
    };
    Ok(VariableSpec {
        min: number("min")?,
        max: number("max")?,
        start: number("start")?,
        description: var_node.attribute("description").unwrap_or_default().to_string(),
        variability: var_node.attribute("variability").unwrap_or_default().to_string(),
        unit: type_node.attribute("unit").unwrap_or_default().to_string(),
        causality,
        data_type,
        name,
    })
}

fn parse_number(raw: &str, data_type: DataType) -> Option<f64> {
    let raw = raw.trim();
    if data_type == DataType::Boolean {
        return match raw {
            "true" | "1" => Some(1.0),
            "false" | "0" => Some(0.0),
            _ => None,
        };
    }
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn check_bounds(var: &VariableSpec) -> Result<(), ExtractionError> {
    if let (Some(lo), Some(hi)) = (var.min, var.max) {
        if lo > hi {
            return Err(ExtractionError::Schema(SchemaProblem::InvertedBounds(
                var.name.clone(),
            )));
        }
    }
    if let Some(start) = var.start {
        if !var.admits(start) {
            return Err(ExtractionError::Schema(SchemaProblem::StartOutOfBounds(
                var.name.clone(),
            )));
        }
    }
    Ok(())
}

fn default_experiment(node: Node<'_, '_>) -> Option<TimeGrid> {
    let get = |attr: &str| node.attribute(attr).and_then(|v| v.trim().parse::<f64>().ok());
    let grid = TimeGrid {
        start: get("startTime").unwrap_or(0.0),
        stop: get("stopTime")?,
        step: get("stepSize")?,
    };
    grid.validate().ok().map(|_| grid)
}

/// Writes an FMI 2.0 model description carrying the interface's variables.
pub fn to_model_description_xml(spec: &InterfaceSpec) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<fmiModelDescription fmiVersion=\"2.0\" modelName=\"{}\">",
        escape(&spec.model_name)
    );
    if let Some(grid) = &spec.default_experiment {
        let _ = writeln!(
            out,
            "  <DefaultExperiment startTime=\"{:?}\" stopTime=\"{:?}\" stepSize=\"{:?}\"/>",
            grid.start, grid.stop, grid.step
        );
    }
    out.push_str("  <ModelVariables>\n");
    for (i, var) in spec.variables.iter().enumerate() {
        let causality = match var.causality {
            Causality::Input => "input",
            Causality::Output => "output",
            Causality::Parameter => "parameter",
            Causality::Local => "local",
        };
        let _ = write!(
            out,
            "    <ScalarVariable name=\"{}\" valueReference=\"{i}\" causality=\"{causality}\"",
            escape(&var.name)
        );
        if !var.variability.is_empty() {
            let _ = write!(out, " variability=\"{}\"", escape(&var.variability));
        }
        if !var.description.is_empty() {
            let _ = write!(out, " description=\"{}\"", escape(&var.description));
        }
        out.push_str(">\n");
        let tag = match var.data_type {
            DataType::Real => "Real",
            DataType::Integer => "Integer",
            DataType::Boolean => "Boolean",
        };
        let _ = write!(out, "      <{tag}");
        if !var.unit.is_empty() {
            let _ = write!(out, " unit=\"{}\"", escape(&var.unit));
        }
        for (attr, value) in [("min", var.min), ("max", var.max), ("start", var.start)] {
            if let Some(v) = value {
                if var.data_type == DataType::Boolean {
                    let _ = write!(out, " {attr}=\"{}\"", v != 0.0);
                } else {
                    let _ = write!(out, " {attr}=\"{v:?}\"");
                }
            }
        }
        out.push_str("/>\n    </ScalarVariable>\n");
    }
    out.push_str("  </ModelVariables>\n</fmiModelDescription>\n");
    out
}

fn escape(raw: &str) -> String {
    raw.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sut::LOC_MODEL_DESCRIPTION;
    use proptest::prelude::*;

    #[test]
    fn loc_interface_has_four_inputs_and_outputs() {
        let spec = parse_model_description(LOC_MODEL_DESCRIPTION.as_bytes()).unwrap();
        assert_eq!(
            spec.input_names(),
            [
                "temperature_cooling_liquid_in",
                "mass_flow_cooling_liquid_in",
                "engine_load",
                "setpoint_temperature_oil"
            ]
        );
        assert_eq!(
            spec.output_names(),
            [
                "temperature_oil",
                "position_valve",
                "temperature_cooling_liquid_out",
                "mass_flow_cooling_liquid_out"
            ]
        );
        let load = spec.variable("engine_load").unwrap();
        assert_eq!((load.min, load.max, load.start), (Some(0.0), Some(1.0), Some(0.5)));
        assert_eq!(spec.default_experiment, Some(TimeGrid { start: 0.0, stop: 3000.0, step: 5.0 }));
    }

    #[test]
    fn empty_model_variables_is_a_schema_error() {
        let xml = r#"<fmiModelDescription modelName="m"><ModelVariables/></fmiModelDescription>"#;
        assert_eq!(
            parse_model_description(xml.as_bytes()),
            Err(ExtractionError::Schema(SchemaProblem::NoVariables))
        );
        let xml = r#"<fmiModelDescription modelName="m"></fmiModelDescription>"#;
        assert_eq!(
            parse_model_description(xml.as_bytes()),
            Err(ExtractionError::Schema(SchemaProblem::NoModelVariables))
        );
    }

    #[test]
    fn inverted_bounds_are_rejected() {
        let xml = r#"<fmiModelDescription modelName="m"><ModelVariables>
            <ScalarVariable name="x" causality="input"><Real min="1" max="0"/></ScalarVariable>
        </ModelVariables></fmiModelDescription>"#;
        assert_eq!(
            parse_model_description(xml.as_bytes()),
            Err(ExtractionError::Schema(SchemaProblem::InvertedBounds("x".into())))
        );
    }

    #[test]
    fn duplicates_and_malformed_xml() {
        let xml = r#"<fmiModelDescription modelName="m"><ModelVariables>
            <ScalarVariable name="x" causality="input"><Real/></ScalarVariable>
            <ScalarVariable name="x" causality="output"><Real/></ScalarVariable>
        </ModelVariables></fmiModelDescription>"#;
        assert_eq!(
            parse_model_description(xml.as_bytes()),
            Err(ExtractionError::DuplicateVariable("x".into()))
        );
        assert!(matches!(
            parse_model_description(b"<fmiModelDescription>"),
            Err(ExtractionError::Xml(_))
        ));
    }

    #[test]
    fn fmi3_spellings_normalize() {
        let xml = r#"<fmiModelDescription fmiVersion="3.0" modelName="m"><ModelVariables>
            <Float64 name="time" causality="independent" valueReference="0"/>
            <Float64 name="u" causality="input" unit="K" min="0" max="10" start="1" unknownAttr="q"/>
            <Int32 name="mode" causality="parameter" start="2"/>
            <Boolean name="on" causality="output"/>
            <String name="label" causality="parameter"/>
        </ModelVariables></fmiModelDescription>"#;
        let spec = parse_model_description(xml.as_bytes()).unwrap();
        assert_eq!(spec.variables.len(), 4);
        assert_eq!(spec.variable("time").unwrap().causality, Causality::Local);
        let u = spec.variable("u").unwrap();
        assert_eq!((u.data_type, u.unit.as_str(), u.start), (DataType::Real, "K", Some(1.0)));
        assert_eq!(spec.variable("mode").unwrap().data_type, DataType::Integer);
        assert_eq!(spec.variable("on").unwrap().data_type, DataType::Boolean);
    }

    #[test]
    fn missing_causality_defaults_to_local() {
        let xml = r#"<fmiModelDescription modelName="m"><ModelVariables>
            <ScalarVariable name="x"><Real/></ScalarVariable>
        </ModelVariables></fmiModelDescription>"#;
        let spec = parse_model_description(xml.as_bytes()).unwrap();
        assert_eq!(spec.variables[0].causality, Causality::Local);
    }

    fn arb_variable() -> impl Strategy<Value = VariableSpec> {
        (
            "[a-z][a-z_]{0,8}",
            prop_oneof![
                Just(Causality::Input),
                Just(Causality::Output),
                Just(Causality::Parameter),
                Just(Causality::Local)
            ],
            proptest::option::of(-1e3..0.0f64),
            proptest::option::of(0.0..1e3f64),
            "[ a-zA-Z<>&\"]{0,12}",
        )
            .prop_map(|(name, causality, min, max, description)| VariableSpec {
                name,
                description,
                causality,
                variability: "continuous".into(),
                data_type: DataType::Real,
                unit: "K".into(),
                min,
                max,
                start: Some(0.0),
            })
    }

    proptest! {
        #[test]
        fn xml_round_trip(vars in proptest::collection::vec(arb_variable(), 1..6)) {
            let mut seen = BTreeSet::new();
            let variables: Vec<_> = vars.into_iter().filter(|v| seen.insert(v.name.clone())).collect();
            let spec = InterfaceSpec {
                model_name: "rt".into(),
                variables,
                default_experiment: Some(TimeGrid { start: 0.0, stop: 10.0, step: 0.5 }),
            };
            let xml = to_model_description_xml(&spec);
            let parsed = parse_model_description(xml.as_bytes()).unwrap();
            prop_assert_eq!(&parsed, &spec);
            let again = parse_model_description(to_model_description_xml(&parsed).as_bytes()).unwrap();
            prop_assert_eq!(again, parsed);
        }
    }
}
