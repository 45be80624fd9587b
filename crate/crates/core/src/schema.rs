//! Artifact schemas and canonical JSON.
//!
//! Every artifact is a document `{schema_id, version, payload}` written with
//! sorted keys, two-space indentation and shortest round-trip numbers. The
//! payload is checked against `schemas/<schema_id>.json` on write and read.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use jsonschema::error::ValidationErrorKind;
use jsonschema::{Retrieve, Uri, Validator};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub const SCHEMA_VERSION: &str = "1.0";
const BASE_URI: &str = "https://mrflow.invalid/schemas/";

const SOURCES: &[(&str, &str)] = &[
    ("common", include_str!("../schemas/common.json")),
    ("extraction", include_str!("../schemas/extraction.json")),
    ("inputs", include_str!("../schemas/inputs.json")),
    ("iteration_summary", include_str!("../schemas/iteration_summary.json")),
    ("mrs", include_str!("../schemas/mrs.json")),
    ("mutation_report", include_str!("../schemas/mutation_report.json")),
    ("results", include_str!("../schemas/results.json")),
    ("runtime_stats", include_str!("../schemas/runtime_stats.json")),
    ("session_config", include_str!("../schemas/session_config.json")),
    ("session_report", include_str!("../schemas/session_report.json")),
    ("session_state", include_str!("../schemas/session_state.json")),
    ("tests", include_str!("../schemas/tests.json")),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanonicalError {
    #[error("non-finite number at {path}")]
    NonFiniteValue { path: String },
    #[error("cannot serialize: {0}")]
    Serialize(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown schema `{0}`")]
pub struct UnknownSchema(pub String);

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error(transparent)]
    UnknownSchema(#[from] UnknownSchema),
    #[error("{path}: document violates schema `{schema_id}`: {}", violations.join("; "))]
    Invalid {
        path: PathBuf,
        schema_id: String,
        violations: Vec<String>,
    },
    #[error("{path}: cannot decode payload: {message}")]
    Decode { path: PathBuf, message: String },
}

/// Ids of the artifact schemas, without the shared definitions.
pub fn schema_ids() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(id, _)| *id).filter(|id| *id != "common")
}

pub fn schema_source(schema_id: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(id, _)| *id == schema_id).map(|(_, s)| *s)
}

struct Embedded;

impl Retrieve for Embedded {
    fn retrieve(&self, uri: &Uri<String>) -> Result<Value, Box<dyn std::error::Error + Send + Sync>> {
        let name = uri
            .as_str()
            .strip_prefix(BASE_URI)
            .and_then(|rest| rest.strip_suffix(".json"))
            .ok_or_else(|| format!("no embedded schema at {}", uri.as_str()))?;
        let source = schema_source(name).ok_or_else(|| format!("no embedded schema `{name}`"))?;
        Ok(serde_json::from_str(source)?)
    }
}

fn validators() -> &'static BTreeMap<&'static str, Validator> {
    static VALIDATORS: OnceLock<BTreeMap<&'static str, Validator>> = OnceLock::new();
    VALIDATORS.get_or_init(|| {
        schema_ids()
            .map(|id| {
                let schema: Value = serde_json::from_str(schema_source(id).expect("listed")).expect("bundled schema is JSON");
                let validator = jsonschema::options()
                    .with_retriever(Embedded)
                    .build(&schema)
                    .unwrap_or_else(|e| panic!("bundled schema `{id}` is invalid: {e}"));
                (id, validator)
            })
            .collect()
    })
}

/// `/mrs/0/req_ids` becomes `.mrs[0].req_ids`; the root is `.`.
fn pointer_to_path(pointer: &str) -> String {
    let mut out = String::new();
    for segment in pointer.split('/').skip(1) {
        let segment = segment.replace("~1", "/").replace("~0", "~");
        if !segment.is_empty() && segment.bytes().all(|b| b.is_ascii_digit()) {
            let _ = write!(out, "[{segment}]");
        } else {
            let _ = write!(out, ".{segment}");
        }
    }
    if out.is_empty() {
        out.push('.');
    }
    out
}

fn join(path: &str, field: &str) -> String {
    if path == "." {
        format!(".{field}")
    } else {
        format!("{path}.{field}")
    }
}

/// Schema violations of a bare payload.
pub fn validate_payload(payload: &Value, schema_id: &str) -> Result<Vec<String>, UnknownSchema> {
    let validator = validators()
        .get(schema_id)
        .ok_or_else(|| UnknownSchema(schema_id.to_string()))?;
    let mut out: Vec<String> = validator
        .iter_errors(payload)
        .flat_map(|error| {
            let path = pointer_to_path(error.instance_path().as_str());
            match error.kind() {
                ValidationErrorKind::Required { property } => {
                    let name = property.as_str().map_or_else(|| property.to_string(), str::to_string);
                    vec![format!("{}: missing", join(&path, &name))]
                }
                ValidationErrorKind::AdditionalProperties { unexpected } => unexpected
                    .iter()
                    .map(|name| format!("{}: unknown field", join(&path, name)))
                    .collect(),
                _ => vec![format!("{path}: {error}")],
            }
        })
        .collect();
    out.sort();
    out.dedup();
    Ok(out)
}

/// Violations of a whole document: envelope checks, then the payload with
/// paths relative to the payload. Same-major versions are accepted.
pub fn validate(document: &Value, schema_id: &str) -> Result<Vec<String>, UnknownSchema> {
    if !validators().contains_key(schema_id) {
        return Err(UnknownSchema(schema_id.to_string()));
    }
    let Some(object) = document.as_object() else {
        return Ok(vec![".: expected a document object".into()]);
    };
    let mut out = Vec::new();
    match object.get("schema_id").and_then(Value::as_str) {
        Some(id) if id == schema_id => {}
        Some(id) => out.push(format!(".schema_id: expected `{schema_id}`, found `{id}`")),
        None => out.push(".schema_id: missing".into()),
    }
    match object.get("version").and_then(Value::as_str) {
        Some(v) if v.split('.').next() == SCHEMA_VERSION.split('.').next() => {}
        Some(v) => out.push(format!(".version: unsupported version `{v}`")),
        None => out.push(".version: missing".into()),
    }
    for key in object.keys() {
        if !matches!(key.as_str(), "schema_id" | "version" | "payload") {
            out.push(format!(".{key}: unknown field"));
        }
    }
    match object.get("payload") {
        Some(payload) => out.extend(validate_payload(payload, schema_id)?),
        None => out.push(".payload: missing".into()),
    }
    Ok(out)
}

fn check_finite(value: &serde_value::Value, path: &mut String) -> Result<(), CanonicalError> {
    use serde_value::Value as V;
    match value {
        V::F32(x) if !x.is_finite() => Err(CanonicalError::NonFiniteValue { path: root_dot(path) }),
        V::F64(x) if !x.is_finite() => Err(CanonicalError::NonFiniteValue { path: root_dot(path) }),
        V::Option(Some(inner)) | V::Newtype(inner) => check_finite(inner, path),
        V::Seq(items) => {
            for (i, item) in items.iter().enumerate() {
                let len = path.len();
                let _ = write!(path, "[{i}]");
                check_finite(item, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        V::Map(map) => {
            for (key, item) in map {
                let len = path.len();
                match key {
                    V::String(k) => {
                        let _ = write!(path, ".{k}");
                    }
                    other => {
                        let _ = write!(path, ".{other:?}");
                    }
                }
                check_finite(item, path)?;
                path.truncate(len);
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn root_dot(path: &str) -> String {
    if path.is_empty() {
        ".".into()
    } else {
        path.to_string()
    }
}

/// JSON value of `value`, refusing NaN and infinities instead of turning
/// them into `null`.
pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> Result<Value, CanonicalError> {
    let intermediate = serde_value::to_value(value).map_err(|e| CanonicalError::Serialize(e.to_string()))?;
    check_finite(&intermediate, &mut String::new())?;
    serde_json::to_value(&intermediate).map_err(|e| CanonicalError::Serialize(e.to_string()))
}

fn emit(value: &Value, indent: usize, out: &mut String) {
    const STEP: usize = 2;
    match value {
        Value::Array(items) if !items.is_empty() => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                out.push_str(if i == 0 { "\n" } else { ",\n" });
                out.extend(std::iter::repeat_n(' ', indent + STEP));
                emit(item, indent + STEP, out);
            }
            out.push('\n');
            out.extend(std::iter::repeat_n(' ', indent));
            out.push(']');
        }
        Value::Object(map) if !map.is_empty() => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                out.push_str(if i == 0 { "\n" } else { ",\n" });
                out.extend(std::iter::repeat_n(' ', indent + STEP));
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                emit(&map[key], indent + STEP, out);
            }
            out.push('\n');
            out.extend(std::iter::repeat_n(' ', indent));
            out.push('}');
        }
        // Scalars and empty containers; numbers print in shortest
        // round-trip form.
        other => out.push_str(&other.to_string()),
    }
}

/// Canonical text of a JSON value, newline-terminated.
pub fn canonical_string(value: &Value) -> String {
    let mut out = String::new();
    emit(value, 0, &mut out);
    out.push('\n');
    out
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    Ok(canonical_string(&to_canonical_value(value)?))
}

/// Canonical bytes of the document wrapping `payload`, checked against its
/// schema.
pub fn document_bytes<T: Serialize + ?Sized>(schema_id: &str, payload: &T) -> Result<Vec<u8>, ArtifactError> {
    let payload = to_canonical_value(payload)?;
    let violations = validate_payload(&payload, schema_id)?;
    if !violations.is_empty() {
        return Err(ArtifactError::Invalid {
            path: PathBuf::new(),
            schema_id: schema_id.into(),
            violations,
        });
    }
    let document = serde_json::json!({
        "schema_id": schema_id,
        "version": SCHEMA_VERSION,
        "payload": payload,
    });
    Ok(canonical_string(&document).into_bytes())
}

pub fn write_document<T: Serialize + ?Sized>(path: &Path, schema_id: &str, payload: &T) -> Result<(), ArtifactError> {
    let bytes = document_bytes(schema_id, payload).map_err(|e| match e {
        ArtifactError::Invalid {
            schema_id, violations, ..
        } => ArtifactError::Invalid {
            path: path.to_path_buf(),
            schema_id,
            violations,
        },
        other => other,
    })?;
    let io = |e: std::io::Error| ArtifactError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

pub fn read_document<T: DeserializeOwned>(path: &Path, schema_id: &str) -> Result<T, ArtifactError> {
    let text = fs::read_to_string(path).map_err(|e| ArtifactError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let document: Value = serde_json::from_str(&text).map_err(|e| ArtifactError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let violations = validate(&document, schema_id)?;
    if !violations.is_empty() {
        return Err(ArtifactError::Invalid {
            path: path.to_path_buf(),
            schema_id: schema_id.into(),
            violations,
        });
    }
    serde_json::from_value(document["payload"].clone()).map_err(|e| ArtifactError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
