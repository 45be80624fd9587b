//! Systems under test behind one simulation interface.

pub mod bridge;
pub mod loc;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{parse_model_description, InterfaceSpec};
use crate::signals::{GridError, SignalBundle};

pub use bridge::{BridgeClient, BridgeProcess, PROTOCOL_VERSION};
pub use loc::{LocParams, LocSimulator, LocState};

/// modelDescription.xml of the built-in lubricating-oil-cooling model.
pub const LOC_MODEL_DESCRIPTION: &str = include_str!("../../assets/loc/modelDescription.xml");
pub const LOC_PARAMETERS: &str = include_str!("../../assets/loc/parameters.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("bridge is not running: {0}")]
    BridgeDown(String),
    #[error("bridge handshake failed: {0}")]
    HandshakeFailed(String),
    #[error("bad FMU: {0}")]
    BadFmu(String),
    #[error("bridge protocol violation: {0}")]
    Protocol(String),
    #[error("bridge reported {code}: {message}")]
    Remote { code: String, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SutError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("interface mismatch: {0}")]
    InterfaceMismatch(String),
    #[error("simulation diverged at t={time}: {message}")]
    Numeric { time: f64, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    BuiltinLoc,
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SutDescriptor {
    pub id: String,
    pub interface: InterfaceSpec,
    pub backend: BackendKind,
}

pub trait Simulator: Send {
    fn descriptor(&self) -> &SutDescriptor;

    /// Simulates on the grid of `inputs`; the result holds every output.
    fn simulate(&mut self, inputs: &SignalBundle) -> Result<SignalBundle, SutError>;
}

/// Where a system under test comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SutRef {
    BuiltinLoc,
    Bridge { fmu: PathBuf, command: Vec<String> },
}

/// Command used to start the bridge when `MRFLOW_BRIDGE` is unset.
pub const DEFAULT_BRIDGE_COMMAND: &str = "python3 -m fmu_bridge";

impl SutRef {
    /// `builtin:loc`, `fmu:<path>` or a bare path to a `.fmu` file. The bridge
    /// command is taken from `MRFLOW_BRIDGE`, split on whitespace.
    pub fn parse(locator: &str) -> Result<Self, String> {
        if locator == "builtin:loc" {
            return Ok(SutRef::BuiltinLoc);
        }
        let path = locator.strip_prefix("fmu:").unwrap_or(locator);
        if locator.starts_with("fmu:") || path.ends_with(".fmu") {
            let command = std::env::var("MRFLOW_BRIDGE").unwrap_or_else(|_| DEFAULT_BRIDGE_COMMAND.into());
            return Ok(SutRef::Bridge {
                fmu: PathBuf::from(path),
                command: command.split_whitespace().map(String::from).collect(),
            });
        }
        Err(format!("unknown SUT `{locator}`; expected builtin:loc or fmu:<path>"))
    }

    pub fn locator(&self) -> String {
        match self {
            SutRef::BuiltinLoc => "builtin:loc".into(),
            SutRef::Bridge { fmu, .. } => format!("fmu:{}", fmu.display()),
        }
    }

    /// Opens a fresh handle. Each parallel worker opens its own.
    pub fn open(&self) -> Result<Box<dyn Simulator>, SutError> {
        match self {
            SutRef::BuiltinLoc => Ok(Box::new(LocSimulator::new()?)),
            SutRef::Bridge { fmu, command } => Ok(Box::new(BridgeProcess::spawn(command, fmu)?)),
        }
    }
}

pub fn loc_interface() -> InterfaceSpec {
    parse_model_description(LOC_MODEL_DESCRIPTION.as_bytes()).expect("bundled model description is valid")
}

/// Inputs must cover every interface input and nothing else.
pub fn check_inputs(interface: &InterfaceSpec, inputs: &SignalBundle) -> Result<(), SutError> {
    inputs.validate()?;
    for spec in interface.inputs() {
        if !inputs.contains(&spec.name) {
            return Err(SutError::InterfaceMismatch(format!("missing input trace `{}`", spec.name)));
        }
    }
    if let Some(extra) = inputs
        .vars()
        .find(|var| interface.variable(var).is_none_or(|v| !v.is_input()))
    {
        return Err(SutError::InterfaceMismatch(format!("`{extra}` is not an input")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locators() {
        assert_eq!(SutRef::parse("builtin:loc"), Ok(SutRef::BuiltinLoc));
        assert!(matches!(SutRef::parse("fmu:/tmp/a.fmu"), Ok(SutRef::Bridge { .. })));
        assert!(matches!(SutRef::parse("models/b.fmu"), Ok(SutRef::Bridge { .. })));
        assert!(SutRef::parse("builtin:pump").is_err());
        assert_eq!(SutRef::BuiltinLoc.locator(), "builtin:loc");
    }

    #[test]
    fn missing_fmu_is_bad_fmu() {
        let r = SutRef::Bridge {
            fmu: PathBuf::from("/nonexistent/model.fmu"),
            command: vec!["true".into()],
        };
        assert!(matches!(r.open(), Err(SutError::Backend(BackendError::BadFmu(_)))));
    }
}
