//! Metamorphic testing engine for FMU-style dynamic simulation models.
//!
//! The pipeline extracts an interface and requirements, proposes
//! Given/When/Then metamorphic relations, turns them into time-series tests,
//! runs them against a simulator and grades the suite with output mutation.

pub mod extraction;
pub mod generation;
pub mod mr;
pub mod mutation;
pub mod relations;
pub mod reporting;
pub mod schema;
pub mod signals;
pub mod sut;
pub mod workflow;

/// Requirements for the built-in lubricating-oil-cooling model.
pub mod fixtures {
    use crate::extraction::{build_extraction_output, load_requirements, ExtractionOutput};

    pub const LOC_REQUIREMENTS: &str = include_str!("../../../fixtures/loc_requirements.md");

    pub fn loc_extraction() -> ExtractionOutput {
        let requirements = load_requirements(LOC_REQUIREMENTS).expect("bundled requirements parse");
        build_extraction_output(&crate::sut::loc_interface(), &requirements).expect("bundled requirements match the model")
    }
}
