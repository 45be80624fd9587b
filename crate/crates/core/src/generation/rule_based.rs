//! Deterministic provider that derives MRs directly from the extracted
//! variable relationships and tests from the seeded sampler.

use std::collections::{BTreeMap, BTreeSet};

use crate::extraction::{is_setpoint_name, Direction, ExtractionOutput, VariableRelationship};
use crate::mr::{
    mr_id, GivenClause, MetamorphicRelation, MrCategory, OutputRelation, RelationKind, ThenClause,
    Transform, TransformOp, WhenClause,
};

use super::{sampler, GenerationError, Provider, ProviderRequest, TestCase};

#[derive(Debug, Default, Clone)]
pub struct RuleBasedProvider;

impl Provider for RuleBasedProvider {
    fn name(&self) -> String {
        "rule-based".into()
    }

    fn propose_mrs(&mut self, request: &ProviderRequest<'_>) -> Result<Vec<MetamorphicRelation>, GenerationError> {
        let covered: BTreeSet<_> = request
            .history
            .iter()
            .flatten()
            .map(MetamorphicRelation::signature)
            .collect();
        let mut out = Vec::new();
        for vr in ordered_relationships(request.extraction) {
            let Some(mut mr) = mr_for_relationship(request.extraction, vr) else {
                continue;
            };
            if covered.contains(&mr.signature()) {
                continue;
            }
            mr.id = mr_id(out.len() + 1);
            out.push(mr);
            if out.len() == request.budget {
                break;
            }
        }
        if out.is_empty() {
            return Err(GenerationError::Exhausted);
        }
        Ok(out)
    }

    fn propose_tests(
        &mut self,
        request: &ProviderRequest<'_>,
        mr: &MetamorphicRelation,
    ) -> Result<Vec<TestCase>, GenerationError> {
        sampler::sample_tests(
            mr,
            request.extraction,
            &request.grid,
            request.budget,
            request.rng_seed,
        )
    }
}

/// Relationships sorted by the rank of the test condition they came from,
/// document order within a rank.
pub fn ordered_relationships(extraction: &ExtractionOutput) -> Vec<&VariableRelationship> {
    let mut vrs: Vec<_> = extraction.relationships.iter().collect();
    vrs.sort_by_key(|vr| extraction.relationship_category(vr).rank());
    vrs
}

fn setpoint_inputs(extraction: &ExtractionOutput) -> Vec<String> {
    extraction
        .variables
        .inputs()
        .filter(|v| is_setpoint_name(&v.name))
        .map(|v| v.name.clone())
        .collect()
}

/// Maps one relationship onto a Given/When/Then MR, or `None` when the
/// relationship has nothing that can be varied.
pub fn mr_for_relationship(extraction: &ExtractionOutput, vr: &VariableRelationship) -> Option<MetamorphicRelation> {
    let setpoints = setpoint_inputs(extraction);
    let (op, kind) = match vr.direction {
        Direction::Increases => (TransformOp::Increase, RelationKind::EventuallyIncreases),
        Direction::Decreases => (TransformOp::Increase, RelationKind::EventuallyDecreases),
        Direction::Proportional => (TransformOp::Scale, RelationKind::ProportionalTo),
        Direction::RegulatesToSetpoint => (TransformOp::Increase, RelationKind::SettlesWithin),
    };

    let transforms: Vec<Transform> = vr
        .inputs
        .iter()
        .map(|var| Transform {
            var: var.clone(),
            op: if setpoints.contains(var) { TransformOp::Hold } else { op },
            pattern_hint: None,
            magnitude_hint: None,
        })
        .collect();
    let varied = transforms.iter().any(|t| t.op != TransformOp::Hold);
    if !varied && vr.direction != Direction::RegulatesToSetpoint {
        return None;
    }

    let set_point = if kind == RelationKind::SettlesWithin {
        let source = vr
            .inputs
            .iter()
            .find(|i| setpoints.contains(i))
            .or_else(|| setpoints.first())?;
        Some(extraction.initial_value(source)?)
    } else {
        None
    };

    let initial: BTreeMap<String, f64> = extraction
        .variables
        .inputs()
        .filter_map(|v| extraction.initial_value(&v.name).map(|x| (v.name.clone(), x)))
        .collect();

    let category_source = extraction.relationship_category(vr);
    let category = MrCategory::from_condition(category_source).unwrap_or(MrCategory::Behavioral);
    let mut req_ids: Vec<String> = vr.test_condition.iter().cloned().collect();
    req_ids.push(vr.id.clone());

    Some(MetamorphicRelation {
        id: mr_id(1),
        req_ids,
        scenario: vr.statement.clone(),
        category,
        priority: category.priority(),
        given: GivenClause {
            initial,
            held_constant: setpoints.into_iter().collect(),
        },
        when: WhenClause { transforms },
        then: ThenClause {
            relations: vr
                .outputs
                .iter()
                .map(|var| OutputRelation {
                    set_point,
                    ..OutputRelation::new(var.clone(), kind)
                })
                .collect(),
        },
        refinement: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::generation::{generate_mrs, RequestKind};
    use crate::mr::{static_check, Outcome};
    use crate::relations::ToleranceConfig;
    use crate::signals::TimeGrid;

    fn request<'a>(ex: &'a ExtractionOutput, history: &'a [Vec<MetamorphicRelation>], budget: usize) -> ProviderRequest<'a> {
        ProviderRequest::new(
            RequestKind::MrGeneration,
            ex,
            history,
            budget,
            TimeGrid::new(0.0, 3000.0, 5.0).unwrap(),
            42,
            ToleranceConfig::default(),
        )
    }

    #[test]
    fn first_mr_targets_first_relationship() {
        let ex = fixtures::loc_extraction();
        let mrs = generate_mrs(&mut RuleBasedProvider, &request(&ex, &[], 5), 1).unwrap();
        assert_eq!(mrs.len(), 5);
        assert_eq!(mrs[0].req_ids, ["TC001", "VR001"]);
        let t = mrs[0].transform("engine_load").unwrap();
        assert_eq!(t.op, TransformOp::Increase);
        assert_eq!(mrs[0].then.relations[0].var, "temperature_oil");
        let ids: Vec<_> = mrs.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["MR001", "MR002", "MR003", "MR004", "MR005"]);
    }

    #[test]
    fn setpoint_relationship_holds_the_setpoint() {
        let ex = fixtures::loc_extraction();
        let mr = mr_for_relationship(&ex, &ex.relationships[0]).unwrap();
        let relation = &mr.then.relations[0];
        assert_eq!(relation.kind, RelationKind::SettlesWithin);
        assert_eq!(relation.set_point, Some(75.0));
        assert_eq!(mr.transform("setpoint_temperature_oil").unwrap().op, TransformOp::Hold);
        assert!(mr.given.held_constant.contains("setpoint_temperature_oil"));
    }

    #[test]
    fn every_rule_based_mr_passes_static_check() {
        let ex = fixtures::loc_extraction();
        for vr in &ex.relationships {
            let mr = mr_for_relationship(&ex, vr).unwrap();
            let findings = static_check(&mr, &ex);
            assert!(findings.iter().all(|f| f.outcome == Outcome::Ok), "{}: {findings:?}", vr.id);
        }
    }

    #[test]
    fn performance_relationship_comes_last() {
        let ex = fixtures::loc_extraction();
        let order: Vec<_> = ordered_relationships(&ex).iter().map(|vr| vr.id.as_str()).collect();
        assert_eq!(order.last(), Some(&"VR008"));
        let mrs = generate_mrs(&mut RuleBasedProvider, &request(&ex, &[], 20), 1).unwrap();
        assert_eq!(mrs.len(), 8);
        assert_eq!(mrs[7].category, MrCategory::Performance);
        assert_eq!(mrs[7].priority, 2);
    }

    #[test]
    fn covered_history_exhausts_the_provider() {
        let ex = fixtures::loc_extraction();
        let all = generate_mrs(&mut RuleBasedProvider, &request(&ex, &[], 20), 1).unwrap();
        let history = vec![all];
        assert_eq!(
            RuleBasedProvider.propose_mrs(&request(&ex, &history, 5)),
            Err(GenerationError::Exhausted)
        );
    }
}
