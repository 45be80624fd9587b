//! Tagged-block requirements documents.
//!
//! ````text
//! ```[REQ category=behavioral inputs=engine_load outputs=position_valve direction=increases]
//! An increase in engine load shall open the cooler valve further.
//! ```
//! ````
//!
//! `[INIT]` blocks hold `name = value` lines and `[SUMMARY]` blocks the system
//! summary. Untagged fences and prose are ignored, except that the first prose
//! paragraph stands in for a missing summary.

use std::collections::BTreeMap;

use super::{ConditionCategory, Direction, ExtractionError, TestCondition, VariableRelationship};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RequirementsDocument {
    pub system_summary: String,
    pub test_conditions: Vec<TestCondition>,
    pub relationships: Vec<VariableRelationship>,
    pub initial_conditions: BTreeMap<String, f64>,
}

struct Block<'a> {
    tag: &'a str,
    tag_line: usize,
    body: &'a str,
}

pub fn load_requirements(doc: &str) -> Result<RequirementsDocument, ExtractionError> {
    let (blocks, first_paragraph) = split_blocks(doc)?;
    let mut out = RequirementsDocument::default();
    let mut summary = None;

    for block in blocks {
        let (kind, attrs) = parse_tag(block.tag, block.tag_line)?;
        match kind {
            "REQ" => add_requirement(&mut out, &block, attrs)?,
            "INIT" => {
                for (offset, line) in block.body.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let err = |cause: &str| ExtractionError::Parse {
                        line: block.tag_line + 1 + offset,
                        cause: cause.to_string(),
                    };
                    let (name, value) = line
                        .split_once('=')
                        .ok_or_else(|| err("expected `name = value`"))?;
                    let value: f64 = value
                        .trim()
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| err("initial value is not a finite number"))?;
                    out.initial_conditions.insert(name.trim().to_string(), value);
                }
            }
            "SUMMARY" => summary = Some(collapse(block.body)),
            other => {
                return Err(ExtractionError::Parse {
                    line: block.tag_line,
                    cause: format!("unknown block tag `{other}`"),
                })
            }
        }
    }

    if out.test_conditions.is_empty() {
        return Err(ExtractionError::EmptyRequirements);
    }
    out.system_summary = summary.or(first_paragraph).unwrap_or_default();
    Ok(out)
}

fn add_requirement(
    out: &mut RequirementsDocument,
    block: &Block<'_>,
    attrs: Vec<(&str, &str)>,
) -> Result<(), ExtractionError> {
    let err = |cause: String| ExtractionError::Parse {
        line: block.tag_line,
        cause,
    };
    let mut category = ConditionCategory::Other;
    let mut inputs = None;
    let mut outputs = None;
    let mut direction = None;
    for (key, value) in attrs {
        match key {
            "category" => {
                category = ConditionCategory::parse(value)
                    .ok_or_else(|| err(format!("unknown category `{value}`")))?
            }
            "inputs" => inputs = Some(split_list(value)),
            "outputs" => outputs = Some(split_list(value)),
            "direction" => {
                direction = Some(
                    Direction::parse(value)
                        .ok_or_else(|| err(format!("unknown direction `{value}`")))?,
                )
            }
            other => return Err(err(format!("unknown attribute `{other}`"))),
        }
    }
    let evidence = block.body.trim();
    if evidence.is_empty() {
        return Err(err("requirement block has no statement".into()));
    }
    let tc_id = format!("TC{:03}", out.test_conditions.len() + 1);
    let text = collapse(evidence);

    match (inputs, outputs, direction) {
        (None, None, None) => {}
        (Some(inputs), Some(outputs), Some(direction)) => {
            if inputs.is_empty() || outputs.is_empty() {
                return Err(err("relationship needs at least one input and output".into()));
            }
            out.relationships.push(VariableRelationship {
                id: format!("VR{:03}", out.relationships.len() + 1),
                inputs,
                outputs,
                direction,
                statement: text.clone(),
                test_condition: Some(tc_id.clone()),
            });
        }
        _ => {
            return Err(err(
                "inputs, outputs and direction must be given together".into(),
            ))
        }
    }

    out.test_conditions.push(TestCondition {
        id: tc_id,
        text,
        category,
        evidence: evidence.to_string(),
    });
    Ok(())
}

/// Splits the document into tagged fenced blocks, returning the first prose
/// paragraph alongside.
fn split_blocks(doc: &str) -> Result<(Vec<Block<'_>>, Option<String>), ExtractionError> {
    let mut blocks = Vec::new();
    let mut paragraph: Vec<&str> = Vec::new();
    let mut first_paragraph = None;
    let mut open: Option<(Option<&str>, usize, usize)> = None;
    let mut offset = 0;

    for (index, raw_line) in doc.split_inclusive('\n').enumerate() {
        let line_no = index + 1;
        let line = raw_line.trim_end_matches(['\n', '\r']);
        let line_start = offset;
        offset += raw_line.len();
        let trimmed = line.trim();

        if let Some((tag, tag_line, body_start)) = open {
            if trimmed == "```" {
                if let Some(tag) = tag {
                    blocks.push(Block {
                        tag,
                        tag_line,
                        body: &doc[body_start..line_start],
                    });
                }
                open = None;
            }
            continue;
        }

        if let Some(info) = trimmed.strip_prefix("```") {
            let info = info.trim();
            let tag = (info.starts_with('[') && info.ends_with(']'))
                .then(|| &info[1..info.len() - 1]);
            open = Some((tag, line_no, offset));
            flush_paragraph(&mut paragraph, &mut first_paragraph);
            continue;
        }

        if trimmed.is_empty() || trimmed.starts_with('#') {
            flush_paragraph(&mut paragraph, &mut first_paragraph);
        } else {
            paragraph.push(trimmed);
        }
    }
    if let Some((_, tag_line, _)) = open {
        return Err(ExtractionError::Parse {
            line: tag_line,
            cause: "unterminated fenced block".into(),
        });
    }
    flush_paragraph(&mut paragraph, &mut first_paragraph);
    Ok((blocks, first_paragraph))
}

fn flush_paragraph(paragraph: &mut Vec<&str>, first: &mut Option<String>) {
    if !paragraph.is_empty() && first.is_none() {
        *first = Some(paragraph.join(" "));
    }
    paragraph.clear();
}

fn parse_tag(tag: &str, line: usize) -> Result<(&str, Vec<(&str, &str)>), ExtractionError> {
    let mut parts = tag.split_whitespace();
    let kind = parts.next().ok_or_else(|| ExtractionError::Parse {
        line,
        cause: "empty block tag".into(),
    })?;
    let attrs = parts
        .map(|part| {
            part.split_once('=')
                .filter(|(k, v)| !k.is_empty() && !v.is_empty())
                .ok_or_else(|| ExtractionError::Parse {
                    line,
                    cause: format!("malformed attribute `{part}`"),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((kind, attrs))
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "\
# Pump

The pump moves water.

```[REQ category=behavioral inputs=speed outputs=flow direction=increases]
Higher speed gives
more flow.
```

```[REQ category=performance]
Flow settles in 10 s.
```

```rust
fn not_a_requirement() {}
```

```[REQ]
The casing is blue.
```
";

    #[test]
    fn ids_follow_document_order() {
        let doc = load_requirements(THREE).unwrap();
        let ids: Vec<_> = doc.test_conditions.iter().map(|tc| tc.id.as_str()).collect();
        assert_eq!(ids, ["TC001", "TC002", "TC003"]);
        assert_eq!(doc.test_conditions[0].text, "Higher speed gives more flow.");
        assert_eq!(doc.test_conditions[2].category, ConditionCategory::Other);
        assert_eq!(doc.relationships.len(), 1);
        assert_eq!(doc.relationships[0].id, "VR001");
        assert_eq!(doc.relationships[0].test_condition.as_deref(), Some("TC001"));
        assert_eq!(doc.system_summary, "The pump moves water.");
    }

    #[test]
    fn evidence_is_verbatim_substring() {
        let doc = load_requirements(THREE).unwrap();
        for tc in &doc.test_conditions {
            assert!(THREE.contains(&tc.evidence), "{}", tc.evidence);
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "text\n\n```[REQ category=sideways]\nx\n```\n";
        assert_eq!(
            load_requirements(bad),
            Err(ExtractionError::Parse {
                line: 3,
                cause: "unknown category `sideways`".into()
            })
        );
        let partial = "```[REQ inputs=a]\nx\n```\n";
        assert!(matches!(load_requirements(partial), Err(ExtractionError::Parse { line: 1, .. })));
        let open = "```[REQ]\nx\n";
        assert!(matches!(load_requirements(open), Err(ExtractionError::Parse { line: 1, .. })));
        assert_eq!(load_requirements("just prose\n"), Err(ExtractionError::EmptyRequirements));
    }

    #[test]
    fn init_and_summary_blocks() {
        let doc = load_requirements(
            "Prose first.\n\n```[SUMMARY]\nA  pump\nsystem.\n```\n```[INIT]\nspeed = 3.5\n# comment\nvalve=1\n```\n```[REQ]\nx\n```\n",
        )
        .unwrap();
        assert_eq!(doc.system_summary, "A pump system.");
        assert_eq!(doc.initial_conditions["speed"], 3.5);
        assert_eq!(doc.initial_conditions["valve"], 1.0);
        let bad = load_requirements("```[INIT]\nspeed 3\n```\n```[REQ]\nx\n```\n").unwrap_err();
        assert_eq!(
            bad,
            ExtractionError::Parse {
                line: 2,
                cause: "expected `name = value`".into()
            }
        );
    }

    #[test]
    fn bundled_loc_fixture_has_seventeen_requirements() {
        let doc = load_requirements(crate::fixtures::LOC_REQUIREMENTS).unwrap();
        assert_eq!(doc.test_conditions.len(), 17);
        assert_eq!(doc.test_conditions[16].id, "TC017");
    }
}
