//! TACRED JSON ingestion: an array of records with `token`,
//! `subj_start`/`subj_end`, `obj_start`/`obj_end` (inclusive), `subj_type`,
//! `obj_type` and `relation`. Other fields (POS, dependency heads, ...) are
//! ignored.

use std::path::Path;

use serde::Deserialize;

use super::{Argument, Dataset, Format, RelationInstance, Role};
use crate::error::{Error, Result};

pub const NO_RELATION: &str = "no_relation";

#[derive(Deserialize)]
struct Record {
    token: Vec<String>,
    subj_start: usize,
    subj_end: usize,
    obj_start: usize,
    obj_end: usize,
    subj_type: String,
    obj_type: String,
    relation: String,
}

pub fn parse_tacred(text: &str, origin: &Path) -> Result<Dataset> {
    let records: Vec<serde_json::Value> = serde_json::from_str(text)
        .map_err(|e| Error::parse(origin, e.line(), format!("expected a JSON array of records: {e}")))?;
    let mut instances = Vec::with_capacity(records.len());
    for (index, value) in records.into_iter().enumerate() {
        let rec: Record = serde_json::from_value(value).map_err(|e| Error::Record {
            index,
            msg: e.to_string(),
        })?;
        let inst = RelationInstance {
            tokens: rec.token,
            arg1: Argument {
                start: rec.subj_start,
                end: rec.subj_end,
                role: Role::Subject,
                entity_type: Some(rec.subj_type),
            },
            arg2: Argument {
                start: rec.obj_start,
                end: rec.obj_end,
                role: Role::Object,
                entity_type: Some(rec.obj_type),
            },
            label: rec.relation,
        };
        inst.validate().map_err(|e| Error::Record {
            index,
            msg: e.to_string(),
        })?;
        instances.push(inst);
    }
    let labels: Vec<String> = instances.iter().map(|i| i.label.clone()).collect();
    Dataset::new(Format::Tacred, labels, instances)
}

pub fn load_tacred(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tacred(&text, path)
}

/// Writes instances in the same JSON layout [`load_tacred`] reads.
pub fn to_tacred_json(dataset: &Dataset) -> Result<String> {
    let records: Vec<serde_json::Value> = dataset
        .instances
        .iter()
        .map(|inst| {
            let (subj, obj) = (&inst.arg1, &inst.arg2);
            serde_json::json!({
                "token": inst.tokens,
                "subj_start": subj.start,
                "subj_end": subj.end,
                "obj_start": obj.start,
                "obj_end": obj.end,
                "subj_type": subj.entity_type.clone().unwrap_or_default(),
                "obj_type": obj.entity_type.clone().unwrap_or_default(),
                "relation": inst.label,
            })
        })
        .collect();
    serde_json::to_string_pretty(&records).map_err(|e| Error::Input(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        parse_tacred(text, Path::new("t.json"))
    }

    #[test]
    fn ignores_extra_fields() {
        let ds = parse(
            r#"[{"id": "x", "token": ["Mr.", "Scheider", "played", "the", "police", "chief"],
                 "subj_start": 1, "subj_end": 1, "obj_start": 4, "obj_end": 5,
                 "subj_type": "PERSON", "obj_type": "TITLE", "relation": "per:title",
                 "stanford_pos": ["NNP"], "stanford_head": [2]}]"#,
        )
        .unwrap();
        let inst = &ds.instances[0];
        assert_eq!(inst.arg_tokens(&inst.arg2), ["police", "chief"]);
        assert!(ds.label_id(NO_RELATION).is_some());
    }

    #[test]
    fn missing_field_names_the_record() {
        let err = parse(
            r#"[{"token": ["a", "b"], "subj_start": 0, "subj_end": 0, "obj_start": 1, "obj_end": 1,
                 "subj_type": "PERSON", "obj_type": "TITLE", "relation": "per:title"},
                {"token": ["a", "b"], "subj_start": 0, "subj_end": 0, "obj_start": 1,
                 "subj_type": "PERSON", "obj_type": "TITLE", "relation": "per:title"}]"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Record { index: 1, .. }), "{err}");
        assert!(err.to_string().contains("obj_end"));
    }

    #[test]
    fn reversed_span_rejected() {
        let err = parse(
            r#"[{"token": ["a", "b", "c"], "subj_start": 1, "subj_end": 0, "obj_start": 2, "obj_end": 2,
                 "subj_type": "PERSON", "obj_type": "TITLE", "relation": "per:title"}]"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Record { index: 0, .. }));
    }

    #[test]
    fn out_of_bounds_span_rejected() {
        let err = parse(
            r#"[{"token": ["a"], "subj_start": 0, "subj_end": 0, "obj_start": 1, "obj_end": 1,
                 "subj_type": "PERSON", "obj_type": "TITLE", "relation": "per:title"}]"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("out of bounds"));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"[{"token": ["A", "works", "at", "B"], "subj_start": 0, "subj_end": 0,
            "obj_start": 3, "obj_end": 3, "subj_type": "PERSON", "obj_type": "ORGANIZATION",
            "relation": "per:employee_of"}]"#;
        let ds = parse(text).unwrap();
        let again = parse(&to_tacred_json(&ds).unwrap()).unwrap();
        assert_eq!(ds, again);
    }
}
