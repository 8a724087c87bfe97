use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Argument, Dataset, RelationInstance};
use crate::bpe::UNK_MASK;
use crate::error::{Error, Result};

/// How argument mentions are hidden from the classifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingStrategy {
    #[default]
    None,
    Unk,
    Ne,
    Gr,
    NeGr,
}

impl MaskingStrategy {
    pub const ALL: [MaskingStrategy; 5] = [
        MaskingStrategy::None,
        MaskingStrategy::Unk,
        MaskingStrategy::Ne,
        MaskingStrategy::Gr,
        MaskingStrategy::NeGr,
    ];

    pub fn needs_types(self) -> bool {
        matches!(self, MaskingStrategy::Ne | MaskingStrategy::NeGr)
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskingStrategy::None => "none",
            MaskingStrategy::Unk => "unk",
            MaskingStrategy::Ne => "ne",
            MaskingStrategy::Gr => "gr",
            MaskingStrategy::NeGr => "ne_gr",
        }
    }
}

impl fmt::Display for MaskingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskingStrategy::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Input(format!("unknown masking strategy `{s}`")))
    }
}

/// The single reserved token that replaces `arg` under `strategy`, or `None`
/// for [`MaskingStrategy::None`].
pub fn mask_token(arg: &Argument, strategy: MaskingStrategy) -> Result<Option<String>> {
    let entity_type = || {
        arg.entity_type
            .as_deref()
            .map(str::to_ascii_uppercase)
            .ok_or_else(|| Error::Strategy {
                strategy: strategy.to_string(),
                reason: "argument has no entity type".into(),
            })
    };
    Ok(match strategy {
        MaskingStrategy::None => None,
        MaskingStrategy::Unk => Some(UNK_MASK.to_string()),
        MaskingStrategy::Ne => Some(format!("<{}>", entity_type()?)),
        MaskingStrategy::Gr => Some(format!("<{}>", arg.role.tag())),
        MaskingStrategy::NeGr => Some(format!("<{}-{}>", arg.role.tag(), entity_type()?)),
    })
}

/// Replaces each argument span with exactly one mask token and shifts the
/// spans accordingly. Identity for [`MaskingStrategy::None`].
pub fn apply_masking(inst: &RelationInstance, strategy: MaskingStrategy) -> Result<RelationInstance> {
    let (Some(m1), Some(m2)) = (mask_token(&inst.arg1, strategy)?, mask_token(&inst.arg2, strategy)?) else {
        return Ok(inst.clone());
    };
    let mut args = [(&inst.arg1, m1, 0usize), (&inst.arg2, m2, 1usize)];
    args.sort_by_key(|(a, _, _)| a.start);

    let mut tokens = Vec::with_capacity(inst.tokens.len());
    let mut new_pos = [0usize; 2];
    let mut cursor = 0;
    for (arg, mask, which) in &args {
        tokens.extend_from_slice(&inst.tokens[cursor..arg.start]);
        new_pos[*which] = tokens.len();
        tokens.push(mask.clone());
        cursor = arg.end + 1;
    }
    tokens.extend_from_slice(&inst.tokens[cursor..]);

    let relocate = |arg: &Argument, pos: usize| Argument {
        start: pos,
        end: pos,
        ..arg.clone()
    };
    Ok(RelationInstance {
        tokens,
        arg1: relocate(&inst.arg1, new_pos[0]),
        arg2: relocate(&inst.arg2, new_pos[1]),
        label: inst.label.clone(),
    })
}

pub fn mask_dataset(ds: &Dataset, strategy: MaskingStrategy) -> Result<Dataset> {
    let instances = ds
        .instances
        .iter()
        .enumerate()
        .map(|(index, inst)| {
            apply_masking(inst, strategy).map_err(|e| match e {
                e @ Error::Strategy { .. } => e,
                other => Error::Record {
                    index,
                    msg: other.to_string(),
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok(ds.with_instances(instances))
}

/// Every mask token `strategy` produces on `datasets`, sorted.
pub fn mask_vocabulary<'a>(
    datasets: impl IntoIterator<Item = &'a Dataset>,
    strategy: MaskingStrategy,
) -> Result<Vec<String>> {
    let mut out = BTreeSet::new();
    for ds in datasets {
        for inst in &ds.instances {
            for arg in [&inst.arg1, &inst.arg2] {
                if let Some(tok) = mask_token(arg, strategy)? {
                    out.insert(tok);
                }
            }
        }
    }
    Ok(out.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Role;

    fn scheider() -> RelationInstance {
        let tokens = "Mr. Scheider played the police chief of a resort town"
            .split(' ')
            .map(String::from)
            .collect();
        RelationInstance {
            tokens,
            arg1: Argument {
                start: 1,
                end: 1,
                role: Role::Subject,
                entity_type: Some("PERSON".into()),
            },
            arg2: Argument {
                start: 4,
                end: 5,
                role: Role::Object,
                entity_type: Some("TITLE".into()),
            },
            label: "per:title".into(),
        }
    }

    #[test]
    fn none_is_identity() {
        assert_eq!(apply_masking(&scheider(), MaskingStrategy::None).unwrap(), scheider());
    }

    #[test]
    fn ne_gr_on_scheider() {
        let m = apply_masking(&scheider(), MaskingStrategy::NeGr).unwrap();
        assert_eq!(m.tokens[1], "<SUBJ-PERSON>");
        assert_eq!(m.tokens[4], "<OBJ-TITLE>");
        assert_eq!(m.tokens.len(), 9);
        assert_eq!((m.arg2.start, m.arg2.end), (4, 4));
        assert_eq!(m.tokens[5], "of");
        m.validate().unwrap();
    }

    #[test]
    fn each_strategy_uses_one_token_per_argument() {
        for s in MaskingStrategy::ALL {
            let m = apply_masking(&scheider(), s).unwrap();
            if s != MaskingStrategy::None {
                assert_eq!(m.arg1.len(), 1);
                assert_eq!(m.arg2.len(), 1);
            }
        }
        let gr = apply_masking(&scheider(), MaskingStrategy::Gr).unwrap();
        assert_eq!((gr.tokens[1].as_str(), gr.tokens[4].as_str()), ("<SUBJ>", "<OBJ>"));
        let ne = apply_masking(&scheider(), MaskingStrategy::Ne).unwrap();
        assert_eq!((ne.tokens[1].as_str(), ne.tokens[4].as_str()), ("<PERSON>", "<TITLE>"));
    }

    #[test]
    fn object_before_subject() {
        let mut inst = scheider();
        inst.arg1.start = 4;
        inst.arg1.end = 5;
        inst.arg2.start = 1;
        inst.arg2.end = 1;
        let m = apply_masking(&inst, MaskingStrategy::Unk).unwrap();
        assert_eq!((m.arg2.start, m.arg1.start), (1, 4));
    }

    #[test]
    fn ne_needs_types() {
        let mut inst = scheider();
        inst.arg1.entity_type = None;
        let err = apply_masking(&inst, MaskingStrategy::Ne).unwrap_err();
        assert!(matches!(err, Error::Strategy { .. }));
        assert!(apply_masking(&inst, MaskingStrategy::Gr).is_ok());
    }

    #[test]
    fn idempotent() {
        for s in MaskingStrategy::ALL {
            let once = apply_masking(&scheider(), s).unwrap();
            assert_eq!(apply_masking(&once, s).unwrap(), once, "{s}");
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("ne_gr".parse::<MaskingStrategy>().unwrap(), MaskingStrategy::NeGr);
        assert!("bogus".parse::<MaskingStrategy>().is_err());
    }
}
