use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Subject,
    Object,
}

impl Role {
    pub fn tag(self) -> &'static str {
        match self {
            Role::Subject => "SUBJ",
            Role::Object => "OBJ",
        }
    }
}

/// One relation argument: an inclusive token span plus its role and
/// optional entity type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub start: usize,
    pub end: usize,
    pub role: Role,
    pub entity_type: Option<String>,
}

impl Argument {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn overlaps(&self, other: &Argument) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub tokens: Vec<String>,
    /// The subject-role argument; it leads the assembled input.
    pub arg1: Argument,
    pub arg2: Argument,
    pub label: String,
}

impl RelationInstance {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        for (name, arg) in [("arg1", &self.arg1), ("arg2", &self.arg2)] {
            if arg.end < arg.start {
                return Err(Error::Input(format!(
                    "{name} span ends at {} before it starts at {}",
                    arg.end, arg.start
                )));
            }
            if arg.end >= n {
                return Err(Error::Input(format!(
                    "{name} span {}..={} out of bounds for {n} tokens",
                    arg.start, arg.end
                )));
            }
        }
        if self.arg1.overlaps(&self.arg2) {
            return Err(Error::Input("argument spans overlap".into()));
        }
        if self.arg1.role == self.arg2.role {
            return Err(Error::Input("arguments share the same role".into()));
        }
        Ok(())
    }

    pub fn arg_tokens(&self, arg: &Argument) -> &[String] {
        &self.tokens[arg.start..=arg.end]
    }

    pub fn sentence(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tacred,
    Semeval,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tacred" => Ok(Format::Tacred),
            "semeval" => Ok(Format::Semeval),
            other => Err(Error::Input(format!("unknown dataset format `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Tacred => "tacred",
            Format::Semeval => "semeval",
        })
    }
}

impl Format {
    pub fn negative_label(self) -> &'static str {
        match self {
            Format::Tacred => super::tacred::NO_RELATION,
            Format::Semeval => super::semeval::OTHER,
        }
    }
}

/// Instances plus the closed label set they draw from.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub format: Format,
    pub labels: Vec<String>,
    pub instances: Vec<RelationInstance>,
}

impl Dataset {
    /// Builds a dataset whose label set is `labels` (sorted, deduplicated)
    /// extended with the format's negative label.
    pub fn new(
        format: Format,
        labels: impl IntoIterator<Item = String>,
        instances: Vec<RelationInstance>,
    ) -> Result<Self> {
        let mut labels: Vec<String> = labels.into_iter().collect();
        labels.push(format.negative_label().to_string());
        labels.sort();
        labels.dedup();
        let ds = Dataset {
            format,
            labels,
            instances,
        };
        for (i, inst) in ds.instances.iter().enumerate() {
            inst.validate().map_err(|e| Error::Record {
                index: i,
                msg: e.to_string(),
            })?;
            if ds.label_id(&inst.label).is_none() {
                return Err(Error::Record {
                    index: i,
                    msg: format!("label `{}` outside the label set", inst.label),
                });
            }
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn negative_label(&self) -> &'static str {
        self.format.negative_label()
    }

    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for inst in &self.instances {
            *counts.entry(inst.label.clone()).or_default() += 1;
        }
        counts
    }

    pub fn negative_fraction(&self) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        let neg = self
            .instances
            .iter()
            .filter(|i| i.label == self.negative_label())
            .count();
        neg as f64 / self.instances.len() as f64
    }

    /// Same label set, different instances.
    pub fn with_instances(&self, instances: Vec<RelationInstance>) -> Dataset {
        Dataset {
            format: self.format,
            labels: self.labels.clone(),
            instances,
        }
    }

    /// Concatenates datasets of the same format, unioning label sets.
    pub fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
        let format = parts
            .first()
            .map(|d| d.format)
            .ok_or_else(|| Error::Input("no datasets to concatenate".into()))?;
        let mut labels = Vec::new();
        let mut instances = Vec::new();
        for part in parts {
            if part.format != format {
                return Err(Error::Input("cannot mix dataset formats".into()));
            }
            labels.extend(part.labels);
            instances.extend(part.instances);
        }
        Dataset::new(format, labels, instances)
    }
}
