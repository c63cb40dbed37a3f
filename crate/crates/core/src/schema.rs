//! Label taxonomy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PRIORITY: &str = "Priority";
pub const NEEDS_REPLY: &str = "NeedsReply";
pub const IS_URGENT: &str = "IsUrgent";
pub const NEEDS_ACTION: &str = "NeedsAction";
pub const NEEDS_SCHEDULING: &str = "NeedsScheduling";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Arity {
    /// `1` means yes, `0` means no.
    Binary,
    Multiclass { classes: Vec<i32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelDef {
    pub name: String,
    pub arity: Arity,
}

impl LabelDef {
    pub fn binary(name: &str) -> Self {
        Self {
            name: name.to_string(),
            arity: Arity::Binary,
        }
    }

    pub fn multiclass(name: &str, classes: impl IntoIterator<Item = i32>) -> Self {
        Self {
            name: name.to_string(),
            arity: Arity::Multiclass {
                classes: classes.into_iter().collect(),
            },
        }
    }

    pub fn classes(&self) -> &[i32] {
        match &self.arity {
            Arity::Binary => &[0, 1],
            Arity::Multiclass { classes } => classes,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.arity, Arity::Binary)
    }

    pub fn contains(&self, value: i32) -> bool {
        self.classes().contains(&value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelValue {
    pub label_name: String,
    pub value: i32,
}

impl LabelValue {
    pub fn new(label_name: &str, value: i32) -> Self {
        Self {
            label_name: label_name.to_string(),
            value,
        }
    }
}

/// Ordered set of labels; labeling runs in this order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSchema {
    pub labels: Vec<LabelDef>,
}

impl Default for LabelSchema {
    fn default() -> Self {
        Self {
            labels: vec![
                LabelDef::multiclass(PRIORITY, 1..=5),
                LabelDef::binary(NEEDS_REPLY),
                LabelDef::binary(IS_URGENT),
                LabelDef::binary(NEEDS_ACTION),
                LabelDef::binary(NEEDS_SCHEDULING),
            ],
        }
    }
}

impl LabelSchema {
    pub fn new(labels: Vec<LabelDef>) -> Result<Self> {
        let schema = Self { labels };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, label) in self.labels.iter().enumerate() {
            if self.labels[..i].iter().any(|l| l.name == label.name) {
                return Err(Error::Config(format!("duplicate label `{}`", label.name)));
            }
            if let Arity::Multiclass { classes } = &label.arity {
                if classes.len() < 3 {
                    return Err(Error::Config(format!(
                        "multiclass label `{}` needs at least 3 classes",
                        label.name
                    )));
                }
                let mut sorted = classes.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != classes.len() {
                    return Err(Error::Config(format!(
                        "label `{}` has repeated classes",
                        label.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&LabelDef> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn binary_labels(&self) -> impl Iterator<Item = &LabelDef> {
        self.labels.iter().filter(|l| l.is_binary())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks that `value` belongs to the class set of `label`.
    pub fn check_value(&self, label: &str, value: i32) -> Result<()> {
        let def = self
            .get(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        if def.contains(value) {
            Ok(())
        } else {
            Err(Error::ValueOutOfClassSet {
                label: label.to_string(),
                value,
            })
        }
    }
}
