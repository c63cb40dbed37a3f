//! Skip-rule mining and per-label method assignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cascade::{Assignment, SkipRule};
use crate::dataset::{Email, LabelTable};
use crate::error::{Error, Result};
use crate::schema::LabelSchema;

pub const DEFAULT_SKIP_EPSILON: f64 = 0.05;
pub const DEFAULT_MIN_SUPPORT: f64 = 0.05;
pub const DEFAULT_METHOD_TOLERANCE: f64 = 0.02;

/// Mines forward-pointing rules `A = a ⇒ B = b` from fully labeled emails.
///
/// A rule is emitted when `A = a` holds on at least `min_support` of the
/// emails and `B = b` holds on at least `1 − ε` of those.
pub fn mine_skip_rules(
    schema: &LabelSchema,
    emails: &[Email],
    labels: &LabelTable,
    epsilon: f64,
    min_support: f64,
) -> Result<Vec<SkipRule>> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Config("skip-rule epsilon must lie in (0, 0.5)".into()));
    }
    if !(min_support > 0.0 && min_support < 1.0) {
        return Err(Error::Config("skip-rule min_support must lie in (0, 1)".into()));
    }
    if emails.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<Vec<i32>> = emails
        .iter()
        .map(|e| {
            schema
                .labels
                .iter()
                .map(|l| labels.require(&e.id, &l.name))
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mut rules = Vec::new();
    for (i, cond) in schema.labels.iter().enumerate() {
        for &a in cond.classes() {
            let matching: Vec<&Vec<i32>> = rows.iter().filter(|r| r[i] == a).collect();
            let support = matching.len() as f64 / n;
            if matching.is_empty() || support < min_support {
                continue;
            }
            for (j, cons) in schema.labels.iter().enumerate().skip(i + 1) {
                for &b in cons.classes() {
                    let hits = matching.iter().filter(|r| r[j] == b).count();
                    let confidence = hits as f64 / matching.len() as f64;
                    if confidence >= 1.0 - epsilon {
                        rules.push(SkipRule {
                            condition: Assignment::new(&cond.name, a),
                            consequence: Assignment::new(&cons.name, b),
                            support,
                            confidence,
                        });
                    }
                }
            }
        }
    }
    Ok(rules)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Cascade,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDecision {
    pub label: String,
    pub method: MethodKind,
    pub cascade_f1: Option<f64>,
    pub classifier_f1: Option<f64>,
}

/// Picks a method per label. Multiclass labels always use the cascade; a
/// binary label uses the classifier when its F1 is no more than `tolerance`
/// below the cascade's.
pub fn assign_methods(
    schema: &LabelSchema,
    classifier_f1: Option<&BTreeMap<String, f64>>,
    cascade_f1: &BTreeMap<String, f64>,
    tolerance: f64,
) -> Vec<MethodDecision> {
    schema
        .labels
        .iter()
        .map(|label| {
            let cas = cascade_f1.get(&label.name).copied();
            let clf = label
                .is_binary()
                .then(|| classifier_f1.and_then(|m| m.get(&label.name).copied()))
                .flatten();
            let method = match (clf, cas) {
                (Some(c), Some(k)) if k - c <= tolerance => MethodKind::Classifier,
                (Some(_), None) => MethodKind::Classifier,
                _ => MethodKind::Cascade,
            };
            MethodDecision {
                label: label.name.clone(),
                method,
                cascade_f1: cas,
                classifier_f1: clf,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{IS_URGENT, NEEDS_REPLY, PRIORITY};

    #[test]
    fn method_examples() {
        let schema = LabelSchema::default();
        let mut cas = BTreeMap::new();
        let mut clf = BTreeMap::new();
        for l in &schema.labels {
            cas.insert(l.name.clone(), 0.8);
            clf.insert(l.name.clone(), 0.8);
        }
        clf.insert(PRIORITY.to_string(), 1.0);
        clf.insert(IS_URGENT.to_string(), 0.7);
        clf.insert(NEEDS_REPLY.to_string(), 0.785);
        let d = assign_methods(&schema, Some(&clf), &cas, DEFAULT_METHOD_TOLERANCE);
        let get = |n: &str| d.iter().find(|x| x.label == n).unwrap().method;
        assert_eq!(get(PRIORITY), MethodKind::Cascade);
        assert_eq!(get(IS_URGENT), MethodKind::Cascade);
        assert_eq!(get(NEEDS_REPLY), MethodKind::Classifier);
        assert_eq!(get("NeedsAction"), MethodKind::Classifier);
        let none = assign_methods(&schema, None, &cas, DEFAULT_METHOD_TOLERANCE);
        assert!(none.iter().all(|x| x.method == MethodKind::Cascade));
    }

    fn table(rows: &[[i32; 5]]) -> (Vec<Email>, LabelTable) {
        let schema = LabelSchema::default();
        let mut t = LabelTable::new();
        let emails: Vec<Email> = (0..rows.len()).map(|i| Email::new(&format!("e{i}"), "", "b")).collect();
        for (e, row) in emails.iter().zip(rows) {
            for (l, v) in schema.labels.iter().zip(row) {
                t.insert(&e.id, &l.name, *v);
            }
        }
        (emails, t)
    }

    #[test]
    fn independent_labels_yield_nothing() {
        // Every combination of the four binary labels, for every priority.
        let mut rows = Vec::new();
        for p in 1..=5 {
            for bits in 0..16 {
                rows.push([p, bits & 1, (bits >> 1) & 1, (bits >> 2) & 1, (bits >> 3) & 1]);
            }
        }
        let (emails, t) = table(&rows);
        let rules = mine_skip_rules(&LabelSchema::default(), &emails, &t, 0.05, 0.05).unwrap();
        assert!(rules.is_empty());
    }

    #[test]
    fn support_gate() {
        // Priority 5 appears once, always with IsUrgent = 1.
        let mut rows = Vec::new();
        for i in 0..40 {
            rows.push([1 + (i % 4), i & 1, (i >> 1) & 1, (i >> 2) & 1, (i >> 3) & 1]);
        }
        rows.push([5, 0, 1, 0, 0]);
        let (emails, t) = table(&rows);
        let rules = mine_skip_rules(&LabelSchema::default(), &emails, &t, 0.05, 0.05).unwrap();
        assert!(rules.iter().all(|r| r.condition.value != 5), "{rules:?}");
    }

    #[test]
    fn parameter_ranges() {
        let (emails, t) = table(&[[1, 0, 0, 0, 0]]);
        let s = LabelSchema::default();
        assert!(mine_skip_rules(&s, &emails, &t, 0.5, 0.05).is_err());
        assert!(mine_skip_rules(&s, &emails, &t, 0.05, 1.0).is_err());
    }
}
