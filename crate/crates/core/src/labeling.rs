//! Applying a labeling configuration to a set of emails and scoring the
//! result against baseline labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{estimated_label_usage, ModelBackend};
use crate::cascade::{CascadeConfig, LabelOutcome, LabelPlan, Labeler, Method, Provenance, SkipRule};
use crate::dataset::{Email, LabelTable};
use crate::error::Result;
use crate::hashing::config_hash;
use crate::metrics::{cost_reduction_factor, mean, per_label_f1, CostFactor};
use crate::pricing::{blended_cost, Currency, ModelPool, ModelSpec};
use crate::schema::LabelSchema;

/// Everything needed to label an email: a method per label plus skip rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    pub plan: LabelPlan,
    #[serde(default)]
    pub skip_rules: Vec<SkipRule>,
}

impl LabelingConfig {
    /// Every label on the same cascade, no skip rules.
    pub fn cascade_only(schema: &LabelSchema, models: &[String], thresholds: &[f64]) -> Self {
        let methods = schema
            .labels
            .iter()
            .map(|l| {
                let cfg = CascadeConfig {
                    label_name: l.name.clone(),
                    models: models.to_vec(),
                    thresholds: thresholds.to_vec(),
                };
                (l.name.clone(), Method::Cascade(cfg))
            })
            .collect();
        Self {
            plan: LabelPlan { methods },
            skip_rules: Vec::new(),
        }
    }

    pub fn validate(&self, schema: &LabelSchema, pool: &ModelPool) -> Result<()> {
        self.plan.validate(schema, pool)?;
        self.skip_rules.iter().try_for_each(|r| r.validate(schema))
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Names of every model referenced by a cascade.
    pub fn cascade_models(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .plan
            .methods
            .values()
            .filter_map(|m| match m {
                Method::Cascade(c) => Some(c.models.iter().map(String::as_str)),
                Method::Classifier => None,
            })
            .flatten()
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    pub fn uses_classifier(&self) -> bool {
        self.plan
            .methods
            .values()
            .any(|m| matches!(m, Method::Classifier))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmailLabels {
    pub email_id: String,
    pub outcomes: Vec<LabelOutcome>,
}

/// Labels and costs from running a configuration over a set of emails.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledRun {
    pub labels: LabelTable,
    pub emails: Vec<EmailLabels>,
    pub billed: Currency,
    pub blended_cost: f64,
}

impl LabeledRun {
    /// Fraction of cascade-labeled (email, label) pairs whose label came from
    /// each model. Skipped and classifier labels are excluded.
    pub fn usage_fractions(&self) -> BTreeMap<String, f64> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut total = 0u64;
        for o in self.emails.iter().flat_map(|e| &e.outcomes) {
            if let Some(t) = &o.trace {
                *counts.entry(t.chosen_model.clone()).or_default() += 1;
                total += 1;
            }
        }
        counts
            .into_iter()
            .map(|(m, c)| (m, c as f64 / total as f64))
            .collect()
    }

    /// Confidences of the kept cascade labels, in email and schema order.
    pub fn chosen_confidences(&self) -> Vec<f64> {
        self.emails
            .iter()
            .flat_map(|e| &e.outcomes)
            .filter_map(|o| o.trace.as_ref().map(|t| t.chosen_confidence()))
            .collect()
    }

    pub fn provenance_counts(&self) -> BTreeMap<Provenance, u64> {
        let mut counts = BTreeMap::new();
        for o in self.emails.iter().flat_map(|e| &e.outcomes) {
            *counts.entry(o.provenance).or_default() += 1;
        }
        counts
    }
}

/// Labels every email in order.
pub fn label_emails<B: ModelBackend + ?Sized>(labeler: &Labeler<'_, B>, emails: &[Email]) -> Result<LabeledRun> {
    let mut run = LabeledRun::default();
    for email in emails {
        let outcomes = labeler.label_email(email)?;
        for o in &outcomes {
            run.labels.insert(&email.id, &o.value.label_name, o.value.value);
            run.billed += o.cost;
            run.blended_cost += o.blended_cost;
        }
        run.emails.push(EmailLabels {
            email_id: email.id.clone(),
            outcomes,
        });
    }
    Ok(run)
}

/// Blended cost of having the baseline model produce every label of every
/// email, one request per (email, label).
pub fn baseline_blended_cost(baseline: &ModelSpec, schema: &LabelSchema, emails: &[Email]) -> f64 {
    let mut total = 0.0;
    for e in emails {
        let per_label = blended_cost(baseline, estimated_label_usage(e));
        for _ in &schema.labels {
            total += per_label;
        }
    }
    total
}

/// Quality and cost of a labeled run relative to the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub per_label_f1: BTreeMap<String, f64>,
    pub average_f1: f64,
    pub cost: CostFactor,
}

pub fn score_run(
    run: &LabeledRun,
    schema: &LabelSchema,
    emails: &[Email],
    baseline_labels: &LabelTable,
    baseline: &ModelSpec,
) -> Result<Score> {
    let per_label_f1 = per_label_f1(schema, emails, &run.labels, baseline_labels)?;
    Ok(Score {
        average_f1: mean(per_label_f1.values().copied()),
        per_label_f1,
        cost: cost_reduction_factor(run.blended_cost, baseline_blended_cost(baseline, schema, emails)),
    })
}
