//! Runtime labeling: confidence-thresholded model cascades, skip rules and
//! per-label dispatch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{check_generation, ModelBackend};
use crate::classifier::ClassifierBundle;
use crate::dataset::Email;
use crate::error::{Error, Result};
use crate::pricing::{blended_cost, request_cost, Currency, ModelKind, ModelPool, TokenUsage};
use crate::schema::{LabelDef, LabelSchema, LabelValue};

/// Linear confidence of a generation: `exp(mean(token_logprobs))`, the
/// geometric mean of the token probabilities.
pub fn logprob_to_confidence(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::EmptyLogprobs);
    }
    let mean = token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64;
    Ok(mean.exp())
}

/// Index of the first model whose confidence meets its threshold.
pub fn first_passing<I>(confidences: I, thresholds: &[f64]) -> Option<usize>
where
    I: IntoIterator<Item = f64>,
{
    confidences
        .into_iter()
        .zip(thresholds)
        .position(|(c, &t)| c >= t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub label_name: String,
    /// Model names, ascending by size.
    pub models: Vec<String>,
    /// One confidence threshold per model.
    pub thresholds: Vec<f64>,
}

impl CascadeConfig {
    pub fn new(label_name: &str, models: &[&str], thresholds: &[f64]) -> Self {
        Self {
            label_name: label_name.to_string(),
            models: models.iter().map(|m| m.to_string()).collect(),
            thresholds: thresholds.to_vec(),
        }
    }

    pub fn validate(&self, pool: &ModelPool) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config(format!(
                "cascade for `{}` has no models",
                self.label_name
            )));
        }
        if self.models.len() != self.thresholds.len() {
            return Err(Error::Config(format!(
                "cascade for `{}`: {} models but {} thresholds",
                self.label_name,
                self.models.len(),
                self.thresholds.len()
            )));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
        }
        let mut prev_rank = 0;
        for name in &self.models {
            let spec = pool.get(name)?;
            if spec.kind != ModelKind::Generative {
                return Err(Error::Config(format!("`{name}` is not a generative model")));
            }
            if spec.size_rank <= prev_rank {
                return Err(Error::Config(format!(
                    "cascade for `{}` is not ordered by increasing size",
                    self.label_name
                )));
            }
            prev_rank = spec.size_rank;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub model: String,
    /// Zero for malformed outputs.
    pub confidence: f64,
    /// `None` for malformed outputs.
    pub value: Option<i32>,
    pub usage: TokenUsage,
    pub cost: Currency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeTrace {
    pub email_id: String,
    pub attempts: Vec<Attempt>,
    pub chosen_model: String,
    pub chosen_value: LabelValue,
    pub total_cost: Currency,
    pub fell_through: bool,
}

impl CascadeTrace {
    pub fn blended_cost(&self, pool: &ModelPool) -> Result<f64> {
        self.attempts
            .iter()
            .map(|a| Ok(blended_cost(pool.get(&a.model)?, a.usage)))
            .sum()
    }

    /// Confidence of the attempt that produced the kept label.
    pub fn chosen_confidence(&self) -> f64 {
        self.attempts
            .iter()
            .rev()
            .find(|a| a.model == self.chosen_model)
            .map_or(0.0, |a| a.confidence)
    }
}

/// A cascade that failed part way, with the attempts made before the failure.
#[derive(Debug)]
pub struct CascadeFailure {
    pub error: Error,
    pub attempts: Vec<Attempt>,
}

impl From<CascadeFailure> for Error {
    fn from(f: CascadeFailure) -> Error {
        f.error
    }
}

/// Walks the cascade for one email and label.
///
/// Models are tried in order; the first whose confidence meets its threshold
/// supplies the label. If none does, the last model's label is kept and the
/// trace is marked as fallen through. Every attempt is billed. A malformed
/// output counts as confidence 0 and escalates.
pub fn run_cascade<B: ModelBackend + ?Sized>(
    email: &Email,
    cfg: &CascadeConfig,
    label: &LabelDef,
    pool: &ModelPool,
    backend: &B,
) -> Result<CascadeTrace, CascadeFailure> {
    let mut attempts: Vec<Attempt> = Vec::with_capacity(cfg.models.len());
    let fail = |error: Error, attempts: Vec<Attempt>| CascadeFailure { error, attempts };
    for (name, &threshold) in cfg.models.iter().zip(&cfg.thresholds) {
        let spec = match pool.get(name) {
            Ok(s) => s,
            Err(e) => return Err(fail(e, attempts)),
        };
        let generated = backend
            .generate_label(spec, email, label)
            .and_then(|r| check_generation(spec, label, &r).map(|_| r));
        let attempt = match generated {
            Ok(r) => {
                let confidence = match logprob_to_confidence(&r.token_logprobs) {
                    Ok(c) => c,
                    Err(e) => return Err(fail(e, attempts)),
                };
                Attempt {
                    model: name.clone(),
                    confidence,
                    value: Some(r.value.value),
                    usage: r.usage,
                    cost: request_cost(spec, r.usage),
                }
            }
            Err(Error::MalformedOutput { model, detail }) => {
                log::debug!("{model}: malformed output ({detail}), escalating");
                Attempt {
                    model: name.clone(),
                    confidence: 0.0,
                    value: None,
                    usage: TokenUsage::default(),
                    cost: Currency::ZERO,
                }
            }
            Err(e) => return Err(fail(e, attempts)),
        };
        let passed = attempt.value.is_some() && attempt.confidence >= threshold;
        attempts.push(attempt);
        if passed {
            return Ok(finish(email, label, attempts, false));
        }
    }
    if attempts.iter().all(|a| a.value.is_none()) {
        let model = cfg.models.last().cloned().unwrap_or_default();
        return Err(fail(
            Error::MalformedOutput {
                model,
                detail: "no model in the cascade produced a usable label".into(),
            },
            attempts,
        ));
    }
    Ok(finish(email, label, attempts, true))
}

fn finish(email: &Email, label: &LabelDef, attempts: Vec<Attempt>, fell_through: bool) -> CascadeTrace {
    // The kept label comes from the last attempt that produced one; that is
    // the final model unless its output was malformed.
    let chosen = attempts
        .iter()
        .rev()
        .find(|a| a.value.is_some())
        .expect("caller checked for a usable attempt");
    CascadeTrace {
        email_id: email.id.clone(),
        chosen_model: chosen.model.clone(),
        chosen_value: LabelValue::new(&label.name, chosen.value.unwrap_or_default()),
        total_cost: attempts.iter().map(|a| a.cost).sum(),
        fell_through,
        attempts,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub label: String,
    pub value: i32,
}

impl Assignment {
    pub fn new(label: &str, value: i32) -> Self {
        Self {
            label: label.to_string(),
            value,
        }
    }
}

/// `condition ⇒ consequence`, mined from calibration labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRule {
    pub condition: Assignment,
    pub consequence: Assignment,
    pub support: f64,
    pub confidence: f64,
}

impl SkipRule {
    pub fn new(condition: Assignment, consequence: Assignment) -> Self {
        Self {
            condition,
            consequence,
            support: 1.0,
            confidence: 1.0,
        }
    }

    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        let cond = schema
            .position(&self.condition.label)
            .ok_or_else(|| Error::UnknownLabel(self.condition.label.clone()))?;
        let cons = schema
            .position(&self.consequence.label)
            .ok_or_else(|| Error::UnknownLabel(self.consequence.label.clone()))?;
        if cond >= cons {
            return Err(Error::Config(format!(
                "skip rule {} => {} must point forward in schema order",
                self.condition.label, self.consequence.label
            )));
        }
        schema.check_value(&self.condition.label, self.condition.value)?;
        schema.check_value(&self.consequence.label, self.consequence.value)
    }
}

/// The rule that fires for `label` given the values assigned so far.
///
/// With several candidates the most confident rule wins; ties keep list
/// order.
pub fn matching_rule<'r>(
    rules: &'r [SkipRule],
    assigned: &BTreeMap<String, i32>,
    label: &str,
) -> Option<&'r SkipRule> {
    let mut best: Option<&SkipRule> = None;
    for r in rules.iter().filter(|r| r.consequence.label == label) {
        if assigned.get(&r.condition.label) == Some(&r.condition.value)
            && best.is_none_or(|b| r.confidence > b.confidence)
        {
            best = Some(r);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Cascade(CascadeConfig),
    Classifier,
}

/// Labeling method for every label in the schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelPlan {
    pub methods: BTreeMap<String, Method>,
}

impl LabelPlan {
    pub fn method(&self, label: &str) -> Option<&Method> {
        self.methods.get(label)
    }

    pub fn validate(&self, schema: &LabelSchema, pool: &ModelPool) -> Result<()> {
        for label in &schema.labels {
            match self.methods.get(&label.name) {
                None => {
                    return Err(Error::Config(format!(
                        "plan has no method for `{}`",
                        label.name
                    )))
                }
                Some(Method::Cascade(c)) => {
                    if c.label_name != label.name {
                        return Err(Error::Config(format!(
                            "cascade for `{}` is filed under `{}`",
                            c.label_name, label.name
                        )));
                    }
                    c.validate(pool)?
                }
                Some(Method::Classifier) if !label.is_binary() => {
                    return Err(Error::Config(format!(
                        "classifier cannot label multiclass `{}`",
                        label.name
                    )))
                }
                Some(Method::Classifier) => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Cascade,
    Classifier,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub value: LabelValue,
    pub provenance: Provenance,
    /// Billed cost attributed to this label.
    pub cost: Currency,
    /// Blended-price cost, for reduction factors.
    pub blended_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<CascadeTrace>,
}

/// Labels emails according to a plan, in schema order.
pub struct Labeler<'a, B: ?Sized> {
    pub schema: &'a LabelSchema,
    pub pool: &'a ModelPool,
    pub plan: &'a LabelPlan,
    pub skip_rules: &'a [SkipRule],
    pub classifier: Option<&'a ClassifierBundle>,
    pub backend: &'a B,
}

impl<B: ModelBackend + ?Sized> Labeler<'_, B> {
    /// Labels one email.
    ///
    /// A label whose skip rule fires gets the rule's value at zero cost.
    /// Classifier labels share one embedding call per email; its cost is
    /// attributed to the first classifier label that needs it.
    pub fn label_email(&self, email: &Email) -> Result<Vec<LabelOutcome>> {
        let mut assigned: BTreeMap<String, i32> = BTreeMap::new();
        let mut outcomes = Vec::with_capacity(self.schema.len());
        let mut predictions: Option<BTreeMap<String, i32>> = None;
        for label in &self.schema.labels {
            let outcome = if let Some(rule) = matching_rule(self.skip_rules, &assigned, &label.name) {
                LabelOutcome {
                    value: LabelValue::new(&label.name, rule.consequence.value),
                    provenance: Provenance::Skipped,
                    cost: Currency::ZERO,
                    blended_cost: 0.0,
                    trace: None,
                }
            } else {
                match self.plan.method(&label.name) {
                    Some(Method::Cascade(cfg)) => {
                        let trace = run_cascade(email, cfg, label, self.pool, self.backend)?;
                        LabelOutcome {
                            value: trace.chosen_value.clone(),
                            provenance: Provenance::Cascade,
                            cost: trace.total_cost,
                            blended_cost: trace.blended_cost(self.pool)?,
                            trace: Some(trace),
                        }
                    }
                    Some(Method::Classifier) => {
                        let bundle = self.classifier.ok_or_else(|| {
                            Error::Config(format!(
                                "`{}` is routed to the classifier but none is loaded",
                                label.name
                            ))
                        })?;
                        let (cost, blended) = match predictions {
                            Some(_) => (Currency::ZERO, 0.0),
                            None => {
                                let spec = self.pool.get(&bundle.embedding_model)?;
                                let emb = self.backend.embed(spec, email)?;
                                predictions = Some(bundle.predict_values(&emb.vector)?);
                                (request_cost(spec, emb.usage), blended_cost(spec, emb.usage))
                            }
                        };
                        let value = *predictions
                            .as_ref()
                            .and_then(|p| p.get(&label.name))
                            .ok_or_else(|| Error::UnknownLabel(label.name.clone()))?;
                        LabelOutcome {
                            value: LabelValue::new(&label.name, value),
                            provenance: Provenance::Classifier,
                            cost,
                            blended_cost: blended,
                            trace: None,
                        }
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "plan has no method for `{}`",
                            label.name
                        )))
                    }
                }
            };
            assigned.insert(label.name.clone(), outcome.value.value);
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }
}
