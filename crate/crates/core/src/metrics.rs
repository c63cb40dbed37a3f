//! Quality and cost metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::SoloOutputs;
use crate::dataset::{Email, LabelTable};
use crate::error::{Error, Result};
use crate::schema::{LabelDef, LabelSchema};

/// Reported in place of an infinite cost-reduction factor.
pub const COST_REDUCTION_SENTINEL: f64 = 1e9;

fn check_lengths(predictions: &[i32], references: &[i32]) -> Result<()> {
    if predictions.len() != references.len() || predictions.is_empty() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: references.len(),
        });
    }
    Ok(())
}

fn f1_one_vs_rest(predictions: &[i32], references: &[i32], positive: i32) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &r) in predictions.iter().zip(references) {
        match (p == positive, r == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        // The class never occurs on either side.
        return 1.0;
    }
    // 2PR/(P+R) = 2TP/(2TP+FP+FN); zero when P+R = 0.
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Positive-class F1 for 0/1 labels.
///
/// Returns 1.0 when neither sequence contains a positive.
pub fn f1_binary(predictions: &[i32], references: &[i32]) -> Result<f64> {
    check_lengths(predictions, references)?;
    if let Some(&v) = predictions.iter().chain(references).find(|&&v| v != 0 && v != 1) {
        return Err(Error::ValueOutOfClassSet {
            label: "<binary>".into(),
            value: v,
        });
    }
    Ok(f1_one_vs_rest(predictions, references, 1))
}

/// Unweighted mean of one-vs-rest F1 over `classes`. A class absent from
/// both sequences contributes 1.0.
pub fn f1_macro(predictions: &[i32], references: &[i32], classes: &[i32]) -> Result<f64> {
    check_lengths(predictions, references)?;
    if let Some(&v) = predictions
        .iter()
        .chain(references)
        .find(|v| !classes.contains(v))
    {
        return Err(Error::ValueOutOfClassSet {
            label: "<multiclass>".into(),
            value: v,
        });
    }
    let sum: f64 = classes
        .iter()
        .map(|&c| f1_one_vs_rest(predictions, references, c))
        .sum();
    Ok(sum / classes.len() as f64)
}

/// F1 appropriate to the label: positive-class for binary, macro otherwise.
pub fn f1_for_label(label: &LabelDef, predictions: &[i32], references: &[i32]) -> Result<f64> {
    if label.is_binary() {
        f1_binary(predictions, references)
    } else {
        f1_macro(predictions, references, label.classes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostFactor {
    pub value: f64,
    /// True when the method cost was zero and `value` is the sentinel.
    pub capped: bool,
}

/// `baseline / method`. Factors below 1 are reported as they are.
pub fn cost_reduction_factor(method_cost: f64, baseline_cost: f64) -> CostFactor {
    if method_cost <= 0.0 {
        return CostFactor {
            value: COST_REDUCTION_SENTINEL,
            capped: true,
        };
    }
    CostFactor {
        value: (baseline_cost / method_cost).min(COST_REDUCTION_SENTINEL),
        capped: false,
    }
}

/// Oracle-cascade label choice: the baseline value if any model agrees with
/// it, otherwise the most expensive model's output.
pub fn oracle_choice(
    outputs: &SoloOutputs,
    models: &[String],
    email_id: &str,
    label: &str,
    reference: i32,
) -> Result<i32> {
    let mut last = None;
    for m in models {
        let out = outputs.require(m, email_id, label)?;
        if out.value == Some(reference) {
            return Ok(reference);
        }
        last = out.value.or(last);
    }
    // An all-malformed row counts as a miss against the reference.
    Ok(last.unwrap_or(i32::MIN))
}

/// Per-label F1 of the oracle cascade over cached single-model outputs.
pub fn oracle_cascade_f1(
    outputs: &SoloOutputs,
    models: &[String],
    emails: &[Email],
    schema: &LabelSchema,
    baseline: &LabelTable,
) -> Result<BTreeMap<String, f64>> {
    let mut result = BTreeMap::new();
    for label in &schema.labels {
        let mut preds = Vec::with_capacity(emails.len());
        let mut refs = Vec::with_capacity(emails.len());
        for e in emails {
            let r = baseline.require(&e.id, &label.name)?;
            let p = oracle_choice(outputs, models, &e.id, &label.name, r)?;
            // Malformed everywhere: score as some other class.
            let p = if label.contains(p) {
                p
            } else {
                *label.classes().iter().find(|&&c| c != r).expect(">= 2 classes")
            };
            preds.push(p);
            refs.push(r);
        }
        result.insert(label.name.clone(), f1_for_label(label, &preds, &refs)?);
    }
    Ok(result)
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-label F1 of `predicted` against `baseline` over `emails`.
pub fn per_label_f1(
    schema: &LabelSchema,
    emails: &[Email],
    predicted: &LabelTable,
    baseline: &LabelTable,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for label in &schema.labels {
        let mut preds = Vec::with_capacity(emails.len());
        let mut refs = Vec::with_capacity(emails.len());
        for e in emails {
            refs.push(baseline.require(&e.id, &label.name)?);
            preds.push(predicted.get(&e.id, &label.name).ok_or_else(|| {
                Error::Config(format!("no predicted `{}` for email `{}`", label.name, e.id))
            })?);
        }
        out.insert(label.name.clone(), f1_for_label(label, &preds, &refs)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub binary_f1: String,
    pub multiclass_f1: String,
    pub average: String,
    pub cost_basis: String,
}

impl Default for ReportMetadata {
    fn default() -> Self {
        Self {
            binary_f1: "positive-class F1 (class 1); 1.0 when no positives on either side".into(),
            multiclass_f1: "macro F1, one-vs-rest; classes absent on both sides count 1.0".into(),
            average: "unweighted mean over labels".into(),
            cost_basis: "blended price, 3 input : 1 output tokens".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_label_f1: BTreeMap<String, f64>,
    pub average_f1: f64,
    pub cost_reduction_factor: f64,
    pub cost_reduction_capped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_f1: Option<f64>,
    pub config_hash: String,
    /// Fraction of cascade-labeled (email, label) pairs finishing at each
    /// model.
    pub usage_fractions: BTreeMap<String, f64>,
    pub metadata: ReportMetadata,
}

impl EvaluationReport {
    pub fn new(
        per_label_f1: BTreeMap<String, f64>,
        cost: CostFactor,
        oracle_f1: Option<f64>,
        config_hash: String,
        usage_fractions: BTreeMap<String, f64>,
    ) -> Self {
        Self {
            average_f1: mean(per_label_f1.values().copied()),
            per_label_f1,
            cost_reduction_factor: cost.value,
            cost_reduction_capped: cost.capped,
            oracle_f1,
            config_hash,
            usage_fractions,
            metadata: ReportMetadata::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::SoloOutput;
    use crate::pricing::TokenUsage;
    use proptest::prelude::*;

    #[test]
    fn binary_examples() {
        assert_eq!(f1_binary(&[1, 0, 1, 1], &[1, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(f1_binary(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(f1_binary(&[0, 0, 0], &[0, 1, 0]).unwrap(), 0.0);
        assert_eq!(f1_binary(&[0, 0], &[0, 0]).unwrap(), 1.0);
        assert!(matches!(
            f1_binary(&[1], &[1, 0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(f1_binary(&[2], &[1]).is_err());
    }

    #[test]
    fn macro_examples() {
        let c = [1, 2, 3, 4, 5];
        assert_eq!(f1_macro(&[1, 2, 3, 4, 5, 3], &[1, 2, 3, 4, 5, 3], &c).unwrap(), 1.0);
        let m = f1_macro(&[1, 2, 2], &[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!(m, (1.0 + 2.0 / 3.0 + 0.0) / 3.0);
        assert!((m - 5.0 / 9.0).abs() < 1e-15);
        assert!(matches!(
            f1_macro(&[9], &[1], &[1, 2, 3]),
            Err(Error::ValueOutOfClassSet { .. })
        ));
        // An absent class counts as perfect.
        assert_eq!(f1_macro(&[1, 2], &[1, 2], &[1, 2, 3]).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn two_class_macro_is_mean_of_both_binary_views(
            pairs in proptest::collection::vec((0i32..2, 0i32..2), 1..50)
        ) {
            let (p, r): (Vec<i32>, Vec<i32>) = pairs.into_iter().unzip();
            let flip = |v: &[i32]| v.iter().map(|x| 1 - x).collect::<Vec<_>>();
            let expected = (f1_binary(&p, &r).unwrap() + f1_binary(&flip(&p), &flip(&r)).unwrap()) / 2.0;
            let got = f1_macro(&p, &r, &[0, 1]).unwrap();
            prop_assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_factor_examples() {
        assert_eq!(cost_reduction_factor(5.0, 5.0).value, 1.0);
        assert_eq!(cost_reduction_factor(1.0, 167.0).value, 167.0);
        assert!((cost_reduction_factor(10.0, 1.0).value - 0.1).abs() < 1e-15);
        let z = cost_reduction_factor(0.0, 3.0);
        assert!(z.capped);
        assert_eq!(z.value, COST_REDUCTION_SENTINEL);
    }

    fn outputs(rows: &[(&str, &str, i32)]) -> SoloOutputs {
        let mut o = SoloOutputs::new();
        for (m, e, v) in rows {
            o.insert(
                m,
                e,
                "IsUrgent",
                SoloOutput {
                    value: Some(*v),
                    token_logprobs: vec![-0.1],
                    usage: TokenUsage::new(1, 1),
                },
            );
        }
        o
    }

    #[test]
    fn oracle_picks_any_agreeing_model_else_top() {
        let models = vec!["a".to_string(), "b".to_string()];
        let o = outputs(&[("a", "e1", 0), ("b", "e1", 1), ("a", "e2", 1), ("b", "e2", 0)]);
        assert_eq!(oracle_choice(&o, &models, "e1", "IsUrgent", 1).unwrap(), 1);
        assert_eq!(oracle_choice(&o, &models, "e2", "IsUrgent", 1).unwrap(), 1);
        let never = outputs(&[("a", "e1", 0), ("b", "e1", 0)]);
        assert_eq!(oracle_choice(&never, &models, "e1", "IsUrgent", 1).unwrap(), 0);
        assert!(oracle_choice(&never, &models, "e9", "IsUrgent", 1).is_err());
    }
}
