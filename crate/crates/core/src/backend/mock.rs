use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    estimated_embedding_usage, estimated_label_usage, require_kind, EmbeddingResult,
    GenerationResult, ModelBackend,
};
use crate::dataset::{Email, LabelTable};
use crate::error::{Error, Result};
use crate::hashing::keyed_rng;
use crate::pricing::{ModelKind, ModelSpec, TokenUsage};
use crate::schema::{LabelDef, LabelSchema, LabelValue};

/// Mean and standard deviation of the linear confidence, before truncation
/// to `(0, 1]`. A zero deviation makes the confidence exactly `mean`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    pub mean: f64,
    pub stddev: f64,
}

impl ConfidenceParams {
    pub const fn new(mean: f64, stddev: f64) -> Self {
        Self { mean, stddev }
    }

    pub const fn fixed(value: f64) -> Self {
        Self {
            mean: value,
            stddev: 0.0,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.stddev <= 0.0 {
            return self.mean;
        }
        let normal = Normal::new(self.mean, self.stddev).expect("validated stddev");
        for _ in 0..10_000 {
            let x = normal.sample(rng);
            if x > 0.0 && x <= 1.0 {
                return x;
            }
        }
        self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockModelConfig {
    /// Probability of emitting the baseline's label.
    pub agreement_rate: f64,
    pub confidence_when_correct: ConfidenceParams,
    pub confidence_when_wrong: ConfidenceParams,
    /// Fixed usage per call; `None` estimates usage from the email.
    #[serde(default)]
    pub usage_profile: Option<TokenUsage>,
    /// Per-label agreement overrides.
    #[serde(default)]
    pub label_agreement: BTreeMap<String, f64>,
}

impl MockModelConfig {
    pub fn new(agreement_rate: f64) -> Self {
        Self {
            agreement_rate,
            confidence_when_correct: ConfidenceParams::new(0.9, 0.05),
            confidence_when_wrong: ConfidenceParams::new(0.6, 0.1),
            usage_profile: None,
            label_agreement: BTreeMap::new(),
        }
    }

    pub fn with_confidence(mut self, correct: ConfidenceParams, wrong: ConfidenceParams) -> Self {
        self.confidence_when_correct = correct;
        self.confidence_when_wrong = wrong;
        self
    }

    pub fn with_usage(mut self, usage: TokenUsage) -> Self {
        self.usage_profile = Some(usage);
        self
    }

    pub fn agreement_for(&self, label: &str) -> f64 {
        self.label_agreement
            .get(label)
            .copied()
            .unwrap_or(self.agreement_rate)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let rates = std::iter::once(self.agreement_rate).chain(self.label_agreement.values().copied());
        for rate in rates {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "mock model `{name}`: agreement rate {rate} outside [0, 1]"
                )));
            }
        }
        for c in [self.confidence_when_correct, self.confidence_when_wrong] {
            if !(c.mean > 0.0 && c.mean <= 1.0) || c.stddev.is_nan() || c.stddev < 0.0 {
                return Err(Error::Config(format!(
                    "mock model `{name}`: confidence mean must lie in (0, 1] and stddev >= 0"
                )));
            }
        }
        Ok(())
    }
}

impl Default for MockModelConfig {
    fn default() -> Self {
        Self::new(0.8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    pub seed: u64,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    /// Distance each binary label pushes the embedding along its direction.
    #[serde(default = "default_embedding_signal")]
    pub embedding_signal: f64,
    #[serde(default)]
    pub models: BTreeMap<String, MockModelConfig>,
}

fn default_embedding_dim() -> usize {
    32
}

fn default_embedding_signal() -> f64 {
    3.0
}

impl MockConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            embedding_dim: default_embedding_dim(),
            embedding_signal: default_embedding_signal(),
            models: BTreeMap::new(),
        }
    }

    pub fn with_model(mut self, name: &str, cfg: MockModelConfig) -> Self {
        self.models.insert(name.to_string(), cfg);
        self
    }
}

/// Deterministic backend whose outputs are a pure function of the seed, the
/// model name, the email id and the label name.
///
/// Each generative model agrees with the baseline label with its configured
/// probability; confidences are drawn from separate truncated normals for
/// agreeing and disagreeing outputs and reported as a single token with
/// `logprob = ln(confidence)`. Embeddings are seeded Gaussian noise shifted
/// along one fixed direction per binary label, so a classifier can recover
/// the baseline labels from them.
#[derive(Debug, Clone)]
pub struct MockBackend {
    config: MockConfig,
    schema: LabelSchema,
    baseline: Arc<LabelTable>,
}

impl MockBackend {
    pub fn new(config: MockConfig, schema: LabelSchema, baseline: Arc<LabelTable>) -> Result<Self> {
        for (name, m) in &config.models {
            m.validate(name)?;
        }
        if config.embedding_dim == 0 {
            return Err(Error::Config("mock embedding_dim must be positive".into()));
        }
        Ok(Self {
            config,
            schema,
            baseline,
        })
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    fn model_config(&self, model: &str) -> Result<&MockModelConfig> {
        self.config
            .models
            .get(model)
            .ok_or_else(|| Error::UnknownModel(model.to_string()))
    }

    /// Baseline label, or a seeded stand-in when the table has none.
    fn reference_value(&self, email: &Email, label: &LabelDef) -> i32 {
        self.baseline.get(&email.id, &label.name).unwrap_or_else(|| {
            let classes = label.classes();
            let mut rng = keyed_rng(self.config.seed, &["truth", &email.id, &label.name]);
            classes[rng.random_range(0..classes.len())]
        })
    }

    fn direction(&self, model: &str, label: &str) -> Vec<f64> {
        let mut rng = keyed_rng(self.config.seed, &["direction", model, label]);
        let mut v: Vec<f64> = (0..self.config.embedding_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

/// A value of `label` different from `reference`; binary labels flip.
fn wrong_value(label: &LabelDef, reference: i32, rng: &mut ChaCha8Rng) -> i32 {
    let others: Vec<i32> = label
        .classes()
        .iter()
        .copied()
        .filter(|&c| c != reference)
        .collect();
    others[rng.random_range(0..others.len())]
}

impl ModelBackend for MockBackend {
    fn generate_label(
        &self,
        model: &ModelSpec,
        email: &Email,
        label: &LabelDef,
    ) -> Result<GenerationResult> {
        require_kind(model, ModelKind::Generative)?;
        let cfg = self.model_config(&model.name)?;
        let mut rng = keyed_rng(
            self.config.seed,
            &["generate", &model.name, &email.id, &label.name],
        );
        let reference = self.reference_value(email, label);
        let agrees = rng.random::<f64>() < cfg.agreement_for(&label.name);
        let (value, conf) = if agrees {
            (reference, cfg.confidence_when_correct.sample(&mut rng))
        } else {
            let v = wrong_value(label, reference, &mut rng);
            (v, cfg.confidence_when_wrong.sample(&mut rng))
        };
        Ok(GenerationResult {
            value: LabelValue::new(&label.name, value),
            token_logprobs: vec![conf.ln()],
            usage: cfg
                .usage_profile
                .unwrap_or_else(|| estimated_label_usage(email)),
        })
    }

    fn embed(&self, model: &ModelSpec, email: &Email) -> Result<EmbeddingResult> {
        require_kind(model, ModelKind::Embedding)?;
        let mut rng = keyed_rng(self.config.seed, &["embed", &model.name, &email.id]);
        let mut v: Vec<f64> = (0..self.config.embedding_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for label in self.schema.binary_labels() {
            let y = self.reference_value(email, label);
            let sign = if y == 1 { 1.0 } else { -1.0 };
            let dir = self.direction(&model.name, &label.name);
            for (x, d) in v.iter_mut().zip(&dir) {
                *x += sign * self.config.embedding_signal * d;
            }
        }
        Ok(EmbeddingResult {
            vector: v.into_iter().map(|x| x as f32).collect(),
            usage: estimated_embedding_usage(email),
            cached: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::logprob_to_confidence;
    use crate::schema::{IS_URGENT, PRIORITY};

    fn setup(agreement: f64) -> (MockBackend, ModelSpec, Email) {
        let mut table = LabelTable::new();
        table.insert("e1", IS_URGENT, 1);
        table.insert("e1", PRIORITY, 3);
        let cfg = MockConfig::new(42).with_model("slm", MockModelConfig::new(agreement));
        let backend =
            MockBackend::new(cfg, LabelSchema::default(), Arc::new(table)).unwrap();
        (
            backend,
            ModelSpec::generative("slm", 1, 2, 1),
            Email::new("e1", "subject", "body"),
        )
    }

    #[test]
    fn perfect_agreement_returns_baseline() {
        let (b, m, e) = setup(1.0);
        let r = b.generate_label(&m, &e, &LabelDef::binary(IS_URGENT)).unwrap();
        assert_eq!(r.value.value, 1);
    }

    #[test]
    fn zero_agreement_flips_binary() {
        let (b, m, e) = setup(0.0);
        let r = b.generate_label(&m, &e, &LabelDef::binary(IS_URGENT)).unwrap();
        assert_eq!(r.value.value, 0);
        let p = LabelSchema::default().labels[0].clone();
        let r = b.generate_label(&m, &e, &p).unwrap();
        assert_ne!(r.value.value, 3);
        assert!(p.contains(r.value.value));
    }

    #[test]
    fn calls_are_deterministic() {
        let (b, m, e) = setup(0.5);
        let label = LabelDef::binary(IS_URGENT);
        assert_eq!(
            b.generate_label(&m, &e, &label).unwrap(),
            b.generate_label(&m, &e, &label).unwrap()
        );
    }

    #[test]
    fn fixed_confidence_is_exactly_invertible() {
        let mut table = LabelTable::new();
        table.insert("e1", IS_URGENT, 1);
        let cfg = MockConfig::new(1).with_model(
            "slm",
            MockModelConfig::new(1.0)
                .with_confidence(ConfidenceParams::fixed(0.6), ConfidenceParams::fixed(0.2)),
        );
        let b = MockBackend::new(cfg, LabelSchema::default(), Arc::new(table)).unwrap();
        let r = b
            .generate_label(
                &ModelSpec::generative("slm", 1, 1, 1),
                &Email::new("e1", "", "x"),
                &LabelDef::binary(IS_URGENT),
            )
            .unwrap();
        assert_eq!(logprob_to_confidence(&r.token_logprobs).unwrap(), 0.6);
    }

    #[test]
    fn confidences_stay_in_unit_interval() {
        let (b, m, _) = setup(0.5);
        let label = LabelDef::binary(IS_URGENT);
        for i in 0..2000 {
            let e = Email::new(&format!("x{i}"), "", "b");
            let r = b.generate_label(&m, &e, &label).unwrap();
            assert_eq!(r.token_logprobs.len(), 1);
            assert!(r.token_logprobs[0] <= 0.0 && r.token_logprobs[0].is_finite());
        }
    }

    #[test]
    fn wrong_kind_rejected() {
        let (b, m, e) = setup(1.0);
        assert!(matches!(b.embed(&m, &e), Err(Error::WrongModelKind { .. })));
        let emb = ModelSpec::embedding("emb", 1, 1);
        assert!(b
            .generate_label(&emb, &e, &LabelDef::binary(IS_URGENT))
            .is_err());
    }

    #[test]
    fn embeddings_deterministic_and_distinct() {
        let (b, _, _) = setup(1.0);
        let emb = ModelSpec::embedding("emb", 1, 1);
        let a = b.embed(&emb, &Email::new("a", "", "")).unwrap();
        assert_eq!(a.vector.len(), 32);
        assert_eq!(a, b.embed(&emb, &Email::new("a", "", "")).unwrap());
        for i in 0..1000 {
            let x = b.embed(&emb, &Email::new(&format!("p{i}"), "", "")).unwrap();
            let y = b.embed(&emb, &Email::new(&format!("q{i}"), "", "")).unwrap();
            assert_ne!(x.vector, y.vector);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = MockConfig::new(0).with_model("m", MockModelConfig::new(1.5));
        assert!(MockBackend::new(bad, LabelSchema::default(), Arc::default()).is_err());
        let bad = MockConfig::new(0).with_model(
            "m",
            MockModelConfig::new(0.5)
                .with_confidence(ConfidenceParams::new(0.0, 0.1), ConfidenceParams::fixed(0.5)),
        );
        assert!(MockBackend::new(bad, LabelSchema::default(), Arc::default()).is_err());
    }
}
