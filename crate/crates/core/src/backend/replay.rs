use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EmbeddingResult, GenerationResult, ModelBackend};
use crate::dataset::Email;
use crate::error::{Error, Result};
use crate::pricing::{ModelSpec, TokenUsage};
use crate::schema::{LabelDef, LabelValue};

/// One captured single-model output for an (email, label) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoloOutput {
    /// `None` when the model's output was malformed.
    pub value: Option<i32>,
    pub token_logprobs: Vec<f64>,
    pub usage: TokenUsage,
}

impl SoloOutput {
    pub fn from_result(result: &GenerationResult) -> Self {
        Self {
            value: Some(result.value.value),
            token_logprobs: result.token_logprobs.clone(),
            usage: result.usage,
        }
    }

    pub fn malformed(usage: TokenUsage) -> Self {
        Self {
            value: None,
            token_logprobs: Vec::new(),
            usage,
        }
    }
}

/// Captured outputs keyed by `(model, email id, label)` plus embeddings keyed
/// by `(model, email id)`.
#[derive(Debug, Clone, Default)]
pub struct SoloOutputs {
    generations: HashMap<(String, String, String), SoloOutput>,
    embeddings: HashMap<(String, String), (Vec<f32>, TokenUsage)>,
}

impl SoloOutputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: &str, email_id: &str, label: &str, out: SoloOutput) {
        self.generations
            .insert((model.to_string(), email_id.to_string(), label.to_string()), out);
    }

    pub fn get(&self, model: &str, email_id: &str, label: &str) -> Option<&SoloOutput> {
        self.generations
            .get(&(model.to_string(), email_id.to_string(), label.to_string()))
    }

    pub fn contains(&self, model: &str, email_id: &str, label: &str) -> bool {
        self.get(model, email_id, label).is_some()
    }

    pub fn require(&self, model: &str, email_id: &str, label: &str) -> Result<&SoloOutput> {
        self.get(model, email_id, label)
            .ok_or_else(|| Error::MissingCacheEntry {
                model: model.to_string(),
                email_id: email_id.to_string(),
                label: label.to_string(),
            })
    }

    pub fn insert_embedding(&mut self, model: &str, email_id: &str, vector: Vec<f32>, usage: TokenUsage) {
        self.embeddings
            .insert((model.to_string(), email_id.to_string()), (vector, usage));
    }

    pub fn embedding(&self, model: &str, email_id: &str) -> Option<&(Vec<f32>, TokenUsage)> {
        self.embeddings.get(&(model.to_string(), email_id.to_string()))
    }

    pub fn generation_count(&self) -> usize {
        self.generations.len()
    }
}

/// Serves generations and embeddings from [`SoloOutputs`] only.
///
/// Replayed results carry the usage recorded at capture time, so costs
/// computed over a replay match what the live calls cost.
#[derive(Debug, Clone, Copy)]
pub struct ReplayBackend<'a> {
    outputs: &'a SoloOutputs,
}

impl<'a> ReplayBackend<'a> {
    pub fn new(outputs: &'a SoloOutputs) -> Self {
        Self { outputs }
    }
}

impl ModelBackend for ReplayBackend<'_> {
    fn generate_label(
        &self,
        model: &ModelSpec,
        email: &Email,
        label: &LabelDef,
    ) -> Result<GenerationResult> {
        let out = self.outputs.require(&model.name, &email.id, &label.name)?;
        match out.value {
            Some(value) => Ok(GenerationResult {
                value: LabelValue::new(&label.name, value),
                token_logprobs: out.token_logprobs.clone(),
                usage: out.usage,
            }),
            None => Err(Error::MalformedOutput {
                model: model.name.clone(),
                detail: "captured output was malformed".into(),
            }),
        }
    }

    fn embed(&self, model: &ModelSpec, email: &Email) -> Result<EmbeddingResult> {
        let (vector, usage) = self
            .outputs
            .embedding(&model.name, &email.id)
            .ok_or_else(|| Error::MissingCacheEntry {
                model: model.name.clone(),
                email_id: email.id.clone(),
                label: "<embedding>".into(),
            })?;
        Ok(EmbeddingResult {
            vector: vector.clone(),
            usage: *usage,
            cached: false,
        })
    }
}
