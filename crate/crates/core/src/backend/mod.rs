//! Invocation surface over generative and embedding models.
//!
//! [`ModelBackend`] is the single trait the labeling pipeline talks to. The
//! concrete backends are:
//!
//! * [`MockBackend`]: deterministic, seeded stand-in for real models.
//! * [`HttpBackend`]: chat-completions style JSON client.
//! * [`ReplayBackend`]: serves previously captured outputs without calling
//!   anything (used by the profiler's threshold sweep).
//!
//! [`Metered`] counts and bills calls per model and [`EmbeddingCache`] makes
//! sure each email is embedded at most once per embedding model.

mod cache;
mod http;
mod metered;
mod mock;
mod replay;

use serde::{Deserialize, Serialize};

pub use cache::EmbeddingCache;
pub use http::{HttpBackend, HttpConfig};
pub use metered::{Metered, ModelCounter};
pub use mock::{ConfidenceParams, MockBackend, MockConfig, MockModelConfig};
pub use replay::{ReplayBackend, SoloOutput, SoloOutputs};

use crate::dataset::Email;
use crate::error::{Error, Result};
use crate::pricing::{ModelKind, ModelSpec, TokenUsage};
use crate::schema::{LabelDef, LabelValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub value: LabelValue,
    /// Log-probabilities of the emitted label tokens; each `<= 0`.
    pub token_logprobs: Vec<f64>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub vector: Vec<f32>,
    pub usage: TokenUsage,
    /// True when served from a cache; cached results carry zero usage.
    #[serde(default)]
    pub cached: bool,
}

pub trait ModelBackend: Send + Sync {
    fn generate_label(
        &self,
        model: &ModelSpec,
        email: &Email,
        label: &LabelDef,
    ) -> Result<GenerationResult>;

    fn embed(&self, model: &ModelSpec, email: &Email) -> Result<EmbeddingResult>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn generate_label(
        &self,
        model: &ModelSpec,
        email: &Email,
        label: &LabelDef,
    ) -> Result<GenerationResult> {
        (**self).generate_label(model, email, label)
    }

    fn embed(&self, model: &ModelSpec, email: &Email) -> Result<EmbeddingResult> {
        (**self).embed(model, email)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<B> {
    fn generate_label(
        &self,
        model: &ModelSpec,
        email: &Email,
        label: &LabelDef,
    ) -> Result<GenerationResult> {
        (**self).generate_label(model, email, label)
    }

    fn embed(&self, model: &ModelSpec, email: &Email) -> Result<EmbeddingResult> {
        (**self).embed(model, email)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for Box<B> {
    fn generate_label(
        &self,
        model: &ModelSpec,
        email: &Email,
        label: &LabelDef,
    ) -> Result<GenerationResult> {
        (**self).generate_label(model, email, label)
    }

    fn embed(&self, model: &ModelSpec, email: &Email) -> Result<EmbeddingResult> {
        (**self).embed(model, email)
    }
}

pub(crate) fn require_kind(model: &ModelSpec, kind: ModelKind) -> Result<()> {
    if model.kind == kind {
        Ok(())
    } else {
        Err(Error::WrongModelKind {
            model: model.name.clone(),
            detail: format!("expected a {kind:?} model"),
        })
    }
}

/// Rejects generated values outside the label's class set.
pub fn check_generation(model: &ModelSpec, label: &LabelDef, result: &GenerationResult) -> Result<()> {
    if !label.contains(result.value.value) {
        return Err(Error::MalformedOutput {
            model: model.name.clone(),
            detail: format!(
                "value {} not in class set of `{}`",
                result.value.value, label.name
            ),
        });
    }
    if result.token_logprobs.is_empty() {
        return Err(Error::MalformedOutput {
            model: model.name.clone(),
            detail: "no token log-probabilities".into(),
        });
    }
    if let Some(lp) = result
        .token_logprobs
        .iter()
        .find(|lp| lp.is_nan() || **lp > 0.0)
    {
        return Err(Error::MalformedOutput {
            model: model.name.clone(),
            detail: format!("log-probability {lp} is not <= 0"),
        });
    }
    Ok(())
}

/// Token usage assumed for a label request when the backend reports none:
/// the email's estimate plus a fixed prompt overhead, one output token.
pub fn estimated_label_usage(email: &Email) -> TokenUsage {
    TokenUsage::new(email.token_count_estimate + PROMPT_OVERHEAD_TOKENS, 1)
}

/// Usage assumed for an embedding request.
pub fn estimated_embedding_usage(email: &Email) -> TokenUsage {
    TokenUsage::new(email.token_count_estimate.max(1), 0)
}

pub const PROMPT_OVERHEAD_TOKENS: u64 = 48;

/// Instruction sent to generative models for one label.
pub fn prompt_for(label: &LabelDef) -> String {
    let classes = label
        .classes()
        .iter()
        .map(i32::to_string)
        .collect::<Vec<_>>()
        .join(", ");
    let meaning = if label.is_binary() {
        "1 means yes and 0 means no".to_string()
    } else {
        "higher means more important".to_string()
    };
    format!(
        "You label emails. Label: {}. Allowed values: {classes} ({meaning}). \
         Answer with a single integer.",
        label.name
    )
}
