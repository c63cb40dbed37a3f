use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    estimated_embedding_usage, estimated_label_usage, prompt_for, require_kind, EmbeddingResult,
    GenerationResult, ModelBackend,
};
use crate::dataset::Email;
use crate::error::{Error, Result};
use crate::pricing::{ModelKind, ModelSpec, TokenUsage};
use crate::schema::{LabelDef, LabelValue};

const MAX_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` and `/embeddings` are appended.
    pub endpoint: String,
    /// Environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_key_env() -> String {
    "TRIAGE_API_KEY".to_string()
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl HttpConfig {
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            api_key_env: default_key_env(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

/// Chat-completions style JSON client.
///
/// Requests are `{model, messages, logprobs: true}`; the response must carry
/// per-token log-probabilities. Transport errors and 5xx responses are
/// retried up to three attempts in total.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).ok();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn post(&self, model: &str, path: &str, body: &Value) -> Result<Value> {
        let unavailable = |reason: String| Error::BackendUnavailable {
            model: model.to_string(),
            reason,
        };
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            let mut req = self.client.post(self.url(path)).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .json::<Value>()
                        .map_err(|e| unavailable(format!("invalid JSON body: {e}")));
                }
                Ok(resp) if resp.status().is_server_error() => {
                    last = format!("HTTP {}", resp.status());
                }
                Ok(resp) => return Err(unavailable(format!("HTTP {}", resp.status()))),
                Err(e) => last = e.to_string(),
            }
            log::warn!("{model}: attempt {attempt}/{MAX_ATTEMPTS} failed: {last}");
        }
        Err(unavailable(format!("{MAX_ATTEMPTS} attempts failed: {last}")))
    }
}

fn usage_from(v: &Value) -> Option<TokenUsage> {
    let u = v.get("usage")?;
    let input = u.get("prompt_tokens")?.as_u64()?;
    let output = u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0);
    Some(TokenUsage::new(input, output))
}

/// Extracts `(value, token logprobs, usage)` from a chat-completions reply.
pub(crate) fn parse_completion(
    model: &str,
    label: &LabelDef,
    reply: &Value,
) -> Result<(i32, Vec<f64>, Option<TokenUsage>)> {
    let malformed = |detail: &str| Error::MalformedOutput {
        model: model.to_string(),
        detail: detail.to_string(),
    };
    let choice = reply
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("no choices"))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("no message content"))?;
    let value: i32 = content
        .trim()
        .parse()
        .map_err(|_| malformed(&format!("not a single integer: {content:?}")))?;
    if !label.contains(value) {
        return Err(malformed(&format!("value {value} outside class set")));
    }
    let logprobs: Vec<f64> = choice
        .pointer("/logprobs/content")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("response lacks token logprobs"))?
        .iter()
        .filter_map(|t| t.get("logprob").and_then(Value::as_f64))
        .collect();
    if logprobs.is_empty() || logprobs.iter().any(|lp| lp.is_nan() || *lp > 0.0) {
        return Err(malformed("token logprobs missing or positive"));
    }
    Ok((value, logprobs, usage_from(reply)))
}

impl ModelBackend for HttpBackend {
    fn generate_label(
        &self,
        model: &ModelSpec,
        email: &Email,
        label: &LabelDef,
    ) -> Result<GenerationResult> {
        require_kind(model, ModelKind::Generative)?;
        let body = json!({
            "model": model.name,
            "messages": [
                {"role": "system", "content": prompt_for(label)},
                {"role": "user", "content": format!("Subject: {}\n\n{}", email.subject, email.body)},
            ],
            "logprobs": true,
            "temperature": 0,
            "max_tokens": 4,
        });
        let reply = self.post(&model.name, "chat/completions", &body)?;
        let (value, token_logprobs, usage) = parse_completion(&model.name, label, &reply)?;
        Ok(GenerationResult {
            value: LabelValue::new(&label.name, value),
            token_logprobs,
            usage: usage.unwrap_or_else(|| estimated_label_usage(email)),
        })
    }

    fn embed(&self, model: &ModelSpec, email: &Email) -> Result<EmbeddingResult> {
        require_kind(model, ModelKind::Embedding)?;
        let body = json!({
            "model": model.name,
            "input": format!("Subject: {}\n\n{}", email.subject, email.body),
        });
        let reply = self.post(&model.name, "embeddings", &body)?;
        let vector: Vec<f32> = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::MalformedOutput {
                model: model.name.clone(),
                detail: "no embedding in response".into(),
            })?
            .iter()
            .map(|x| x.as_f64().map(|v| v as f32))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::MalformedOutput {
                model: model.name.clone(),
                detail: "non-numeric embedding".into(),
            })?;
        Ok(EmbeddingResult {
            vector,
            usage: usage_from(&reply).unwrap_or_else(|| estimated_embedding_usage(email)),
            cached: false,
        })
    }
}
