use std::collections::BTreeMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{EmbeddingResult, GenerationResult, ModelBackend};
use crate::dataset::Email;
use crate::error::Result;
use crate::pricing::{request_cost, Currency, ModelSpec, TokenUsage};
use crate::schema::LabelDef;

/// Calls and billing for one model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCounter {
    pub calls: u64,
    pub usage: TokenUsage,
    pub billed: Currency,
}

/// Wraps a backend and records one counter increment per successful call.
///
/// Failed calls are counted under `failures` and are not billed.
#[derive(Debug, Default)]
pub struct Metered<B> {
    inner: B,
    counters: Mutex<BTreeMap<String, ModelCounter>>,
    failures: Mutex<BTreeMap<String, u64>>,
}

impl<B> Metered<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            counters: Mutex::new(BTreeMap::new()),
            failures: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn counters(&self) -> BTreeMap<String, ModelCounter> {
        self.counters.lock().clone()
    }

    pub fn failures(&self) -> BTreeMap<String, u64> {
        self.failures.lock().clone()
    }

    pub fn total_calls(&self) -> u64 {
        self.counters.lock().values().map(|c| c.calls).sum()
    }

    pub fn calls_for(&self, model: &str) -> u64 {
        self.counters.lock().get(model).map_or(0, |c| c.calls)
    }

    pub fn total_billed(&self) -> Currency {
        self.counters.lock().values().map(|c| c.billed).sum()
    }

    pub fn reset(&self) {
        self.counters.lock().clear();
        self.failures.lock().clear();
    }

    fn record<T>(&self, model: &ModelSpec, result: &Result<T>, usage: impl Fn(&T) -> TokenUsage) {
        match result {
            Ok(r) => {
                let usage = usage(r);
                let mut counters = self.counters.lock();
                let c = counters.entry(model.name.clone()).or_default();
                c.calls += 1;
                c.usage = c.usage + usage;
                c.billed += request_cost(model, usage);
            }
            Err(_) => *self.failures.lock().entry(model.name.clone()).or_default() += 1,
        }
    }
}

impl<B: ModelBackend> ModelBackend for Metered<B> {
    fn generate_label(
        &self,
        model: &ModelSpec,
        email: &Email,
        label: &LabelDef,
    ) -> Result<GenerationResult> {
        let result = self.inner.generate_label(model, email, label);
        self.record(model, &result, |r| r.usage);
        result
    }

    fn embed(&self, model: &ModelSpec, email: &Email) -> Result<EmbeddingResult> {
        let result = self.inner.embed(model, email);
        self.record(model, &result, |r| r.usage);
        result
    }
}
