use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::{EmbeddingResult, GenerationResult, ModelBackend};
use crate::dataset::Email;
use crate::error::Result;
use crate::pricing::{ModelSpec, TokenUsage};
use crate::schema::LabelDef;

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    model: String,
    email_id: String,
    vector: Vec<f32>,
}

/// Embedding cache keyed by `(model name, email id)`.
///
/// Hits never reach the wrapped backend and carry zero usage. Label
/// generation passes straight through.
#[derive(Debug, Default)]
pub struct EmbeddingCache<B> {
    inner: B,
    entries: RwLock<HashMap<(String, String), Vec<f32>>>,
}

impl<B> EmbeddingCache<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            entries: RwLock::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }

    pub fn get(&self, model: &str, email_id: &str) -> Option<Vec<f32>> {
        self.entries
            .read()
            .get(&(model.to_string(), email_id.to_string()))
            .cloned()
    }

    pub fn insert(&self, model: &str, email_id: &str, vector: Vec<f32>) {
        self.entries
            .write()
            .insert((model.to_string(), email_id.to_string()), vector);
    }

    /// Writes the cache as JSON, sorted by key.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.entries.read();
        let mut list: Vec<CacheEntry> = entries
            .iter()
            .map(|((model, email_id), vector)| CacheEntry {
                model: model.clone(),
                email_id: email_id.clone(),
                vector: vector.clone(),
            })
            .collect();
        list.sort_by(|a, b| (&a.model, &a.email_id).cmp(&(&b.model, &b.email_id)));
        serde_json::to_writer(BufWriter::new(File::create(path)?), &list)?;
        Ok(())
    }

    /// Merges entries from a file written by [`save`](Self::save).
    pub fn load_into(&self, path: &Path) -> Result<usize> {
        let list: Vec<CacheEntry> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let n = list.len();
        let mut entries = self.entries.write();
        for e in list {
            entries.insert((e.model, e.email_id), e.vector);
        }
        Ok(n)
    }
}

impl<B: ModelBackend> ModelBackend for EmbeddingCache<B> {
    fn generate_label(
        &self,
        model: &ModelSpec,
        email: &Email,
        label: &LabelDef,
    ) -> Result<GenerationResult> {
        self.inner.generate_label(model, email, label)
    }

    fn embed(&self, model: &ModelSpec, email: &Email) -> Result<EmbeddingResult> {
        if let Some(vector) = self.get(&model.name, &email.id) {
            return Ok(EmbeddingResult {
                vector,
                usage: TokenUsage::default(),
                cached: true,
            });
        }
        let result = self.inner.embed(model, email)?;
        self.insert(&model.name, &email.id, result.vector.clone());
        Ok(result)
    }
}
