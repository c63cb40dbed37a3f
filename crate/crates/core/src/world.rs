//! Seeded synthetic inboxes with baseline labels.
//!
//! The first multiclass label in the schema drives the others: it is drawn
//! from `driver_weights`, and each binary label is then drawn independently
//! with `P(label = 1 | driver class)` from `conditionals`.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Email, LabelTable};
use crate::error::{Error, Result};
use crate::hashing::keyed_rng;
use crate::schema::{LabelSchema, IS_URGENT, NEEDS_ACTION, NEEDS_REPLY, NEEDS_SCHEDULING};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    /// Emails available to grow the calibration set.
    pub stream: usize,
    pub validation: usize,
    /// Held-out emails for `label` and `evaluate`.
    pub test: usize,
    /// Distribution of the driver label, one weight per class.
    pub driver_weights: Vec<f64>,
    /// `P(label = 1 | driver class)` per binary label; missing labels use 0.5.
    pub conditionals: BTreeMap<String, Vec<f64>>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        let conditionals = [
            (NEEDS_REPLY, [0.20, 0.35, 0.50, 0.70, 0.80]),
            (IS_URGENT, [0.15, 0.20, 0.30, 0.97, 0.80]),
            (NEEDS_ACTION, [0.20, 0.30, 0.50, 0.65, 0.80]),
            (NEEDS_SCHEDULING, [0.25, 0.02, 0.40, 0.50, 0.60]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_vec()))
        .collect();
        Self {
            stream: 1000,
            validation: 300,
            test: 500,
            driver_weights: vec![0.15, 0.30, 0.25, 0.20, 0.10],
            conditionals,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        let driver = driver_label(schema)?;
        let k = schema.labels[driver].classes().len();
        if self.driver_weights.len() != k {
            return Err(Error::Config(format!(
                "world.driver_weights has {} entries, the driver label has {k} classes",
                self.driver_weights.len()
            )));
        }
        if self.driver_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.driver_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config("world.driver_weights must be nonnegative with a positive sum".into()));
        }
        for (name, probs) in &self.conditionals {
            let def = schema.get(name).ok_or_else(|| Error::UnknownLabel(name.clone()))?;
            if !def.is_binary() {
                return Err(Error::Config(format!("world conditional for `{name}`, which is not binary")));
            }
            if probs.len() != k || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config(format!(
                    "world conditional for `{name}` needs {k} probabilities in [0, 1]"
                )));
            }
        }
        if self.stream + self.validation + self.test == 0 {
            return Err(Error::Config("world has no emails".into()));
        }
        Ok(())
    }
}

fn driver_label(schema: &LabelSchema) -> Result<usize> {
    schema
        .labels
        .iter()
        .position(|l| !l.is_binary())
        .ok_or_else(|| Error::Config("world generation needs a multiclass label to drive the others".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub stream: Vec<Email>,
    pub validation: Vec<Email>,
    pub test: Vec<Email>,
    pub baseline: LabelTable,
}

const OPENERS: [&str; 5] = ["fyi", "newsletter", "question", "follow-up", "urgent"];
const WORDS: [&str; 16] = [
    "meeting", "invoice", "deadline", "report", "review", "schedule", "client", "budget",
    "update", "contract", "draft", "call", "approval", "travel", "agenda", "release",
];

fn email_text(id: &str, class_index: usize, seed: u64) -> Email {
    let mut rng = keyed_rng(seed, &["world-text", id]);
    let opener = OPENERS[class_index.min(OPENERS.len() - 1)];
    let pick = |rng: &mut rand_chacha::ChaCha8Rng| WORDS[rng.random_range(0..WORDS.len())];
    let subject = format!("{opener}: {} {}", pick(&mut rng), pick(&mut rng));
    let words = rng.random_range(20..120);
    let body: Vec<&str> = (0..words).map(|_| pick(&mut rng)).collect();
    let mut email = Email::new(id, &subject, &body.join(" "));
    email
        .metadata
        .insert("sender".into(), format!("user{}@example.com", rng.random_range(0..50)));
    email
}

/// Generates `stream + validation + test` emails. Identical seeds give
/// identical worlds.
pub fn generate(spec: &WorldSpec, schema: &LabelSchema, seed: u64) -> Result<World> {
    spec.validate(schema)?;
    let driver = driver_label(schema)?;
    let driver_def = &schema.labels[driver];
    let weights = WeightedIndex::new(&spec.driver_weights)
        .map_err(|e| Error::Config(format!("world.driver_weights: {e}")))?;
    let total = spec.stream + spec.validation + spec.test;
    let mut emails = Vec::with_capacity(total);
    let mut baseline = LabelTable::new();
    for n in 0..total {
        let id = format!("email-{n:06}");
        let mut rng = keyed_rng(seed, &["world-labels", &id]);
        let k = weights.sample(&mut rng);
        baseline.insert(&id, &driver_def.name, driver_def.classes()[k]);
        for label in schema.labels.iter().filter(|l| l.is_binary()) {
            let p = spec.conditionals.get(&label.name).map_or(0.5, |v| v[k]);
            baseline.insert(&id, &label.name, (rng.random::<f64>() < p) as i32);
        }
        for (i, label) in schema.labels.iter().enumerate() {
            if i != driver && !label.is_binary() {
                let classes = label.classes();
                baseline.insert(&id, &label.name, classes[rng.random_range(0..classes.len())]);
            }
        }
        emails.push(email_text(&id, k, seed));
    }
    let test = emails.split_off(spec.stream + spec.validation);
    let validation = emails.split_off(spec.stream);
    Ok(World {
        stream: emails,
        validation,
        test,
        baseline,
    })
}
