//! Backend-free evaluation of labeling configurations over captured
//! single-model outputs, threshold pruning, and the threshold sweep.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TradeoffPoint;
use crate::backend::{estimated_label_usage, SoloOutputs};
use crate::cascade::{logprob_to_confidence, CascadeConfig, LabelPlan, Method, SkipRule};
use crate::classifier::ClassifierBundle;
use crate::dataset::{Email, LabelTable};
use crate::error::{Error, Result};
use crate::labeling::{LabelingConfig, Score};
use crate::metrics::{cost_reduction_factor, f1_for_label, mean};
use crate::pricing::{blended_cost, ModelPool, ModelSpec};
use crate::schema::{LabelDef, LabelSchema};

#[derive(Debug, Clone, Copy)]
struct Cell {
    value: Option<i32>,
    confidence: f64,
    blended: f64,
}

/// Captured outputs laid out as dense arrays for fast replay.
///
/// Replaying a configuration here gives exactly the labels, costs and scores
/// the full labeling pipeline would give over a [`crate::backend::ReplayBackend`]
/// on the same outputs.
#[derive(Debug, Clone)]
pub struct SweepTable {
    labels: Vec<LabelDef>,
    models: Vec<String>,
    email_ids: Vec<String>,
    cells: Vec<Cell>,
    reference: Vec<i32>,
    classifier: Option<ClassifierColumn>,
    /// Baseline blended cost of one label request, per email.
    baseline_per_label: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ClassifierColumn {
    /// Per email, per label; `None` for labels the classifier does not cover.
    predictions: Vec<Option<i32>>,
    embed_blended: Vec<f64>,
}

/// Per-label labeling method in a [`SweepTable`] replay.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplayMethod {
    /// Indices into the table's models, in cascade order, with thresholds.
    Cascade(Vec<usize>, Vec<f64>),
    Classifier,
}

/// Result of replaying one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub score: Score,
    pub blended_cost: f64,
    /// Per label, per email (in table order), the assigned value.
    pub predictions: Vec<Vec<i32>>,
    /// Number of cascade labels kept from each table model.
    pub finished_at: Vec<u64>,
    pub skipped: u64,
    /// Generative calls a live run would make.
    pub generation_calls: u64,
    pub embedding_calls: u64,
    /// Confidence of every kept cascade label.
    pub chosen_confidences: Vec<f64>,
}

struct CompiledRule {
    condition_label: usize,
    condition_value: i32,
    value: i32,
    confidence: f64,
}

impl SweepTable {
    /// Builds the table for `models` over `emails`. Every (model, email,
    /// label) output must be present.
    pub fn new(
        outputs: &SoloOutputs,
        models: &[&ModelSpec],
        emails: &[Email],
        schema: &LabelSchema,
        baseline_labels: &LabelTable,
        baseline: &ModelSpec,
    ) -> Result<Self> {
        let l = schema.len();
        let m = models.len();
        let mut cells = Vec::with_capacity(emails.len() * l * m);
        let mut reference = Vec::with_capacity(emails.len() * l);
        for e in emails {
            for label in &schema.labels {
                reference.push(baseline_labels.require(&e.id, &label.name)?);
                for spec in models {
                    let out = outputs.require(&spec.name, &e.id, &label.name)?;
                    let well_formed = !out.token_logprobs.is_empty()
                        && out.token_logprobs.iter().all(|lp| !lp.is_nan() && *lp <= 0.0);
                    let usable = out.value.filter(|v| well_formed && label.contains(*v));
                    let cell = match usable {
                        Some(v) => Cell {
                            value: Some(v),
                            confidence: logprob_to_confidence(&out.token_logprobs)?,
                            blended: blended_cost(spec, out.usage),
                        },
                        None => Cell {
                            value: None,
                            confidence: 0.0,
                            blended: 0.0,
                        },
                    };
                    cells.push(cell);
                }
            }
        }
        Ok(Self {
            labels: schema.labels.clone(),
            models: models.iter().map(|s| s.name.clone()).collect(),
            email_ids: emails.iter().map(|e| e.id.clone()).collect(),
            cells,
            reference,
            classifier: None,
            baseline_per_label: emails
                .iter()
                .map(|e| blended_cost(baseline, estimated_label_usage(e)))
                .collect(),
        })
    }

    /// Adds classifier predictions from captured embeddings.
    pub fn set_classifier(&mut self, outputs: &SoloOutputs, bundle: &ClassifierBundle, pool: &ModelPool) -> Result<()> {
        let spec = pool.get(&bundle.embedding_model)?;
        let mut predictions = Vec::with_capacity(self.email_ids.len() * self.labels.len());
        let mut embed_blended = Vec::with_capacity(self.email_ids.len());
        for id in &self.email_ids {
            let (vector, usage) = outputs.embedding(&spec.name, id).ok_or_else(|| Error::MissingCacheEntry {
                model: spec.name.clone(),
                email_id: id.clone(),
                label: "<embedding>".into(),
            })?;
            let values = bundle.predict_values(vector)?;
            predictions.extend(self.labels.iter().map(|l| values.get(&l.name).copied()));
            embed_blended.push(blended_cost(spec, *usage));
        }
        self.classifier = Some(ClassifierColumn {
            predictions,
            embed_blended,
        });
        Ok(())
    }

    pub fn clear_classifier(&mut self) {
        self.classifier = None;
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn email_ids(&self) -> &[String] {
        &self.email_ids
    }

    pub fn len(&self) -> usize {
        self.email_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.email_ids.is_empty()
    }

    /// Baseline blended cost over the emails at `subset` (all when `None`),
    /// accumulated in the same order as
    /// [`crate::labeling::baseline_blended_cost`].
    pub fn baseline_cost(&self, subset: Option<&[usize]>) -> f64 {
        let mut total = 0.0;
        let mut add = |e: usize| {
            for _ in &self.labels {
                total += self.baseline_per_label[e];
            }
        };
        match subset {
            Some(s) => s.iter().for_each(|&e| add(e)),
            None => (0..self.email_ids.len()).for_each(add),
        }
        total
    }

    fn cell(&self, email: usize, label: usize, model: usize) -> &Cell {
        &self.cells[(email * self.labels.len() + label) * self.models.len() + model]
    }

    /// `(confidence, agrees with baseline)` for every output of `model`.
    pub fn confidence_agreement(&self, model: usize) -> Vec<(f64, bool)> {
        let l = self.labels.len();
        let mut out = Vec::with_capacity(self.email_ids.len() * l);
        for e in 0..self.email_ids.len() {
            for j in 0..l {
                let c = self.cell(e, j, model);
                out.push((c.confidence, c.value == Some(self.reference[e * l + j])));
            }
        }
        out
    }

    /// Translates a labeling configuration into replay methods.
    pub fn methods_for(&self, config: &LabelingConfig) -> Result<Vec<ReplayMethod>> {
        self.labels
            .iter()
            .map(|label| match config.plan.method(&label.name) {
                Some(Method::Cascade(c)) => {
                    let idx = c
                        .models
                        .iter()
                        .map(|m| {
                            self.models
                                .iter()
                                .position(|x| x == m)
                                .ok_or_else(|| Error::UnknownModel(m.clone()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok(ReplayMethod::Cascade(idx, c.thresholds.clone()))
                }
                Some(Method::Classifier) => Ok(ReplayMethod::Classifier),
                None => Err(Error::Config(format!("plan has no method for `{}`", label.name))),
            })
            .collect()
    }

    fn compile_rules(&self, rules: &[SkipRule]) -> Result<Vec<Vec<CompiledRule>>> {
        let pos = |name: &str| {
            self.labels
                .iter()
                .position(|l| l.name == name)
                .ok_or_else(|| Error::UnknownLabel(name.to_string()))
        };
        let mut by_label: Vec<Vec<CompiledRule>> = (0..self.labels.len()).map(|_| Vec::new()).collect();
        for r in rules {
            by_label[pos(&r.consequence.label)?].push(CompiledRule {
                condition_label: pos(&r.condition.label)?,
                condition_value: r.condition.value,
                value: r.consequence.value,
                confidence: r.confidence,
            });
        }
        Ok(by_label)
    }

    /// Replays a configuration over the emails at `subset` (all when `None`).
    pub fn replay(&self, methods: &[ReplayMethod], rules: &[SkipRule], subset: Option<&[usize]>) -> Result<Replay> {
        let l = self.labels.len();
        let all: Vec<usize>;
        let emails: &[usize] = match subset {
            Some(s) => s,
            None => {
                all = (0..self.email_ids.len()).collect();
                &all
            }
        };
        let rules = self.compile_rules(rules)?;
        let mut predictions: Vec<Vec<i32>> = (0..l).map(|_| Vec::with_capacity(emails.len())).collect();
        let mut references: Vec<Vec<i32>> = (0..l).map(|_| Vec::with_capacity(emails.len())).collect();
        let mut finished_at = vec![0u64; self.models.len()];
        let mut chosen_confidences = Vec::new();
        let (mut skipped, mut generation_calls, mut embedding_calls) = (0u64, 0u64, 0u64);
        let mut total = 0.0;
        let mut assigned = vec![0i32; l];
        for &e in emails {
            let mut embedded = false;
            for j in 0..l {
                let mut best: Option<&CompiledRule> = None;
                for r in &rules[j] {
                    if assigned[r.condition_label] == r.condition_value
                        && best.is_none_or(|b| r.confidence > b.confidence)
                    {
                        best = Some(r);
                    }
                }
                let value = if let Some(r) = best {
                    skipped += 1;
                    r.value
                } else {
                    match &methods[j] {
                        ReplayMethod::Cascade(models, thresholds) => {
                            let mut cost = 0.0;
                            let mut kept: Option<(usize, &Cell)> = None;
                            for (&m, &t) in models.iter().zip(thresholds) {
                                let c = self.cell(e, j, m);
                                generation_calls += 1;
                                cost += c.blended;
                                if c.value.is_some() {
                                    kept = Some((m, c));
                                    if c.confidence >= t {
                                        break;
                                    }
                                }
                            }
                            let (m, c) = kept.ok_or_else(|| Error::MalformedOutput {
                                model: models.last().map(|&m| self.models[m].clone()).unwrap_or_default(),
                                detail: "no model in the cascade produced a usable label".into(),
                            })?;
                            total += cost;
                            finished_at[m] += 1;
                            chosen_confidences.push(c.confidence);
                            c.value.expect("kept cells are usable")
                        }
                        ReplayMethod::Classifier => {
                            let col = self.classifier.as_ref().ok_or_else(|| {
                                Error::Config(format!(
                                    "`{}` is routed to the classifier but none is loaded",
                                    self.labels[j].name
                                ))
                            })?;
                            if !embedded {
                                embedded = true;
                                embedding_calls += 1;
                                total += col.embed_blended[e];
                            }
                            col.predictions[e * l + j]
                                .ok_or_else(|| Error::UnknownLabel(self.labels[j].name.clone()))?
                        }
                    }
                };
                assigned[j] = value;
                predictions[j].push(value);
                references[j].push(self.reference[e * l + j]);
            }
        }
        let mut per_label_f1 = BTreeMap::new();
        for (j, label) in self.labels.iter().enumerate() {
            per_label_f1.insert(label.name.clone(), f1_for_label(label, &predictions[j], &references[j])?);
        }
        let baseline = self.baseline_cost(Some(emails));
        Ok(Replay {
            score: Score {
                average_f1: mean(per_label_f1.values().copied()),
                per_label_f1,
                cost: cost_reduction_factor(total, baseline),
            },
            blended_cost: total,
            predictions,
            finished_at,
            skipped,
            generation_calls,
            embedding_calls,
            chosen_confidences,
        })
    }

    /// Evaluates a full labeling configuration.
    pub fn evaluate(&self, config: &LabelingConfig) -> Result<TradeoffPoint> {
        let replay = self.replay(&self.methods_for(config)?, &config.skip_rules, None)?;
        Ok(TradeoffPoint::new(config.clone(), &replay.score))
    }
}

/// Outcome of pruning one model's threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub model: String,
    /// `None` when no grid value qualified and the full grid was kept.
    pub floor: Option<f64>,
    pub grid: Vec<f64>,
    /// Agreement rate per grid bin `[g_k, g_{k+1})`, `None` for empty bins.
    pub bin_agreement: Vec<Option<f64>>,
}

/// Drops grid values below the model's confidence floor.
///
/// The grid splits confidences into bins `[g_k, g_{k+1})`, the last bin
/// open-ended. The floor is the smallest grid value `v` such that some
/// output has confidence `≥ v` and every non-empty bin from `v` upward
/// agrees with the baseline at a rate of at least `cutoff`. Without such a
/// value the full grid is returned.
pub fn prune_thresholds(model: &str, pairs: &[(f64, bool)], grid: &[f64], cutoff: f64) -> PruneOutcome {
    let k = grid.len();
    let mut hits = vec![0u64; k];
    let mut counts = vec![0u64; k];
    for &(conf, agrees) in pairs {
        if k == 0 || conf < grid[0] {
            continue;
        }
        let bin = grid.partition_point(|&g| g <= conf) - 1;
        counts[bin] += 1;
        hits[bin] += agrees as u64;
    }
    let bin_agreement: Vec<Option<f64>> = (0..k)
        .map(|b| (counts[b] > 0).then(|| hits[b] as f64 / counts[b] as f64))
        .collect();
    // Scan from the top: `ok_from[b]` holds when every non-empty bin >= b is
    // good and at least one of them is non-empty.
    let mut floor = None;
    let mut all_good = true;
    let mut any = false;
    for b in (0..k).rev() {
        if let Some(a) = bin_agreement[b] {
            any = true;
            all_good &= a >= cutoff;
        }
        if !all_good {
            break;
        }
        if any {
            floor = Some(b);
        }
    }
    match floor {
        Some(b) => PruneOutcome {
            model: model.to_string(),
            floor: Some(grid[b]),
            grid: grid[b..].to_vec(),
            bin_agreement,
        },
        None => {
            log::warn!("{model}: no confidence floor found, keeping the full threshold grid");
            PruneOutcome {
                model: model.to_string(),
                floor: None,
                grid: grid.to_vec(),
                bin_agreement,
            }
        }
    }
}

/// `0, step, 2·step, …, 1`, with each value computed as `i / n`.
pub fn uniform_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .collect()
}

/// Every threshold vector drawn from `grids`, first model varying slowest.
pub fn threshold_combinations(grids: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for g in grids {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                g.iter().map(move |&t| {
                    let mut v = prefix.clone();
                    v.push(t);
                    v
                })
            })
            .collect();
    }
    out
}

/// What stays fixed while the thresholds vary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTemplate {
    /// Labels routed to the classifier; all others use the swept cascade.
    pub classifier_labels: Vec<String>,
    pub skip_rules: Vec<SkipRule>,
}

impl SweepTemplate {
    pub fn config(&self, schema: &LabelSchema, models: &[String], thresholds: &[f64]) -> LabelingConfig {
        let methods = schema
            .labels
            .iter()
            .map(|l| {
                let m = if self.classifier_labels.contains(&l.name) {
                    Method::Classifier
                } else {
                    Method::Cascade(CascadeConfig {
                        label_name: l.name.clone(),
                        models: models.to_vec(),
                        thresholds: thresholds.to_vec(),
                    })
                };
                (l.name.clone(), m)
            })
            .collect();
        LabelingConfig {
            plan: LabelPlan { methods },
            skip_rules: self.skip_rules.clone(),
        }
    }
}

/// Evaluates the cascade over `models` for every combination of per-model
/// thresholds from `grids`. `check` sees every generated configuration
/// before it is evaluated.
pub fn sweep_thresholds(
    table: &SweepTable,
    schema: &LabelSchema,
    models: &[String],
    grids: &[Vec<f64>],
    template: &SweepTemplate,
    mut check: impl FnMut(&LabelingConfig) -> Result<()>,
) -> Result<Vec<TradeoffPoint>> {
    if models.len() != grids.len() {
        return Err(Error::LengthMismatch {
            left: models.len(),
            right: grids.len(),
        });
    }
    let combos = threshold_combinations(grids);
    let mut points = Vec::with_capacity(combos.len());
    for thresholds in combos {
        let config = template.config(schema, models, &thresholds);
        check(&config)?;
        points.push(table.evaluate(&config)?);
    }
    Ok(points)
}
