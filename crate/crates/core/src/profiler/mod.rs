//! Offline search over the labeling knob space.
//!
//! The knobs are the labeling method per label (ℒ), the cascade models (ℳ),
//! their confidence thresholds (𝒯), their order (𝒪) and the calibration size
//! (𝒮). Rather than evaluating every combination, the profiler treats them
//! as independent: every candidate model is run alone once per calibration
//! label, the cascade members are the Pareto-efficient solo models in size
//! order, and thresholds are swept over the captured solo outputs without
//! further backend calls.

pub mod growth;
pub mod pareto;
pub mod rules;
pub mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use growth::{grow_calibration, write_outputs, ChosenConfig, GrowthOutcome, GrowthStep, KnobStage, ProfileReport};
pub use pareto::{
    choose_tradeoff, choose_tradeoff_anchored, hypervolume, pareto_front, Anchors, TradeoffWeights,
};
pub use rules::{assign_methods, mine_skip_rules, MethodDecision, MethodKind};
pub use sweep::{prune_thresholds, sweep_thresholds, uniform_grid, PruneOutcome, SweepTable, SweepTemplate};

use crate::backend::{check_generation, Metered, ModelBackend, SoloOutput, SoloOutputs};
use crate::cascade::{Labeler, Method};
use crate::classifier::{train, ClassifierBundle, TrainingConfig};
use crate::dataset::{Email, LabelTable};
use crate::error::{Error, Result};
use crate::hashing::keyed_unit;
use crate::labeling::{label_emails, score_run, LabeledRun, LabelingConfig, Score};
use crate::metrics::f1_binary;
use crate::pricing::{ModelKind, ModelPool, ModelSpec};
use crate::schema::LabelSchema;

/// A configuration with its measured quality and cost reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub config: LabelingConfig,
    pub config_hash: String,
    /// Average F1 against the baseline labels.
    pub quality: f64,
    /// Baseline blended cost divided by the configuration's.
    pub cost_reduction: f64,
    pub cost_capped: bool,
    pub per_label_f1: BTreeMap<String, f64>,
}

impl TradeoffPoint {
    pub fn new(config: LabelingConfig, score: &Score) -> Self {
        Self {
            config_hash: config.hash(),
            config,
            quality: score.average_f1,
            cost_reduction: score.cost.value,
            cost_capped: score.cost.capped,
            per_label_f1: score.per_label_f1.clone(),
        }
    }
}

/// Calibration growth: start size, step, and upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthSchedule {
    pub initial: usize,
    pub increment: usize,
    pub cap: usize,
}

impl Default for GrowthSchedule {
    fn default() -> Self {
        Self {
            initial: 100,
            increment: 100,
            cap: 1000,
        }
    }
}

fn default_methods() -> Vec<MethodKind> {
    vec![MethodKind::Cascade, MethodKind::Classifier]
}

fn default_grid() -> Vec<f64> {
    uniform_grid(0.0, 1.0, 20)
}

/// The knob space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilerKnobs {
    /// ℒ: methods the profiler may assign to a label.
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodKind>,
    /// ℳ: candidate generative models. Empty means every generative model
    /// in the pool other than the baseline.
    #[serde(default)]
    pub models: Vec<String>,
    /// 𝒯: threshold grid, ascending.
    #[serde(default = "default_grid")]
    pub thresholds: Vec<f64>,
    /// 𝒮: calibration growth schedule.
    #[serde(default)]
    pub calibration: GrowthSchedule,
}

impl Default for ProfilerKnobs {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            models: Vec::new(),
            thresholds: default_grid(),
            calibration: GrowthSchedule::default(),
        }
    }
}

impl ProfilerKnobs {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || !self.methods.contains(&MethodKind::Cascade) {
            return Err(Error::Config("the cascade method must be available".into()));
        }
        if self.thresholds.is_empty() {
            return Err(Error::Config("threshold grid is empty".into()));
        }
        if self
            .thresholds
            .iter()
            .any(|t| !(0.0..=1.0).contains(t))
            || self.thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(
                "threshold grid must be strictly ascending within [0, 1]".into(),
            ));
        }
        let s = self.calibration;
        if s.initial == 0 || s.increment == 0 || s.cap == 0 {
            return Err(Error::Config("calibration schedule values must be positive".into()));
        }
        Ok(())
    }

    /// 𝒪: the candidate models in ascending size order.
    pub fn order<'p>(&self, pool: &'p ModelPool, baseline: &str) -> Result<Vec<&'p ModelSpec>> {
        let mut specs: Vec<&ModelSpec> = if self.models.is_empty() {
            pool.generative()
                .into_iter()
                .filter(|m| m.name != baseline)
                .collect()
        } else {
            self.models
                .iter()
                .map(|n| pool.get(n))
                .collect::<Result<_>>()?
        };
        for s in &specs {
            if s.kind != ModelKind::Generative {
                return Err(Error::WrongModelKind {
                    model: s.name.clone(),
                    detail: "cascade candidates must be generative".into(),
                });
            }
        }
        specs.sort_by_key(|s| s.size_rank);
        Ok(specs)
    }
}

/// Operator limits on what the profiler may consider.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorConstraints {
    #[serde(default, alias = "available_model_pool")]
    pub allowed_model_pool: Option<Vec<String>>,
    #[serde(default)]
    pub banned_families: Vec<String>,
    #[serde(default)]
    pub max_cascade_size: Option<usize>,
    #[serde(default)]
    pub tradeoff_weights: TradeoffWeights,
}

impl OperatorConstraints {
    pub fn validate(&self, pool: &ModelPool) -> Result<()> {
        if let Some(allowed) = &self.allowed_model_pool {
            for name in allowed {
                pool.get(name)?;
            }
        }
        if self.max_cascade_size == Some(0) {
            return Err(Error::Config("max_cascade_size must be positive".into()));
        }
        self.tradeoff_weights.validate()
    }

    pub fn admits(&self, spec: &ModelSpec) -> bool {
        let allowed = self
            .allowed_model_pool
            .as_ref()
            .is_none_or(|a| a.iter().any(|n| n == &spec.name));
        allowed && !self.banned_families.iter().any(|f| f == &spec.family)
    }

    /// Rejects a configuration that uses a disallowed model or an
    /// oversized cascade.
    pub fn check_config(&self, config: &LabelingConfig, pool: &ModelPool) -> Result<()> {
        for name in config.cascade_models() {
            let spec = pool.get(name)?;
            if !self.admits(spec) {
                return Err(Error::Config(format!(
                    "configuration uses `{name}`, which operator constraints exclude"
                )));
            }
        }
        if let Some(max) = self.max_cascade_size {
            for m in config.plan.methods.values() {
                if let Method::Cascade(c) = m {
                    if c.models.len() > max {
                        return Err(Error::Config(format!(
                            "cascade for `{}` has {} models, more than the allowed {max}",
                            c.label_name,
                            c.models.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn d_true() -> bool {
    true
}
fn d_cutoff() -> f64 {
    0.5
}
fn d_eps() -> f64 {
    rules::DEFAULT_SKIP_EPSILON
}
fn d_support() -> f64 {
    rules::DEFAULT_MIN_SUPPORT
}
fn d_tolerance() -> f64 {
    rules::DEFAULT_METHOD_TOLERANCE
}
fn d_holdout() -> f64 {
    0.2
}
fn d_delta() -> f64 {
    0.01
}
fn d_window() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilerConfig {
    pub baseline_model: String,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default = "d_true")]
    pub enforce_constraints: bool,
    #[serde(default)]
    pub knobs: ProfilerKnobs,
    #[serde(default)]
    pub constraints: OperatorConstraints,
    /// Agreement below which a confidence bin counts as poor quality.
    #[serde(default = "d_cutoff")]
    pub poor_quality_cutoff: f64,
    #[serde(default = "d_true")]
    pub mine_skip_rules: bool,
    #[serde(default = "d_eps")]
    pub skip_epsilon: f64,
    #[serde(default = "d_support")]
    pub skip_min_support: f64,
    #[serde(default = "d_tolerance")]
    pub method_tolerance: f64,
    /// Share of the calibration set held out when comparing the classifier
    /// with the cascade.
    #[serde(default = "d_holdout")]
    pub holdout_fraction: f64,
    #[serde(default = "d_delta")]
    pub hypervolume_delta: f64,
    /// Consecutive small-gain increments needed to stop growing.
    #[serde(default = "d_window")]
    pub confirmation_window: usize,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ProfilerConfig {
    pub fn new(baseline_model: &str) -> Self {
        Self {
            baseline_model: baseline_model.to_string(),
            embedding_model: None,
            enforce_constraints: true,
            knobs: ProfilerKnobs::default(),
            constraints: OperatorConstraints::default(),
            poor_quality_cutoff: d_cutoff(),
            mine_skip_rules: true,
            skip_epsilon: d_eps(),
            skip_min_support: d_support(),
            method_tolerance: d_tolerance(),
            holdout_fraction: d_holdout(),
            hypervolume_delta: d_delta(),
            confirmation_window: d_window(),
            training: TrainingConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self, pool: &ModelPool) -> Result<()> {
        self.knobs.validate()?;
        self.constraints.validate(pool)?;
        self.training.validate()?;
        pool.get(&self.baseline_model)?;
        if let Some(e) = &self.embedding_model {
            if pool.get(e)?.kind != ModelKind::Embedding {
                return Err(Error::WrongModelKind {
                    model: e.clone(),
                    detail: "embedding_model must be an embedding model".into(),
                });
            }
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || self.confirmation_window == 0 {
            return Err(Error::Config(
                "holdout_fraction must lie in [0, 1) and confirmation_window be positive".into(),
            ));
        }
        Ok(())
    }

    fn classifier_enabled(&self) -> bool {
        self.embedding_model.is_some() && self.knobs.methods.contains(&MethodKind::Classifier)
    }

    /// Candidate cascade models after operator constraints, in size order.
    pub fn candidates<'p>(&self, pool: &'p ModelPool) -> Result<Vec<&'p ModelSpec>> {
        let mut c = self.knobs.order(pool, &self.baseline_model)?;
        if self.enforce_constraints {
            c.retain(|s| self.constraints.admits(s));
        }
        if c.is_empty() {
            return Err(Error::Config("no candidate cascade models remain".into()));
        }
        Ok(c)
    }

    fn check(&self, config: &LabelingConfig, pool: &ModelPool) -> Result<()> {
        if self.enforce_constraints {
            self.constraints.check_config(config, pool)
        } else {
            Ok(())
        }
    }
}

/// Shared inputs for evaluating configurations.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub schema: &'a LabelSchema,
    pub pool: &'a ModelPool,
    pub baseline_labels: &'a LabelTable,
    pub baseline: &'a ModelSpec,
}

/// Runs the full labeling pipeline for `config` over `emails` and scores it
/// against the baseline.
pub fn evaluate_config<B: ModelBackend + ?Sized>(
    ctx: EvalContext<'_>,
    config: &LabelingConfig,
    classifier: Option<&ClassifierBundle>,
    emails: &[Email],
    backend: &B,
) -> Result<(TradeoffPoint, LabeledRun)> {
    for e in emails {
        for l in &ctx.schema.labels {
            ctx.baseline_labels.require(&e.id, &l.name)?;
        }
    }
    let labeler = Labeler {
        schema: ctx.schema,
        pool: ctx.pool,
        plan: &config.plan,
        skip_rules: &config.skip_rules,
        classifier,
        backend,
    };
    let run = label_emails(&labeler, emails)?;
    let score = score_run(&run, ctx.schema, emails, ctx.baseline_labels, ctx.baseline)?;
    Ok((TradeoffPoint::new(config.clone(), &score), run))
}

/// Runs every model alone on every (email, label) and, if given, embeds
/// every email once. Malformed outputs are captured as such.
pub fn capture_outputs<B: ModelBackend + ?Sized>(
    backend: &B,
    models: &[&ModelSpec],
    embedding: Option<&ModelSpec>,
    emails: &[Email],
    schema: &LabelSchema,
    outputs: &mut SoloOutputs,
) -> Result<()> {
    for spec in models {
        for e in emails {
            for label in &schema.labels {
                if outputs.contains(&spec.name, &e.id, &label.name) {
                    continue;
                }
                let out = match backend
                    .generate_label(spec, e, label)
                    .and_then(|r| check_generation(spec, label, &r).map(|_| r))
                {
                    Ok(r) => SoloOutput::from_result(&r),
                    Err(Error::MalformedOutput { .. }) => SoloOutput::malformed(Default::default()),
                    Err(err) => return Err(err),
                };
                outputs.insert(&spec.name, &e.id, &label.name, out);
            }
        }
    }
    if let Some(spec) = embedding {
        for e in emails {
            if outputs.embedding(&spec.name, &e.id).is_none() {
                let r = backend.embed(spec, e)?;
                outputs.insert_embedding(&spec.name, &e.id, r.vector, r.usage);
            }
        }
    }
    Ok(())
}

/// Solo evaluation of each model, with the captured outputs.
#[derive(Debug, Clone)]
pub struct Ranking {
    pub points: Vec<TradeoffPoint>,
    pub outputs: SoloOutputs,
    pub table: SweepTable,
}

/// Evaluates each model alone (threshold 0, so one call per email and
/// label) on the calibration set.
pub fn rank_models<B: ModelBackend + ?Sized>(
    ctx: EvalContext<'_>,
    models: &[&ModelSpec],
    embedding: Option<&ModelSpec>,
    calibration: &[Email],
    backend: &B,
) -> Result<Ranking> {
    if models.is_empty() {
        return Err(Error::Config("model pool is empty".into()));
    }
    let mut outputs = SoloOutputs::new();
    capture_outputs(backend, models, embedding, calibration, ctx.schema, &mut outputs)?;
    let table = SweepTable::new(
        &outputs,
        models,
        calibration,
        ctx.schema,
        ctx.baseline_labels,
        ctx.baseline,
    )?;
    let points = models
        .iter()
        .map(|m| table.evaluate(&LabelingConfig::cascade_only(ctx.schema, std::slice::from_ref(&m.name), &[0.0])))
        .collect::<Result<_>>()?;
    Ok(Ranking {
        points,
        outputs,
        table,
    })
}

/// Cascade members: the Pareto-efficient solo models, at most `max_size`
/// of them (best weighted score first), in ascending size order.
pub fn select_models(
    models: &[&ModelSpec],
    points: &[TradeoffPoint],
    max_size: Option<usize>,
    weights: TradeoffWeights,
) -> Vec<String> {
    let coords: Vec<(f64, f64, &str)> = models
        .iter()
        .zip(points)
        .map(|(m, p)| (p.quality, p.cost_reduction, m.name.as_str()))
        .collect();
    let mut front = pareto::pareto_indices(&coords);
    if let Some(k) = max_size {
        if front.len() > k {
            let xy: Vec<(f64, f64)> = front.iter().map(|&i| (coords[i].0, coords[i].1)).collect();
            let scores = pareto::tradeoff_scores(&xy, weights, Anchors::default());
            let mut ranked: Vec<usize> = (0..front.len()).collect();
            ranked.sort_by(|&a, &b| {
                scores[b]
                    .total_cmp(&scores[a])
                    .then(models[front[a]].size_rank.cmp(&models[front[b]].size_rank))
            });
            front = ranked.into_iter().take(k).map(|r| front[r]).collect();
        }
    }
    front.sort_by_key(|&i| models[i].size_rank);
    front.into_iter().map(|i| models[i].name.clone()).collect()
}

/// Backend calls and configuration evaluations made by one profiling pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CallCounts {
    pub generation: u64,
    pub embedding: u64,
    /// Backend calls made while sweeping thresholds.
    pub sweep: u64,
    pub per_model: BTreeMap<String, u64>,
    pub rank_configs: u64,
    pub sweep_configs: u64,
    pub constraint_checks: u64,
}

impl CallCounts {
    pub fn evaluated_configs(&self) -> u64 {
        self.rank_configs + self.sweep_configs
    }
}

/// Result of profiling one calibration set.
#[derive(Debug, Clone)]
pub struct ProfileRun {
    pub calibration_ids: Vec<String>,
    pub candidates: Vec<String>,
    pub model_points: Vec<TradeoffPoint>,
    pub selected_models: Vec<String>,
    pub pruning: Vec<PruneOutcome>,
    pub method_decisions: Vec<MethodDecision>,
    pub skip_rules: Vec<crate::cascade::SkipRule>,
    pub points: Vec<TradeoffPoint>,
    pub front: Vec<TradeoffPoint>,
    pub chosen: TradeoffPoint,
    pub classifier: Option<ClassifierBundle>,
    /// Confidences of the chosen configuration's cascade labels on the
    /// calibration set; the drift detector's reference sample.
    pub reference_confidences: Vec<f64>,
    pub anchors: Anchors,
    pub calls: CallCounts,
    pub outputs: SoloOutputs,
}

fn holdout_split(seed: u64, ids: &[String], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let keys: Vec<f64> = ids.iter().map(|id| keyed_unit(seed, &["holdout", id])).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(ids[a].cmp(&ids[b])));
    let k = ((ids.len() as f64 * fraction).ceil() as usize).min(ids.len());
    let mut hold: Vec<usize> = order[..k].to_vec();
    let mut train: Vec<usize> = order[k..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    (train, hold)
}

/// Trains the classifier on the given calibration emails.
pub fn fit_classifier(
    outputs: &SoloOutputs,
    embedding_model: &str,
    labels: &[String],
    emails: &[&Email],
    baseline_labels: &LabelTable,
    cfg: &TrainingConfig,
) -> Result<ClassifierBundle> {
    let mut xs = Vec::with_capacity(emails.len());
    let mut ys = Vec::with_capacity(emails.len());
    for e in emails {
        let (v, _) = outputs.embedding(embedding_model, &e.id).ok_or_else(|| Error::MissingCacheEntry {
            model: embedding_model.to_string(),
            email_id: e.id.clone(),
            label: "<embedding>".into(),
        })?;
        xs.push(v.clone());
        ys.push(
            labels
                .iter()
                .map(|l| baseline_labels.require(&e.id, l).map(|v| (v == 1) as u8))
                .collect::<Result<Vec<u8>>>()?,
        );
    }
    let (model, _) = train::<f32>(&xs, &ys, cfg)?;
    Ok(ClassifierBundle {
        embedding_model: embedding_model.to_string(),
        labels: labels.to_vec(),
        model,
        config: cfg.clone(),
    })
}

/// Profiles one calibration set: solo ranking, model selection, threshold
/// pruning and sweep, method assignment, skip-rule mining, and a final sweep
/// with the assigned methods and rules in place.
pub fn profile<B: ModelBackend + ?Sized>(
    schema: &LabelSchema,
    pool: &ModelPool,
    baseline_labels: &LabelTable,
    settings: &ProfilerConfig,
    calibration: &[Email],
    backend: &B,
) -> Result<ProfileRun> {
    settings.validate(pool)?;
    if calibration.is_empty() {
        return Err(Error::SampleTooSmall("calibration set is empty".into()));
    }
    let baseline = pool.get(&settings.baseline_model)?;
    let ctx = EvalContext {
        schema,
        pool,
        baseline_labels,
        baseline,
    };
    let candidates = settings.candidates(pool)?;
    let embedding = match (&settings.embedding_model, settings.classifier_enabled()) {
        (Some(name), true) if schema.binary_labels().next().is_some() => Some(pool.get(name)?),
        _ => None,
    };
    let metered = Metered::new(backend);
    let ranking = rank_models(ctx, &candidates, embedding, calibration, &metered)?;
    let mut calls = CallCounts {
        rank_configs: ranking.points.len() as u64,
        ..CallCounts::default()
    };
    for (model, c) in metered.counters() {
        if embedding.is_some_and(|e| e.name == model) {
            calls.embedding += c.calls;
        } else {
            calls.generation += c.calls;
        }
        calls.per_model.insert(model, c.calls);
    }
    let Ranking {
        points: model_points,
        outputs,
        mut table,
    } = ranking;

    let selected = select_models(
        &candidates,
        &model_points,
        if settings.enforce_constraints {
            settings.constraints.max_cascade_size
        } else {
            None
        },
        settings.constraints.tradeoff_weights,
    );
    let column = |name: &str| table.models().iter().position(|m| m == name).expect("selected from candidates");
    let pruning: Vec<PruneOutcome> = selected
        .iter()
        .map(|m| {
            prune_thresholds(
                m,
                &table.confidence_agreement(column(m)),
                &settings.knobs.thresholds,
                settings.poor_quality_cutoff,
            )
        })
        .collect();
    let grids: Vec<Vec<f64>> = pruning.iter().map(|p| p.grid.clone()).collect();
    let anchors = Anchors {
        quality_max: Some(1.0),
        cost_max: selected
            .iter()
            .map(|m| model_points[column(m)].cost_reduction)
            .reduce(f64::max),
    };
    let weights = settings.constraints.tradeoff_weights;

    let mut checks = 0u64;
    let before_sweep = metered.total_calls();
    let mut check = |c: &LabelingConfig| {
        checks += 1;
        settings.check(c, pool)
    };
    let cascade_points = sweep_thresholds(&table, schema, &selected, &grids, &SweepTemplate::default(), &mut check)?;
    calls.sweep_configs += cascade_points.len() as u64;
    let cascade_front = pareto_front(&cascade_points);
    let cascade_choice = choose_tradeoff_anchored(&cascade_front, weights, anchors)?.clone();

    // Method per label: classifier trained on part of the calibration set
    // against the chosen cascade on the held-out rest.
    let binary: Vec<String> = schema.binary_labels().map(|l| l.name.clone()).collect();
    let mut classifier_f1: Option<BTreeMap<String, f64>> = None;
    let (train_idx, hold_idx) = holdout_split(
        settings.seed,
        table.email_ids(),
        settings.holdout_fraction,
    );
    let mut cascade_f1 = cascade_choice.per_label_f1.clone();
    if let Some(emb) = embedding {
        if !hold_idx.is_empty() && !train_idx.is_empty() {
            let train_emails: Vec<&Email> = train_idx.iter().map(|&i| &calibration[i]).collect();
            let bundle = fit_classifier(&outputs, &emb.name, &binary, &train_emails, baseline_labels, &settings.training)?;
            let mut f1 = BTreeMap::new();
            for (j, label) in binary.iter().enumerate() {
                let mut preds = Vec::with_capacity(hold_idx.len());
                let mut refs = Vec::with_capacity(hold_idx.len());
                for &i in &hold_idx {
                    let e = &calibration[i];
                    let (v, _) = outputs.embedding(&emb.name, &e.id).expect("captured above");
                    preds.push(bundle.model.predict_labels(v)?[j]);
                    refs.push(baseline_labels.require(&e.id, label)?);
                }
                f1.insert(label.clone(), f1_binary(&preds, &refs)?);
            }
            classifier_f1 = Some(f1);
            let methods = table.methods_for(&cascade_choice.config)?;
            cascade_f1 = table.replay(&methods, &[], Some(&hold_idx))?.score.per_label_f1;
        } else {
            log::warn!("calibration set too small to compare the classifier; using the cascade everywhere");
        }
    }
    let method_decisions = assign_methods(schema, classifier_f1.as_ref(), &cascade_f1, settings.method_tolerance);
    let classifier_labels: Vec<String> = method_decisions
        .iter()
        .filter(|d| d.method == MethodKind::Classifier)
        .map(|d| d.label.clone())
        .collect();

    let classifier = match embedding {
        Some(emb) if !classifier_labels.is_empty() => {
            let all: Vec<&Email> = calibration.iter().collect();
            let bundle = fit_classifier(&outputs, &emb.name, &binary, &all, baseline_labels, &settings.training)?;
            table.set_classifier(&outputs, &bundle, pool)?;
            Some(bundle)
        }
        _ => None,
    };
    let skip_rules = if settings.mine_skip_rules {
        mine_skip_rules(
            schema,
            calibration,
            baseline_labels,
            settings.skip_epsilon,
            settings.skip_min_support,
        )?
    } else {
        Vec::new()
    };
    let template = SweepTemplate {
        classifier_labels,
        skip_rules: skip_rules.clone(),
    };
    let points = if template == SweepTemplate::default() {
        cascade_points
    } else {
        let p = sweep_thresholds(&table, schema, &selected, &grids, &template, &mut check)?;
        calls.sweep_configs += p.len() as u64;
        p
    };
    calls.sweep = metered.total_calls() - before_sweep;
    calls.constraint_checks = checks;
    let front = pareto_front(&points);
    let chosen = choose_tradeoff_anchored(&front, weights, anchors)?.clone();
    let reference_confidences = table
        .replay(&table.methods_for(&chosen.config)?, &chosen.config.skip_rules, None)?
        .chosen_confidences;
    Ok(ProfileRun {
        calibration_ids: calibration.iter().map(|e| e.id.clone()).collect(),
        candidates: candidates.iter().map(|c| c.name.clone()).collect(),
        model_points,
        selected_models: selected,
        pruning,
        method_decisions,
        skip_rules,
        points,
        front,
        chosen,
        classifier,
        reference_confidences,
        anchors,
        calls,
        outputs,
    })
}
