//! Incremental calibration growth, the profiling report, and its files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    capture_outputs, hypervolume, profile, MethodDecision, MethodKind, ProfileRun, ProfilerConfig,
    PruneOutcome, SweepTable, TradeoffPoint, TradeoffWeights,
};
use crate::backend::{Metered, ModelBackend, SoloOutputs};
use crate::classifier::save_bundle;
use crate::dataset::{Email, LabelTable};
use crate::error::{Error, Result};
use crate::labeling::LabelingConfig;
use crate::pricing::ModelPool;
use crate::schema::LabelSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthStep {
    pub calibration_size: usize,
    /// Hypervolume of every front configuration seen so far, evaluated on the
    /// validation set.
    pub validation_hypervolume: f64,
    pub gain: f64,
    pub chosen_config_hash: String,
    pub chosen_validation_quality: f64,
    pub chosen_validation_cost_reduction: f64,
    pub front_size: usize,
}

#[derive(Debug, Clone)]
pub struct GrowthOutcome {
    pub calibration: Vec<Email>,
    pub run: ProfileRun,
    pub steps: Vec<GrowthStep>,
    pub converged: bool,
    /// The cap was reached before the hypervolume settled. Not an error.
    pub cap_reached_without_convergence: bool,
    pub validation_generation_calls: u64,
    pub validation_embedding_calls: u64,
    pub report: ProfileReport,
}

/// Grows the calibration set from the front of `stream` until the
/// validation hypervolume stops improving or the cap is reached.
///
/// Each round profiles the current calibration prefix, evaluates the
/// resulting front on the validation set, and adds those points to the
/// validation front accumulated over all rounds. Coordinates are
/// normalized as `(cost_reduction / anchor, quality)` with the anchor set
/// by the cheapest candidate model on the validation set. Growth stops
/// after `confirmation_window` consecutive rounds that each add less than
/// `hypervolume_delta`.
pub fn grow_calibration<B: ModelBackend + ?Sized>(
    schema: &LabelSchema,
    pool: &ModelPool,
    baseline_labels: &LabelTable,
    settings: &ProfilerConfig,
    stream: &[Email],
    validation: &[Email],
    backend: &B,
) -> Result<GrowthOutcome> {
    settings.validate(pool)?;
    let stream_ids: BTreeSet<&str> = stream.iter().map(|e| e.id.as_str()).collect();
    if let Some(e) = validation.iter().find(|e| stream_ids.contains(e.id.as_str())) {
        return Err(Error::ValidationOverlap(e.id.clone()));
    }
    if validation.is_empty() || stream.is_empty() {
        return Err(Error::SampleTooSmall(
            "calibration stream and validation set must be nonempty".into(),
        ));
    }
    let baseline = pool.get(&settings.baseline_model)?;
    let candidates = settings.candidates(pool)?;
    let embedding = match &settings.embedding_model {
        Some(name) if settings.knobs.methods.contains(&MethodKind::Classifier) => Some(pool.get(name)?),
        _ => None,
    };

    let metered = Metered::new(backend);
    let mut val_outputs = SoloOutputs::new();
    capture_outputs(&metered, &candidates, embedding, validation, schema, &mut val_outputs)?;
    let (mut val_gen, mut val_emb) = (0, 0);
    for (model, c) in metered.counters() {
        if embedding.is_some_and(|e| e.name == model) {
            val_emb += c.calls;
        } else {
            val_gen += c.calls;
        }
    }
    let mut val_table = SweepTable::new(&val_outputs, &candidates, validation, schema, baseline_labels, baseline)?;
    let cost_anchor = candidates
        .iter()
        .map(|m| {
            val_table
                .evaluate(&LabelingConfig::cascade_only(schema, std::slice::from_ref(&m.name), &[0.0]))
                .map(|p| p.cost_reduction)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);

    let schedule = settings.knobs.calibration;
    let cap = schedule.cap.min(stream.len());
    let mut size = schedule.initial.min(cap);
    let mut seen: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut steps: Vec<GrowthStep> = Vec::new();
    let mut small_gains = 0;
    let mut previous = 0.0;
    let mut evaluated_all = 0u64;
    loop {
        let run = profile(schema, pool, baseline_labels, settings, &stream[..size], backend)?;
        evaluated_all += run.calls.evaluated_configs();
        match &run.classifier {
            Some(b) => val_table.set_classifier(&val_outputs, b, pool)?,
            None => val_table.clear_classifier(),
        }
        let mut chosen_val = None;
        for p in &run.front {
            let v = val_table.evaluate(&p.config)?;
            if p.config_hash == run.chosen.config_hash {
                chosen_val = Some((v.quality, v.cost_reduction));
            }
            seen.insert(p.config_hash.clone(), ((v.cost_reduction / cost_anchor).min(1.0), v.quality));
        }
        let coords: Vec<(f64, f64)> = seen.values().copied().collect();
        let hv = hypervolume(&coords);
        let gain = hv - previous;
        previous = hv;
        let (cq, cc) = chosen_val.expect("the chosen point is on the front");
        steps.push(GrowthStep {
            calibration_size: size,
            validation_hypervolume: hv,
            gain,
            chosen_config_hash: run.chosen.config_hash.clone(),
            chosen_validation_quality: cq,
            chosen_validation_cost_reduction: cc,
            front_size: run.front.len(),
        });
        if steps.len() > 1 && gain < settings.hypervolume_delta {
            small_gains += 1;
        } else {
            small_gains = 0;
        }
        let converged = small_gains >= settings.confirmation_window;
        if converged || size >= cap {
            let capped = !converged;
            if capped {
                log::warn!("calibration cap {cap} reached before the validation front settled");
            }
            let calibration = stream[..size].to_vec();
            let report = ProfileReport::new(
                settings,
                &run,
                &steps,
                converged,
                capped,
                (val_gen, val_emb),
                validation.len(),
                evaluated_all,
            );
            return Ok(GrowthOutcome {
                calibration,
                run,
                steps,
                converged,
                cap_reached_without_convergence: capped,
                validation_generation_calls: val_gen,
                validation_embedding_calls: val_emb,
                report,
            });
        }
        size = (size + schedule.increment).min(cap);
    }
}

/// Configurations left to evaluate after each knob is decided
/// independently, from the joint search down to what was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnobStage {
    pub knob: String,
    pub configurations: f64,
    pub reduction_vs_previous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendCalls {
    pub rank_generation: u64,
    pub rank_embedding: u64,
    pub validation_generation: u64,
    pub validation_embedding: u64,
    pub sweep: u64,
    pub per_model: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub calibration_size: usize,
    pub validation_size: usize,
    pub growth: Vec<GrowthStep>,
    pub converged: bool,
    pub cap_reached_without_convergence: bool,
    pub backend_calls: BackendCalls,
    pub candidate_models: Vec<String>,
    pub selected_models: Vec<String>,
    pub grid_size: usize,
    pub pruning: Vec<PruneOutcome>,
    /// Configurations evaluated in the final profiling round.
    pub evaluated_configs: u64,
    pub evaluated_configs_all_rounds: u64,
    /// Every model subset in size order with every threshold vector.
    pub exhaustive_configs: f64,
    pub search_space_ratio: f64,
    /// At least one backend call per (email, label) for each exhaustive
    /// configuration.
    pub exhaustive_backend_calls: f64,
    pub backend_call_ratio: f64,
    pub per_knob: Vec<KnobStage>,
    pub method_decisions: Vec<MethodDecision>,
    pub skip_rules: usize,
    pub constraint_checks: u64,
    pub chosen_config_hash: String,
    pub chosen_quality: f64,
    pub chosen_cost_reduction: f64,
}

fn ordered_subsets(m: usize, g: f64) -> f64 {
    // Σ_k m!/(m−k)! · g^k
    let mut total = 0.0;
    let mut perms = 1.0;
    for k in 1..=m {
        perms *= (m - k + 1) as f64;
        total += perms * g.powi(k as i32);
    }
    total
}

/// `(g + 1)^m − 1`: every nonempty subset in fixed order, each member with
/// one of `g` thresholds.
pub fn exhaustive_configs(models: usize, grid: usize) -> f64 {
    (grid as f64 + 1.0).powi(models as i32) - 1.0
}

impl ProfileReport {
    #[allow(clippy::too_many_arguments)]
    fn new(
        settings: &ProfilerConfig,
        run: &ProfileRun,
        steps: &[GrowthStep],
        converged: bool,
        capped: bool,
        validation_calls: (u64, u64),
        validation_size: usize,
        evaluated_all: u64,
    ) -> Self {
        let m = run.candidates.len();
        let g = settings.knobs.thresholds.len();
        let binary = run
            .method_decisions
            .iter()
            .filter(|d| d.classifier_f1.is_some())
            .count();
        let exhaustive = exhaustive_configs(m, g);
        let evaluated = run.calls.evaluated_configs();
        let labels = run.method_decisions.len() as f64;
        let cal = run.calibration_ids.len() as f64;
        let mut stages = vec![
            ("joint search over ℒ, ℳ, 𝒪, 𝒯", 2f64.powi(binary as i32) * ordered_subsets(m, g as f64)),
            ("ℒ decided per label", ordered_subsets(m, g as f64)),
            ("𝒪 fixed by size", exhaustive),
            (
                "ℳ from solo ranking",
                m as f64 + (g as f64).powi(run.selected_models.len() as i32),
            ),
            (
                "𝒯 pruned",
                m as f64 + run.pruning.iter().map(|p| p.grid.len() as f64).product::<f64>(),
            ),
        ];
        stages.push(("evaluated", evaluated as f64));
        let mut per_knob = Vec::with_capacity(stages.len());
        let mut prev = None;
        for (knob, n) in stages {
            per_knob.push(KnobStage {
                knob: knob.to_string(),
                configurations: n,
                reduction_vs_previous: prev.map_or(1.0, |p: f64| p / n),
            });
            prev = Some(n);
        }
        let rank_calls = (run.calls.generation) as f64;
        let exhaustive_calls = exhaustive * cal * labels;
        Self {
            calibration_size: run.calibration_ids.len(),
            validation_size,
            growth: steps.to_vec(),
            converged,
            cap_reached_without_convergence: capped,
            backend_calls: BackendCalls {
                rank_generation: run.calls.generation,
                rank_embedding: run.calls.embedding,
                validation_generation: validation_calls.0,
                validation_embedding: validation_calls.1,
                sweep: run.calls.sweep,
                per_model: run.calls.per_model.clone(),
            },
            candidate_models: run.candidates.clone(),
            selected_models: run.selected_models.clone(),
            grid_size: g,
            pruning: run.pruning.clone(),
            evaluated_configs: evaluated,
            evaluated_configs_all_rounds: evaluated_all,
            exhaustive_configs: exhaustive,
            search_space_ratio: exhaustive / evaluated as f64,
            exhaustive_backend_calls: exhaustive_calls,
            backend_call_ratio: exhaustive_calls / rank_calls.max(1.0),
            per_knob,
            method_decisions: run.method_decisions.clone(),
            skip_rules: run.skip_rules.len(),
            constraint_checks: run.calls.constraint_checks,
            chosen_config_hash: run.chosen.config_hash.clone(),
            chosen_quality: run.chosen.quality,
            chosen_cost_reduction: run.chosen.cost_reduction,
        }
    }
}

/// The selected operating point as written to `chosen_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenConfig {
    pub config_hash: String,
    pub config: LabelingConfig,
    pub quality: f64,
    pub cost_reduction: f64,
    pub tradeoff_weights: TradeoffWeights,
    pub selected_models: Vec<String>,
    pub method_decisions: Vec<MethodDecision>,
    #[serde(default)]
    pub embedding_model: Option<String>,
    /// Classifier weights file, relative to this file's directory.
    #[serde(default)]
    pub classifier_file: Option<String>,
    /// Usage fraction per cascade model on the calibration set.
    #[serde(default)]
    pub usage_fractions: BTreeMap<String, f64>,
}

impl ChosenConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub const CLASSIFIER_FILE: &str = "classifier.bin";

fn write_pareto(path: &Path, front: &[TradeoffPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["quality", "cost_reduction", "config_hash"])?;
    for p in front {
        w.write_record([
            p.quality.to_string(),
            p.cost_reduction.to_string(),
            p.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `pareto.csv`, `chosen_config.json`, `profile_report.json` and,
/// when the classifier is used, its weights.
pub fn write_outputs(dir: &Path, outcome: &GrowthOutcome, settings: &ProfilerConfig) -> Result<ChosenConfig> {
    fs::create_dir_all(dir)?;
    let run = &outcome.run;
    write_pareto(&dir.join("pareto.csv"), &run.front)?;
    let classifier_file = match &run.classifier {
        Some(b) if run.chosen.config.uses_classifier() => {
            save_bundle(b, &dir.join(CLASSIFIER_FILE))?;
            Some(CLASSIFIER_FILE.to_string())
        }
        _ => None,
    };
    let usage_fractions = usage_fractions(run)?;
    let chosen = ChosenConfig {
        config_hash: run.chosen.config_hash.clone(),
        config: run.chosen.config.clone(),
        quality: run.chosen.quality,
        cost_reduction: run.chosen.cost_reduction,
        tradeoff_weights: settings.constraints.tradeoff_weights,
        selected_models: run.selected_models.clone(),
        method_decisions: run.method_decisions.clone(),
        embedding_model: classifier_file.as_ref().and(settings.embedding_model.clone()),
        classifier_file,
        usage_fractions,
    };
    write_json(&dir.join("chosen_config.json"), &chosen)?;
    write_json(&dir.join("profile_report.json"), &outcome.report)?;
    Ok(chosen)
}

fn usage_fractions(run: &ProfileRun) -> Result<BTreeMap<String, f64>> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for (label, method) in &run.chosen.config.plan.methods {
        if let crate::cascade::Method::Cascade(c) = method {
            for id in &run.calibration_ids {
                let _ = label;
                // Replays the cascade on captured outputs.
                let mut kept = None;
                for (m, &t) in c.models.iter().zip(&c.thresholds) {
                    let out = run.outputs.require(m, id, &c.label_name)?;
                    if out.value.is_some() {
                        kept = Some(m);
                        let conf = crate::cascade::logprob_to_confidence(&out.token_logprobs)?;
                        if conf >= t {
                            break;
                        }
                    }
                }
                if let Some(m) = kept {
                    *counts.entry(m.clone()).or_default() += 1;
                    total += 1;
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(m, c)| (m, c as f64 / total.max(1) as f64))
        .collect())
}
