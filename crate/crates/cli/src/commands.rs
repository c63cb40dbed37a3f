use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};
use triage_core::backend::{HttpBackend, Metered, MockBackend, ModelBackend, SoloOutputs};
use triage_core::cascade::{Labeler, Provenance};
use triage_core::classifier::load_bundle;
use triage_core::config::{AppConfig, BackendKind};
use triage_core::dataset::{Dataset, Email, LabelTable};
use triage_core::drift::{should_reprofile, DriftState};
use triage_core::labeling::{baseline_blended_cost, label_emails};
use triage_core::metrics::{cost_reduction_factor, mean, oracle_cascade_f1, per_label_f1, EvaluationReport};
use triage_core::profiler::{capture_outputs, grow_calibration, write_outputs, ChosenConfig};
use triage_core::provisioner::{compare_strategies, peak_load_trace, read_trace, write_ledger, write_summary, write_trace};
use triage_core::world::generate;
use triage_core::{Error, Result};

use crate::{Cli, Command, DataArgs, DriftArgs, EvaluateArgs, LabelArgs, LoadArgs};

pub const STREAM_FILE: &str = "stream.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const BASELINE_FILE: &str = "baseline_labels.jsonl";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    }
    .resolved();
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::MockWorld => mock_world(&cfg, out),
        Command::Profile(a) => profile(&cfg, out, a),
        Command::Label(a) => label(&cfg, out, a),
        Command::Evaluate(a) => evaluate(&cfg, out, a),
        Command::SimulateLoad(a) => simulate_load(&cfg, out, a),
        Command::DriftCheck(a) => drift_check(&cfg, out, a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn emails(path: &Path) -> Result<Vec<Email>> {
    Ok(Dataset::load(path)?.into_emails())
}

fn build_backend(cfg: &AppConfig, baseline: Arc<LabelTable>) -> Result<Box<dyn ModelBackend>> {
    Ok(match cfg.backend {
        BackendKind::Mock => Box::new(MockBackend::new(cfg.mock.clone(), cfg.schema.clone(), baseline)?),
        BackendKind::Http => {
            let http = cfg.http.clone().ok_or_else(|| Error::Config("missing [http] section".into()))?;
            Box::new(HttpBackend::new(http)?)
        }
    })
}

#[derive(Serialize)]
struct WorldSummary {
    seed: u64,
    stream: usize,
    validation: usize,
    test: usize,
    label_counts: BTreeMap<String, BTreeMap<i32, usize>>,
}

fn mock_world(cfg: &AppConfig, out: &Path) -> Result<()> {
    let world = generate(&cfg.world, &cfg.schema, cfg.seed)?;
    Dataset::new(world.stream.clone())?.save(&out.join(STREAM_FILE))?;
    Dataset::new(world.validation.clone())?.save(&out.join(VALIDATION_FILE))?;
    Dataset::new(world.test.clone())?.save(&out.join(TEST_FILE))?;
    world.baseline.to_jsonl(File::create(out.join(BASELINE_FILE))?)?;
    let mut label_counts: BTreeMap<String, BTreeMap<i32, usize>> = BTreeMap::new();
    for r in world.baseline.records() {
        *label_counts.entry(r.label_name).or_default().entry(r.value).or_default() += 1;
    }
    write_json(
        &out.join("world.json"),
        &WorldSummary {
            seed: cfg.seed,
            stream: world.stream.len(),
            validation: world.validation.len(),
            test: world.test.len(),
            label_counts,
        },
    )?;
    println!(
        "wrote {} + {} + {} emails to {}",
        world.stream.len(),
        world.validation.len(),
        world.test.len(),
        out.display()
    );
    Ok(())
}

fn profile(cfg: &AppConfig, out: &Path, args: DataArgs) -> Result<()> {
    let data = args.data.unwrap_or_else(|| out.to_path_buf());
    let stream = emails(&data.join(STREAM_FILE))?;
    let validation = emails(&data.join(VALIDATION_FILE))?;
    let baseline = Arc::new(LabelTable::load(&data.join(BASELINE_FILE))?);
    let backend = build_backend(cfg, baseline.clone())?;
    let outcome = grow_calibration(
        &cfg.schema,
        &cfg.pool,
        &baseline,
        &cfg.profiler,
        &stream,
        &validation,
        &backend,
    )?;
    let chosen = write_outputs(out, &outcome, &cfg.profiler)?;
    let mut state = DriftState::new(outcome.run.reference_confidences.clone(), args.now_ms);
    state.period_ms = cfg.drift.period_ms;
    state.swd_threshold = cfg.drift.swd_threshold;
    state.save(&out.join("drift_state.json"))?;
    info!("growth steps: {}", outcome.steps.len());
    println!(
        "calibration {} emails, front {} points, chosen {} (quality {:.4}, cost reduction {:.1}x)",
        outcome.calibration.len(),
        outcome.run.front.len(),
        chosen.config_hash,
        chosen.quality,
        chosen.cost_reduction
    );
    println!(
        "evaluated {} configurations of {} ({:.0}x fewer)",
        outcome.report.evaluated_configs, outcome.report.exhaustive_configs, outcome.report.search_space_ratio
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelSummary {
    emails: usize,
    config_hash: String,
    billed_micros: i64,
    blended_cost: f64,
    usage_fractions: BTreeMap<String, f64>,
    provenance: BTreeMap<Provenance, u64>,
    backend_calls: u64,
}

struct Inputs {
    dataset: Vec<Email>,
    baseline: Arc<LabelTable>,
    chosen: ChosenConfig,
    profile_dir: PathBuf,
}

fn inputs(out: &Path, dataset: Option<PathBuf>, profile: Option<PathBuf>, baseline: Option<PathBuf>) -> Result<Inputs> {
    let profile_dir = profile.unwrap_or_else(|| out.to_path_buf());
    Ok(Inputs {
        dataset: emails(&dataset.unwrap_or_else(|| out.join(TEST_FILE)))?,
        baseline: Arc::new(LabelTable::load(&baseline.unwrap_or_else(|| out.join(BASELINE_FILE)))?),
        chosen: ChosenConfig::load(&profile_dir.join("chosen_config.json"))?,
        profile_dir,
    })
}

fn label(cfg: &AppConfig, out: &Path, args: LabelArgs) -> Result<()> {
    let inp = inputs(out, args.dataset, args.profile, args.baseline)?;
    let config = &inp.chosen.config;
    config.validate(&cfg.schema, &cfg.pool)?;
    let classifier = match &inp.chosen.classifier_file {
        Some(f) => Some(load_bundle(&inp.profile_dir.join(f))?),
        None => None,
    };
    let backend = Metered::new(build_backend(cfg, inp.baseline.clone())?);
    let labeler = Labeler {
        schema: &cfg.schema,
        pool: &cfg.pool,
        plan: &config.plan,
        skip_rules: &config.skip_rules,
        classifier: classifier.as_ref(),
        backend: &backend,
    };
    let run = label_emails(&labeler, &inp.dataset)?;
    run.labels.to_jsonl(File::create(out.join("labels.jsonl"))?)?;
    let mut traces = BufWriter::new(File::create(out.join("traces.jsonl"))?);
    for e in &run.emails {
        serde_json::to_writer(&mut traces, e)?;
        traces.write_all(b"\n")?;
    }
    traces.flush()?;
    write_json(&out.join("confidences.json"), &run.chosen_confidences())?;
    let summary = LabelSummary {
        emails: inp.dataset.len(),
        config_hash: inp.chosen.config_hash.clone(),
        billed_micros: run.billed.micros(),
        blended_cost: run.blended_cost,
        usage_fractions: run.usage_fractions(),
        provenance: run.provenance_counts(),
        backend_calls: backend.total_calls(),
    };
    write_json(&out.join("label_summary.json"), &summary)?;
    println!(
        "labeled {} emails with {} backend calls, billed {}",
        summary.emails, summary.backend_calls, run.billed
    );
    Ok(())
}

fn evaluate(cfg: &AppConfig, out: &Path, args: EvaluateArgs) -> Result<()> {
    let inp = inputs(out, args.dataset, args.profile, args.baseline)?;
    let predicted = LabelTable::load(&args.labels.unwrap_or_else(|| out.join("labels.jsonl")))?;
    let summary: LabelSummary = read_json(&out.join("label_summary.json"))?;
    let per_label = per_label_f1(&cfg.schema, &inp.dataset, &predicted, &inp.baseline)?;
    let baseline_model = cfg.pool.get(&cfg.profiler.baseline_model)?;
    let cost = cost_reduction_factor(
        summary.blended_cost,
        baseline_blended_cost(baseline_model, &cfg.schema, &inp.dataset),
    );
    let oracle = if args.no_oracle {
        None
    } else {
        let mut models: Vec<_> = inp
            .chosen
            .config
            .cascade_models()
            .into_iter()
            .map(|m| cfg.pool.get(m))
            .collect::<Result<_>>()?;
        models.sort_by_key(|m| m.size_rank);
        let names: Vec<String> = models.iter().map(|m| m.name.clone()).collect();
        let backend = build_backend(cfg, inp.baseline.clone())?;
        let mut outputs = SoloOutputs::new();
        capture_outputs(&backend, &models, None, &inp.dataset, &cfg.schema, &mut outputs)?;
        let f1 = oracle_cascade_f1(&outputs, &names, &inp.dataset, &cfg.schema, &inp.baseline)?;
        Some(mean(f1.values().copied()))
    };
    let report = EvaluationReport::new(per_label, cost, oracle, inp.chosen.config_hash.clone(), summary.usage_fractions);
    write_json(&out.join("evaluation_report.json"), &report)?;
    println!(
        "average F1 {:.4}, cost reduction {:.1}x{}",
        report.average_f1,
        report.cost_reduction_factor,
        report.oracle_f1.map(|o| format!(", oracle F1 {o:.4}")).unwrap_or_default()
    );
    Ok(())
}

fn usage_for(cfg: &AppConfig, profile_dir: &Path) -> Result<Vec<f64>> {
    let settings = &cfg.provisioning;
    if !settings.usage_fractions.is_empty() {
        return Ok(settings.usage_fractions.clone());
    }
    let chosen = ChosenConfig::load(&profile_dir.join("chosen_config.json")).map_err(|e| {
        Error::Config(format!(
            "provisioning.usage_fractions is empty and no chosen configuration could be read: {e}"
        ))
    })?;
    Ok(settings
        .models
        .iter()
        .map(|m| chosen.usage_fractions.get(m).copied().unwrap_or(0.0))
        .collect())
}

fn simulate_load(cfg: &AppConfig, out: &Path, args: LoadArgs) -> Result<()> {
    let settings = &cfg.provisioning;
    let profile_dir = args.profile.unwrap_or_else(|| out.to_path_buf());
    let usage = usage_for(cfg, &profile_dir)?;
    let arrivals = match &args.trace {
        Some(path) => read_trace(path)?,
        None => peak_load_trace(cfg.seed, &settings.peak, &[])?,
    };
    write_trace(&out.join("load_trace.csv"), &arrivals)?;
    let cost = settings.cost_model()?;
    let initial = settings.initial_state(&usage)?;
    let plan = settings.load_plan(usage, cfg.seed);
    let (outcomes, summary) = compare_strategies(
        &arrivals,
        &initial,
        &cost,
        &settings.policies,
        &plan,
        settings.service_ms,
        &settings.models,
    )?;
    for o in &outcomes {
        write_ledger(
            &out.join(format!("ledger_{}.csv", o.strategy.name())),
            &o.ledger,
            &settings.models,
        )?;
    }
    write_summary(&out.join("load_summary.json"), &summary)?;
    for s in &summary.strategies {
        println!("{:<17} cost increase {}", s.strategy.name(), s.cost_increase);
    }
    Ok(())
}

fn drift_check(cfg: &AppConfig, out: &Path, args: DriftArgs) -> Result<()> {
    let mut state = DriftState::load(&args.state.unwrap_or_else(|| out.join("drift_state.json")))?;
    state.period_ms = cfg.drift.period_ms;
    state.swd_threshold = cfg.drift.swd_threshold;
    let mut recent: Vec<f64> = read_json(&args.recent.unwrap_or_else(|| out.join("confidences.json")))?;
    if recent.len() > cfg.drift.window {
        recent.drain(..recent.len() - cfg.drift.window);
    }
    let check = should_reprofile(&state, args.now_ms, &recent)?;
    write_json(&out.join("drift_check.json"), &check)?;
    println!("{}", serde_json::to_string(&check)?);
    Ok(())
}
