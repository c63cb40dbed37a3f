//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `EXPECTED_RED` are known not to hold for the method as
//! specified; they still print FAIL with their measurements. The process
//! exits nonzero if any other criterion fails, or if an expected-red one
//! starts passing, so the list cannot go stale silently.

#[path = "../../core/tests/common/provision_oracle.rs"]
mod provision_oracle;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use provision_oracle::Instance;
use triage_core::backend::{
    ConfidenceParams, Metered, MockBackend, MockConfig, MockModelConfig, ModelBackend, SoloOutputs,
};
use triage_core::cascade::Labeler;
use triage_core::classifier::{gradient_check, train, AdamParams, AdamW, ClassifierModel, TrainingConfig};
use triage_core::config::{AppConfig, ProvisioningSettings};
use triage_core::dataset::{Email, LabelTable};
use triage_core::drift::{should_reprofile, swd, Decision, DriftState, ReprofileReason, HOUR_MS};
use triage_core::labeling::{label_emails, score_run, LabelingConfig};
use triage_core::metrics::{f1_binary, f1_for_label, f1_macro, oracle_cascade_f1};
use triage_core::pricing::{blended_price, ModelPool, ModelSpec};
use triage_core::profiler::{
    capture_outputs, choose_tradeoff, grow_calibration, mine_skip_rules, pareto_front, profile, MethodKind,
    ProfilerConfig, TradeoffPoint, TradeoffWeights,
};
use triage_core::provisioner::exact::{int, pow};
use triage_core::provisioner::{
    allocate_request, compare_strategies, peak_load_trace, total_cost, ProvisionCostModel, ProvisioningState,
};
use triage_core::schema::{LabelSchema, IS_URGENT, NEEDS_SCHEDULING, PRIORITY};
use triage_core::world::{generate, WorldSpec};

/// Criteria that fail for documented reasons (see README).
const EXPECTED_RED: [u32; 2] = [1, 4];

const OPTIMALITY_INSTANCES: usize = 600;
const OPTIMALITY_BUDGET: Duration = Duration::from_secs(60);
const LOAD_BUDGET: Duration = Duration::from_secs(30);
const SWD_EXAMPLE: f64 = 0.894_427_190_999_915_9;
const SWD_EXAMPLE_TOL: f64 = 1e-9;
const SWD_SHIFT_TOL: f64 = 1e-12;
const CASCADE_EMAILS: usize = 5_000;
const CASCADE_FRACTION_TOL: f64 = 0.02;
const CASCADE_COST_REL_TOL: f64 = 0.02;
const CASCADE_BUDGET: Duration = Duration::from_secs(120);
const SEARCH_RATIO_MIN: f64 = 100.0;
const SKIP_EPSILON: f64 = 0.05;
const SKIP_REDUCTION_TOL: f64 = 0.02;
const GRAD_CHECK_MAX: f64 = 1e-4;
const ADAM_TOL: f64 = 1e-12;
const BLOB_ACCURACY_MIN: f64 = 0.99;
const BLOB_BUDGET: Duration = Duration::from_secs(30);
const INFERENCE_MEDIAN_MAX: Duration = Duration::from_millis(1);
const F1_TOL: f64 = 1e-15;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Verdict;

fn main() {
    let criteria: [(u32, &str, Check); 16] = [
        (1, "greedy allocation equals the exhaustive optimum", optimality),
        (2, "five-request worked trace", worked_trace),
        (3, "closed-form provisioning cost", cost_formula),
        (4, "greedy vs always-provision and always-escalate under peak load", peak_load),
        (5, "standardized Wasserstein distance", swd_exactness),
        (6, "re-profiling decisions", reprofile_decisions),
        (7, "Pareto front vs brute-force dominance", pareto_exact),
        (8, "tradeoff point selection", tradeoff_selection),
        (9, "cascade usage, F1 and cost on a scripted mock", cascade_analytics),
        (10, "threshold floor and call-free sweep", threshold_pruning),
        (11, "profiler search-space reduction", search_space),
        (12, "skip-rule mining and saved calls", skip_rules),
        (13, "classifier training and inference", classifier_checks),
        (14, "oracle cascade dominates swept configurations", oracle_dominance),
        (15, "end-to-end CLI determinism", determinism),
        (16, "F1 fixtures", f1_fixtures),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                verdict(false, format!("panicked: {msg}"))
            });
        let expected_red = EXPECTED_RED.contains(&id);
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let note = if expected_red { " [expected red]" } else { "" };
        println!(
            "{tag} {id:>2} {name}{note} ({:.1}s): {}",
            start.elapsed().as_secs_f64(),
            v.detail
        );
        if v.pass == expected_red {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- provisioning

fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let m = rng.random_range(2..=3);
    let (p_num, p_den) = [(3, 2), (2, 1), (5, 1)][rng.random_range(0..3)];
    let cap = rng.random_range(1..=3u64);
    let mut z: Vec<i64> = Vec::new();
    while z.len() < m {
        let v = rng.random_range(1..=40);
        if !z.contains(&v) {
            z.push(v);
        }
    }
    z.sort_unstable();
    let n0: Vec<u64> = (0..m).map(|_| rng.random_range(1..=2)).collect();
    Instance {
        c: (0..m).map(|_| rng.random_range(1..=20)).collect(),
        k0: n0.iter().map(|&n| rng.random_range(0..=n * cap)).collect(),
        n0,
        z,
        p_num,
        p_den,
        cap,
        requests: rng.random_range(1..=12),
    }
}

fn greedy_total(inst: &Instance) -> BigRational {
    let cost = ProvisionCostModel::simple(&inst.c, ratio(inst.p_num, inst.p_den), &inst.z, inst.cap as i64).unwrap();
    let mut s = ProvisioningState::new(inst.n0.clone(), inst.k0.clone()).unwrap();
    for _ in 0..inst.requests {
        allocate_request(&mut s, &cost);
    }
    total_cost(&s, &cost).total
}

fn optimality() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut equal = 0usize;
    let mut worst = (BigRational::one(), String::new());
    for _ in 0..OPTIMALITY_INSTANCES {
        let inst = random_instance(&mut rng);
        let greedy = greedy_total(&inst);
        let best = BigRational::new(BigInt::from(inst.brute_force_min()), BigInt::from(inst.scale()));
        assert!(best <= greedy, "oracle above greedy on {inst:?}");
        if greedy == best {
            equal += 1;
        } else {
            let r = &greedy / &best;
            if r > worst.0 {
                worst = (r, format!("{inst:?}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let worst_ratio = triage_core::provisioner::exact::to_f64(&worst.0);
    verdict(
        equal == OPTIMALITY_INSTANCES && elapsed < OPTIMALITY_BUDGET,
        format!(
            "greedy optimal on {equal}/{OPTIMALITY_INSTANCES} instances, worst greedy/optimum {worst_ratio:.3} on {}, {:.1}s",
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn worked_trace() -> Verdict {
    let cost = ProvisionCostModel::simple(&[1, 4], int(2), &[1, 2], 2).unwrap();
    let mut s = ProvisioningState::idle(vec![1, 1]).unwrap();
    for _ in 0..5 {
        allocate_request(&mut s, &cost);
    }
    let total = total_cost(&s, &cost).total;
    verdict(
        total == int(21) && s.instances == [1, 2] && s.served == [2, 3],
        format!("total {total}, n = {:?}, k = {:?}", s.instances, s.served),
    )
}

fn cost_formula() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let penalties = [ratio(1, 1), ratio(3, 2), ratio(2, 1), ratio(5, 1), ratio(7, 4)];
    let mut mismatches = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=4);
        let c: Vec<i64> = (0..m).map(|_| rng.random_range(0..=1_000_000)).collect();
        let mut z: Vec<i64> = (0..m).map(|i| 10 * i as i64 + rng.random_range(1..=9)).collect();
        z.sort_unstable();
        let p = penalties[rng.random_range(0..penalties.len())].clone();
        let n: Vec<u64> = (0..m).map(|_| rng.random_range(0..=15)).collect();
        let k: Vec<u64> = (0..m).map(|_| rng.random_range(0..=100)).collect();
        let model = ProvisionCostModel::simple(&c, p.clone(), &z, 1_000).unwrap();
        let state = ProvisioningState {
            instances: n.clone(),
            served: k.clone(),
            in_flight: vec![0; m],
        };
        let mut expected = BigRational::zero();
        for i in 0..m {
            let inst = if p == BigRational::one() {
                int(c[i]) * int(n[i] as i64)
            } else {
                int(c[i]) * (pow(&p, n[i]) - BigRational::one()) / (&p - BigRational::one())
            };
            expected += inst + int(k[i] as i64) * int(z[i]);
        }
        if total_cost(&state, &model).total != expected {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches over 1000 random states"))
}

fn peak_load() -> Verdict {
    let start = Instant::now();
    let base = ProvisioningSettings::default();
    let trace = peak_load_trace(0, &base.peak, &[]).unwrap();
    let mut cells = Vec::new();
    let mut all = true;
    for penalty in ["2", "5"] {
        for bottleneck in [1usize, 3] {
            let settings = ProvisioningSettings {
                penalty: penalty.into(),
                bottleneck,
                ..base.clone()
            };
            let usage = settings.usage_fractions.clone();
            let initial = settings.initial_state(&usage).unwrap();
            let (_, s) = compare_strategies(
                &trace,
                &initial,
                &settings.cost_model().unwrap(),
                &settings.policies,
                &settings.load_plan(usage, 0),
                settings.service_ms,
                &settings.models,
            )
            .unwrap();
            all &= s.greedy_not_worse;
            let fmt = |r: Option<f64>| r.map_or("n/a".to_string(), |r| format!("{r:.2}"));
            cells.push(format!(
                "p={penalty} {bottleneck}-model: provision/greedy {} escalate/greedy {}",
                fmt(s.always_provision_over_greedy),
                fmt(s.always_escalate_over_greedy)
            ));
        }
    }
    let elapsed = start.elapsed();
    verdict(
        all && elapsed < LOAD_BUDGET,
        format!("{} requests; {}", trace.len(), cells.join("; ")),
    )
}

// ------------------------------------------------------------------- drift

fn swd_exactness() -> Verdict {
    let example = swd(&[0.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c: f64 = rng.random_range(-3.0..3.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        let sigma = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        worst = worst.max((swd(&x, &shifted).unwrap() - c.abs() / sigma).abs());
    }
    verdict(
        (example - SWD_EXAMPLE).abs() <= SWD_EXAMPLE_TOL && worst <= SWD_SHIFT_TOL,
        format!("example {example:.12}, worst shift error {worst:.2e}"),
    )
}

fn reprofile_decisions() -> Verdict {
    let reference = vec![0.0, 1.0, 2.0, 3.0];
    let sigma = 1.25f64.sqrt();
    let shifted = |s: f64| reference.iter().map(|v| v + s * sigma).collect::<Vec<f64>>();
    let state = DriftState::new(reference.clone(), 0);
    let periodic = should_reprofile(&state, 25 * HOUR_MS, &reference).unwrap();
    let drift = should_reprofile(&state, HOUR_MS, &shifted(1.2)).unwrap();
    let hold = should_reprofile(&state, HOUR_MS, &shifted(0.3)).unwrap();
    let ok = periodic.decision == Decision::Reprofile(ReprofileReason::Periodic)
        && drift.decision == Decision::Reprofile(ReprofileReason::Drift)
        && hold.decision == Decision::Hold;
    verdict(
        ok,
        format!(
            "25 h: {:?}; swd {:.3}: {:?}; swd {:.3}: {:?}",
            periodic.decision,
            drift.swd.unwrap_or(f64::NAN),
            drift.decision,
            hold.swd.unwrap_or(f64::NAN),
            hold.decision
        ),
    )
}

// ------------------------------------------------------------------ pareto

fn fixture_point(quality: f64, cost: f64, hash: &str) -> TradeoffPoint {
    let schema = LabelSchema::default();
    TradeoffPoint {
        config: LabelingConfig::cascade_only(&schema, &["m".into()], &[0.0]),
        config_hash: hash.to_string(),
        quality,
        cost_reduction: cost,
        cost_capped: false,
        per_label_f1: BTreeMap::new(),
    }
}

fn brute_front(points: &[TradeoffPoint]) -> Vec<String> {
    let dominates = |a: &TradeoffPoint, b: &TradeoffPoint| {
        a.quality >= b.quality
            && a.cost_reduction >= b.cost_reduction
            && (a.quality > b.quality || a.cost_reduction > b.cost_reduction)
    };
    let mut keep: Vec<String> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .filter(|p| {
            !points.iter().any(|q| {
                q.quality == p.quality && q.cost_reduction == p.cost_reduction && q.config_hash < p.config_hash
            })
        })
        .map(|p| p.config_hash.clone())
        .collect();
    keep.sort();
    keep
}

fn pareto_exact() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for round in 0..1000 {
        let n = rng.random_range(1..=200);
        // Coarse coordinates force ties and exact duplicates.
        let levels = if round % 2 == 0 { 8 } else { 1000 };
        let points: Vec<TradeoffPoint> = (0..n)
            .map(|i| {
                fixture_point(
                    rng.random_range(0..levels) as f64 / levels as f64,
                    rng.random_range(0..levels) as f64,
                    &format!("{:08x}", rng.random::<u32>() ^ i),
                )
            })
            .collect();
        let front = pareto_front(&points);
        let mut got: Vec<String> = front.iter().map(|p| p.config_hash.clone()).collect();
        got.sort();
        let ordered = front.windows(2).all(|w| w[0].quality >= w[1].quality);
        if got != brute_front(&points) || !ordered {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} mismatches over 1000 point sets"))
}

fn tradeoff_selection() -> Verdict {
    // Normalized: a (1, 0), b (0.75, 0.5), c (0.25, 0.875), d (0, 1).
    // Sums 1, 1.25, 1.125, 1: b wins the balanced choice.
    let front = vec![
        fixture_point(0.96, 10.0, "a"),
        fixture_point(0.95, 50.0, "b"),
        fixture_point(0.93, 80.0, "c"),
        fixture_point(0.92, 90.0, "d"),
    ];
    let pick = |w| choose_tradeoff(&front, w).unwrap().config_hash.clone();
    let got = [
        pick(TradeoffWeights::QUALITY_FOCUS),
        pick(TradeoffWeights::COST_FOCUS),
        pick(TradeoffWeights::BALANCED),
    ];
    verdict(got == ["a", "d", "b"], format!("quality {}, cost {}, balanced {}", got[0], got[1], got[2]))
}

// ----------------------------------------------------------------- cascade

fn world(n: usize, seed: u64) -> (LabelSchema, Vec<Email>, LabelTable) {
    let schema = LabelSchema::default();
    let spec = WorldSpec {
        stream: n,
        validation: 0,
        test: 0,
        ..WorldSpec::default()
    };
    let w = generate(&spec, &schema, seed).unwrap();
    (schema, w.stream, w.baseline)
}

fn scripted_pool() -> ModelPool {
    ModelPool::new(vec![
        ModelSpec::generative("small", 100, 100, 1),
        ModelSpec::generative("medium", 400, 400, 2),
        ModelSpec::generative("large", 1600, 1600, 3),
        ModelSpec::generative("frontier", 36_000, 144_000, 10),
    ])
    .unwrap()
}

/// Confident exactly when agreeing, so with thresholds (0.5, 0.5, 0) the
/// small model keeps 0.6 of labels and the medium 0.75 of the rest.
fn scripted_mock(schema: &LabelSchema, baseline: &LabelTable) -> MockBackend {
    let sharp = |a: f64| {
        MockModelConfig::new(a).with_confidence(ConfidenceParams::fixed(0.9), ConfidenceParams::fixed(0.3))
    };
    MockBackend::new(
        MockConfig::new(11)
            .with_model("small", sharp(0.6))
            .with_model("medium", sharp(0.75))
            .with_model("large", sharp(0.8)),
        schema.clone(),
        Arc::new(baseline.clone()),
    )
    .unwrap()
}

fn cascade_analytics() -> Verdict {
    let start = Instant::now();
    let (schema, emails, baseline) = world(CASCADE_EMAILS, 21);
    let pool = scripted_pool();
    let mock = scripted_mock(&schema, &baseline);
    let models: Vec<String> = ["small", "medium", "large"].map(String::from).to_vec();
    let config = LabelingConfig::cascade_only(&schema, &models, &[0.5, 0.5, 0.0]);
    let labeler = Labeler {
        schema: &schema,
        pool: &pool,
        plan: &config.plan,
        skip_rules: &config.skip_rules,
        classifier: None,
        backend: &mock,
    };
    let run = label_emails(&labeler, &emails).unwrap();
    let score = score_run(&run, &schema, &emails, &baseline, pool.get("frontier").unwrap()).unwrap();
    let usage = run.usage_fractions();

    // Only the large model's fallthrough outputs can be wrong.
    let err = 0.1 * (1.0 - 0.8);
    let spec = WorldSpec::default();
    let w: Vec<f64> = spec.driver_weights.clone();
    let priority_f1: f64 = w
        .iter()
        .map(|&wk| {
            let tp = wk * (1.0 - err);
            2.0 * tp / (2.0 * tp + wk * err + err * (1.0 - wk) / 4.0)
        })
        .sum::<f64>()
        / w.len() as f64;
    let mut expected_f1 = BTreeMap::new();
    expected_f1.insert(PRIORITY.to_string(), priority_f1);
    for (label, probs) in &spec.conditionals {
        let pi: f64 = w.iter().zip(probs).map(|(a, b)| a * b).sum();
        let tp = pi * (1.0 - err);
        expected_f1.insert(label.clone(), 2.0 * tp / (2.0 * tp + err));
    }
    let expected_avg = expected_f1.values().sum::<f64>() / expected_f1.len() as f64;
    let b = |n: &str| blended_price(pool.get(n).unwrap());
    let expected_cost = b("frontier") / (b("small") + 0.4 * b("medium") + 0.1 * b("large"));

    let frac_err = [("small", 0.6), ("medium", 0.3), ("large", 0.1)]
        .iter()
        .map(|(m, e)| (usage.get(*m).copied().unwrap_or(0.0) - e).abs())
        .fold(0.0, f64::max);
    let f1_err = (score.average_f1 - expected_avg).abs();
    let cost_err = (score.cost.value - expected_cost).abs() / expected_cost;
    verdict(
        frac_err <= CASCADE_FRACTION_TOL
            && f1_err <= CASCADE_FRACTION_TOL
            && cost_err <= CASCADE_COST_REL_TOL
            && start.elapsed() < CASCADE_BUDGET,
        format!(
            "usage {:.3}/{:.3}/{:.3}, F1 {:.4} vs {:.4}, cost factor {:.2} vs {:.2}",
            usage.get("small").copied().unwrap_or(0.0),
            usage.get("medium").copied().unwrap_or(0.0),
            usage.get("large").copied().unwrap_or(0.0),
            score.average_f1,
            expected_avg,
            score.cost.value,
            expected_cost
        ),
    )
}

/// Wrong outputs sit around 0.45 confidence, right ones around 0.85.
fn split_confidence_mock(schema: &LabelSchema, baseline: &LabelTable) -> MockBackend {
    let model = MockModelConfig::new(0.7)
        .with_confidence(ConfidenceParams::new(0.85, 0.05), ConfidenceParams::new(0.45, 0.10));
    MockBackend::new(
        MockConfig::new(3)
            .with_model("small", model.clone())
            .with_model("medium", model.clone())
            .with_model("large", model),
        schema.clone(),
        Arc::new(baseline.clone()),
    )
    .unwrap()
}

fn threshold_pruning() -> Verdict {
    let (schema, emails, baseline) = world(500, 8);
    let pool = scripted_pool();
    let mock = split_confidence_mock(&schema, &baseline);
    let mut settings = ProfilerConfig::new("frontier");
    settings.knobs.methods = vec![MethodKind::Cascade];
    let run = profile(&schema, &pool, &baseline, &settings, &emails, &mock).unwrap();
    let mut below = (0u64, 0u64);
    for m in ["small", "medium", "large"] {
        for e in &emails {
            for l in &schema.labels {
                let out = run.outputs.require(m, &e.id, &l.name).unwrap();
                let conf = out.token_logprobs[0].exp();
                if conf < 0.7 {
                    below.0 += 1;
                    below.1 += (out.value == baseline.get(&e.id, &l.name)) as u64;
                }
            }
        }
    }
    let floors: Vec<Option<f64>> = run.pruning.iter().map(|p| p.floor).collect();
    let sub_agreement = below.1 as f64 / below.0.max(1) as f64;
    verdict(
        sub_agreement < 0.5 && floors.iter().all(|f| *f == Some(0.70)) && run.calls.sweep == 0,
        format!(
            "agreement below 0.7: {sub_agreement:.3}; floors {floors:?}; sweep backend calls {}",
            run.calls.sweep
        ),
    )
}

fn search_space() -> Verdict {
    let cfg = AppConfig::default();
    let w = generate(&cfg.world, &cfg.schema, cfg.seed).unwrap();
    let mock = MockBackend::new(cfg.mock.clone(), cfg.schema.clone(), Arc::new(w.baseline.clone())).unwrap();
    let out = grow_calibration(&cfg.schema, &cfg.pool, &w.baseline, &cfg.profiler, &w.stream, &w.validation, &mock)
        .unwrap();
    let r = &out.report;
    let structural = r.exhaustive_configs as f64 / r.evaluated_configs as f64;
    verdict(
        r.grid_size == 21 && structural > SEARCH_RATIO_MIN && (structural - r.search_space_ratio).abs() < 1e-9,
        format!(
            "{} evaluated of {} exhaustive configurations ({structural:.0}x), grid {}",
            r.evaluated_configs, r.exhaustive_configs, r.grid_size
        ),
    )
}

fn skip_rules() -> Verdict {
    let (schema, mined_on, mined_labels) = world(2_000, 12);
    let rules = mine_skip_rules(&schema, &mined_on, &mined_labels, SKIP_EPSILON, 0.05).unwrap();
    let mut found: Vec<String> = rules
        .iter()
        .map(|r| {
            format!(
                "{}={} => {}={}",
                r.condition.label, r.condition.value, r.consequence.label, r.consequence.value
            )
        })
        .collect();
    found.sort();
    let mut wanted = vec![
        format!("{PRIORITY}=4 => {IS_URGENT}=1"),
        format!("{PRIORITY}=2 => {NEEDS_SCHEDULING}=0"),
    ];
    wanted.sort();

    // A perfect single model on fresh emails: every firing rule saves one call.
    let (_, emails, baseline) = world(CASCADE_EMAILS, 13);
    let pool = scripted_pool();
    let backend = Metered::new(
        MockBackend::new(
            MockConfig::new(1).with_model("small", MockModelConfig::new(1.0)),
            schema.clone(),
            Arc::new(baseline),
        )
        .unwrap(),
    );
    let mut config = LabelingConfig::cascade_only(&schema, &["small".into()], &[0.0]);
    let calls = |cfg: &LabelingConfig| {
        backend.reset();
        let labeler = Labeler {
            schema: &schema,
            pool: &pool,
            plan: &cfg.plan,
            skip_rules: &cfg.skip_rules,
            classifier: None,
            backend: &backend,
        };
        label_emails(&labeler, &emails).unwrap();
        backend.total_calls() as f64
    };
    let without = calls(&config);
    config.skip_rules = rules;
    let with = calls(&config);
    let measured = 1.0 - with / without;
    let w = WorldSpec::default().driver_weights;
    let expected = (w[3] + w[1]) / schema.len() as f64;
    verdict(
        found == wanted && (measured - expected).abs() <= SKIP_REDUCTION_TOL,
        format!("rules {found:?}; calls saved {measured:.4} vs {expected:.4}"),
    )
}

// --------------------------------------------------------------- classifier

fn classifier_checks() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let dims = [6, 12, 8, 3];
    let model = ClassifierModel::<f64>::init(&dims, &mut rng);
    let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let ys: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| rng.random_range(0..2) as f64).collect()).collect();
    let grad_err = gradient_check(&model, &xs, &ys, &[1.0, 2.0, 0.5]);

    let params = AdamParams {
        beta1: 0.9,
        beta2: 0.98,
        eps: 1e-8,
        weight_decay: 0.01,
    };
    let lr = 1e-3;
    let theta0: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
    let grad: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut theta = theta0.clone();
    AdamW::new(50, params).step(&mut theta, &grad, lr);
    let adam_err = theta0
        .iter()
        .zip(&grad)
        .zip(&theta)
        .map(|((t, g), got)| (t * (1.0 - lr * params.weight_decay) - lr * g / (g.abs() + params.eps) - got).abs())
        .fold(0.0, f64::max);

    // Three labels, each pushing the embedding along its own direction.
    let d = 32;
    let dirs: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let sample = |rng: &mut ChaCha8Rng| {
        let y: Vec<u8> = (0..3).map(|_| rng.random_range(0..2u8)).collect();
        let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for (l, dir) in dirs.iter().enumerate() {
            let s = if y[l] == 1 { 3.0 } else { -3.0 };
            x.iter_mut().zip(dir).for_each(|(a, b)| *a += s * b);
        }
        (x.into_iter().map(|v| v as f32).collect::<Vec<f32>>(), y)
    };
    let (train_x, train_y): (Vec<_>, Vec<_>) = (0..2000).map(|_| sample(&mut rng)).unzip();
    let (test_x, test_y): (Vec<_>, Vec<_>) = (0..1000).map(|_| sample(&mut rng)).unzip();
    let start = Instant::now();
    let cfg = TrainingConfig {
        epochs: 10,
        max_lr: 2e-3,
        ..TrainingConfig::default()
    };
    let (clf, _) = train::<f32>(&train_x, &train_y, &cfg).unwrap();
    let train_time = start.elapsed();
    let mut correct = 0usize;
    let mut latencies = Vec::with_capacity(test_x.len());
    for (x, y) in test_x.iter().zip(&test_y) {
        let t = Instant::now();
        let pred = clf.predict_labels(x).unwrap();
        latencies.push(t.elapsed());
        correct += pred.iter().zip(y).filter(|(p, t)| **p == **t as i32).count();
    }
    latencies.sort();
    let median = latencies[latencies.len() / 2];
    let accuracy = correct as f64 / (3 * test_x.len()) as f64;
    verdict(
        grad_err < GRAD_CHECK_MAX
            && adam_err <= ADAM_TOL
            && accuracy >= BLOB_ACCURACY_MIN
            && train_time < BLOB_BUDGET
            && median < INFERENCE_MEDIAN_MAX,
        format!(
            "gradient rel. error {grad_err:.2e}, Adam step error {adam_err:.2e}, held-out accuracy {accuracy:.4} \
             after {:.1}s, median inference {:.1}us",
            train_time.as_secs_f64(),
            median.as_secs_f64() * 1e6
        ),
    )
}

// ----------------------------------------------------------------- oracle

fn replay_f1(
    outputs: &SoloOutputs,
    models: &[String],
    thresholds: &[f64],
    emails: &[Email],
    schema: &LabelSchema,
    baseline: &LabelTable,
) -> BTreeMap<String, f64> {
    let mut result = BTreeMap::new();
    for label in &schema.labels {
        let mut preds = Vec::new();
        let mut refs = Vec::new();
        for e in emails {
            let mut kept = None;
            for (m, t) in models.iter().zip(thresholds) {
                let out = outputs.require(m, &e.id, &label.name).unwrap();
                if let Some(v) = out.value {
                    kept = Some(v);
                    let mean = out.token_logprobs.iter().sum::<f64>() / out.token_logprobs.len() as f64;
                    if mean.exp() >= *t {
                        break;
                    }
                }
            }
            preds.push(kept.unwrap());
            refs.push(baseline.require(&e.id, &label.name).unwrap());
        }
        result.insert(label.name.clone(), f1_for_label(label, &preds, &refs).unwrap());
    }
    result
}

fn oracle_dominance() -> Verdict {
    let cfg = AppConfig::default();
    let grid = [0.5, 0.7, 0.9];
    let (schema, emails, baseline) = world(1000, 40);
    let three: Vec<String> = ["small", "medium", "large"].map(String::from).to_vec();
    let worlds: [(ModelPool, Vec<String>, Box<dyn ModelBackend>); 3] = [
        (
            cfg.pool.clone(),
            ["slm-xs", "slm-m", "slm-xl"].map(String::from).to_vec(),
            Box::new(MockBackend::new(cfg.mock.clone(), schema.clone(), Arc::new(baseline.clone())).unwrap()),
        ),
        (scripted_pool(), three.clone(), Box::new(scripted_mock(&schema, &baseline))),
        (scripted_pool(), three, Box::new(split_confidence_mock(&schema, &baseline))),
    ];
    let mut violations = 0;
    let mut margin = f64::INFINITY;
    for (pool, models, backend) in &worlds {
        let specs: Vec<&ModelSpec> = models.iter().map(|m| pool.get(m).unwrap()).collect();
        let mut outputs = SoloOutputs::new();
        capture_outputs(backend.as_ref(), &specs, None, &emails, &schema, &mut outputs).unwrap();
        let oracle = oracle_cascade_f1(&outputs, models, &emails, &schema, &baseline).unwrap();
        let mut configs = 0;
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    configs += 1;
                    let f1 = replay_f1(&outputs, models, &[a, b, c], &emails, &schema, &baseline);
                    for (label, v) in &f1 {
                        let gap = oracle[label] - v;
                        margin = margin.min(gap);
                        if gap < 0.0 {
                            violations += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(configs, 27);
    }
    verdict(
        violations == 0,
        format!("{} worlds x 27 configurations x 5 labels, {violations} violations, smallest gap {margin:.4}", worlds.len()),
    )
}

// -------------------------------------------------------------- end to end

const REPORTS: [&str; 13] = [
    "stream.jsonl",
    "baseline_labels.jsonl",
    "pareto.csv",
    "chosen_config.json",
    "profile_report.json",
    "labels.jsonl",
    "traces.jsonl",
    "label_summary.json",
    "evaluation_report.json",
    "load_summary.json",
    "ledger_greedy.csv",
    "ledger_always_provision.csv",
    "ledger_always_escalate.csv",
];

fn pipeline(dir: &Path) {
    for cmd in ["mock-world", "profile", "label", "evaluate", "simulate-load"] {
        let status = Command::new(env!("CARGO_BIN_EXE_triage"))
            .args(["--seed", "42", "--out"])
            .arg(dir)
            .arg(cmd)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "{cmd} failed");
    }
}

fn determinism() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let differing: Vec<&str> = REPORTS
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .collect();
    verdict(
        differing.is_empty(),
        format!("{} report files compared, differing: {differing:?}", REPORTS.len()),
    )
}

fn f1_fixtures() -> Verdict {
    let binary = f1_binary(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
    let macro_ = f1_macro(&[1, 2, 2], &[1, 2, 3], &[1, 2, 3]).unwrap();
    verdict(
        binary == 0.5 && (macro_ - 5.0 / 9.0).abs() <= F1_TOL,
        format!("binary {binary}, macro {macro_:.16} (5/9 = {:.16})", 5.0 / 9.0),
    )
}
