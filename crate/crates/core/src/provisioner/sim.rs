//! Discrete-event replay of an arrival trace through the allocator, with
//! per-group overrides and the two reference strategies.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use num_rational::BigRational;
use num_traits::Zero;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::exact::{self, format_exact};
use super::{allocate_from, marginal_cost, total_cost, Allocation, ProvisionCostModel, ProvisioningState, Strategy};
use crate::error::{Error, Result};
use crate::hashing::{keyed_rng, keyed_unit};
use crate::pricing::Currency;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub timestamp_ms: u64,
    pub email_id: String,
    pub user_group: String,
}

/// Reads a `timestamp_ms,email_id,user_group` CSV. Timestamps must not
/// decrease.
pub fn parse_trace<R: Read>(reader: R) -> Result<Vec<Arrival>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::MalformedTrace(e.to_string()))?.clone();
    let want = ["timestamp_ms", "email_id", "user_group"];
    if headers.len() != want.len() || headers.iter().zip(want).any(|(h, w)| h != w) {
        return Err(Error::MalformedTrace(format!(
            "expected header `{}`, found `{}`",
            want.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: Vec<Arrival> = Vec::new();
    for (row, rec) in rdr.deserialize::<Arrival>().enumerate() {
        let line = row + 2;
        let a = rec.map_err(|e| Error::MalformedTrace(format!("line {line}: {e}")))?;
        if a.email_id.is_empty() {
            return Err(Error::MalformedTrace(format!("line {line}: empty email_id")));
        }
        if let Some(prev) = out.last() {
            if a.timestamp_ms < prev.timestamp_ms {
                return Err(Error::MalformedTrace(format!(
                    "line {line}: timestamp {} precedes {}",
                    a.timestamp_ms, prev.timestamp_ms
                )));
            }
        }
        out.push(a);
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<Arrival>> {
    parse_trace(File::open(path)?)
}

pub fn write_trace(path: &Path, arrivals: &[Arrival]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for a in arrivals {
        w.serialize(a)?;
    }
    w.flush()?;
    Ok(())
}

/// A piecewise-constant Poisson arrival process with one elevated window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSpec {
    pub duration_ms: u64,
    pub base_rate_per_s: f64,
    pub peak_rate_per_s: f64,
    pub peak_start_ms: u64,
    pub peak_end_ms: u64,
    pub groups: Vec<String>,
}

impl PeakSpec {
    fn rate_at(&self, t_ms: f64) -> f64 {
        if t_ms >= self.peak_start_ms as f64 && t_ms < self.peak_end_ms as f64 {
            self.peak_rate_per_s
        } else {
            self.base_rate_per_s
        }
    }
}

/// Samples arrivals by thinning a process at the maximum rate. Email ids
/// cycle through `email_ids`, or are generated when it is empty.
pub fn peak_load_trace(seed: u64, spec: &PeakSpec, email_ids: &[String]) -> Result<Vec<Arrival>> {
    let max_rate = spec.base_rate_per_s.max(spec.peak_rate_per_s);
    if !(spec.base_rate_per_s >= 0.0 && spec.peak_rate_per_s >= 0.0 && max_rate > 0.0 && max_rate.is_finite()) {
        return Err(Error::Config("arrival rates must be finite, nonnegative and not both zero".into()));
    }
    if spec.peak_start_ms > spec.peak_end_ms {
        return Err(Error::Config("peak window ends before it starts".into()));
    }
    let gap = Exp::new(max_rate / 1000.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = keyed_rng(seed, &["peak-trace"]);
    let mut t = 0.0f64;
    let mut out = Vec::new();
    loop {
        t += gap.sample(&mut rng);
        if t >= spec.duration_ms as f64 {
            break;
        }
        let keep: f64 = rng.random();
        if keep * max_rate >= spec.rate_at(t) {
            continue;
        }
        let n = out.len();
        let email_id = if email_ids.is_empty() {
            format!("req-{n:07}")
        } else {
            email_ids[n % email_ids.len()].clone()
        };
        let user_group = if spec.groups.is_empty() {
            "default".to_string()
        } else {
            spec.groups[rng.random_range(0..spec.groups.len())].clone()
        };
        out.push(Arrival {
            timestamp_ms: t as u64,
            email_id,
            user_group,
        });
    }
    Ok(out)
}

/// `max(1, ⌈u_i · demand / capacity⌉)` instances per model, sized from the
/// usage fractions observed while profiling.
pub fn initial_instances(usage: &[f64], demand: f64, capacity: f64) -> Vec<u64> {
    usage
        .iter()
        .map(|u| ((u * demand / capacity).ceil() as u64).max(1))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// Enter at this cheaper model while the usual entry model is full.
    QualityDowngrade { target: usize },
    /// Defer by `kappa` times how long the entry model has been full.
    DelayStagger { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrgPolicy {
    pub group: String,
    #[serde(flatten)]
    pub kind: PolicyKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    #[serde(default, rename = "policy")]
    pub policies: Vec<OrgPolicy>,
}

impl PolicySet {
    pub fn new(policies: Vec<OrgPolicy>) -> Result<Self> {
        let set = Self { policies };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for p in &self.policies {
            if seen.insert(p.group.as_str(), ()).is_some() {
                return Err(Error::Config(format!("two policies for group `{}`", p.group)));
            }
            if let PolicyKind::DelayStagger { kappa } = p.kind {
                if !(kappa.is_finite() && kappa > 0.0) {
                    return Err(Error::Config(format!("kappa for `{}` must be positive", p.group)));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, group: &str) -> Option<&PolicyKind> {
        self.policies.iter().find(|p| p.group == group).map(|p| &p.kind)
    }
}

/// Which model each request enters at, drawn per email id from the usage
/// fractions of the chosen configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadPlan {
    pub usage_fractions: Vec<f64>,
    pub seed: u64,
    /// Flat cost per email of the CPU classifier, kept out of provisioning.
    #[serde(default)]
    pub classifier_cost: Option<Currency>,
}

impl LoadPlan {
    /// Every request enters at the cheapest model.
    pub fn bottom_entry(models: usize) -> Self {
        let mut usage_fractions = vec![0.0; models];
        usage_fractions[0] = 1.0;
        Self {
            usage_fractions,
            seed: 0,
            classifier_cost: None,
        }
    }

    fn validate(&self, models: usize) -> Result<()> {
        if self.usage_fractions.len() != models {
            return Err(Error::Config(format!(
                "{} usage fractions for {models} models",
                self.usage_fractions.len()
            )));
        }
        let total: f64 = self.usage_fractions.iter().sum();
        if self.usage_fractions.iter().any(|u| !(u.is_finite() && *u >= 0.0)) || total <= 0.0 {
            return Err(Error::Config("usage fractions must be nonnegative with a positive sum".into()));
        }
        Ok(())
    }

    pub fn entry(&self, email_id: &str) -> usize {
        let total: f64 = self.usage_fractions.iter().sum();
        let u = keyed_unit(self.seed, &["entry", email_id]) * total;
        let mut acc = 0.0;
        for (i, f) in self.usage_fractions.iter().enumerate() {
            acc += f;
            if u < acc {
                return i;
            }
        }
        self.usage_fractions.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSettings {
    pub strategy: Strategy,
    /// How long a request holds capacity. `None` keeps it forever, which is
    /// the bare algorithm.
    pub service_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerEvent {
    Served,
    Provisioned,
    Downgraded,
    Deferred,
    Classifier,
}

impl LedgerEvent {
    fn name(self) -> &'static str {
        match self {
            LedgerEvent::Served => "served",
            LedgerEvent::Provisioned => "provisioned",
            LedgerEvent::Downgraded => "downgraded",
            LedgerEvent::Deferred => "deferred",
            LedgerEvent::Classifier => "classifier",
        }
    }
}

/// One ledger line. Costs are micro-units. Classifier rows carry their flat
/// cost but leave the provisioning total unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub time_ms: u64,
    pub email_id: String,
    pub user_group: String,
    pub event: LedgerEvent,
    pub entry_model: usize,
    pub model: Option<usize>,
    pub marginal_cost: BigRational,
    pub cumulative_total: BigRational,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub requests: u64,
    pub served_in_place: u64,
    pub escalated: u64,
    pub provisioned: u64,
    pub downgraded: u64,
    pub deferred: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub strategy: Strategy,
    pub ledger: Vec<LedgerRow>,
    pub final_state: ProvisioningState,
    pub initial_total: BigRational,
    pub final_total: BigRational,
    /// What the same requests would cost on their entry models with
    /// unlimited capacity.
    pub unconstrained_total: BigRational,
    pub classifier_total: BigRational,
    pub counts: EventCounts,
}

impl SimOutcome {
    /// Cost attributable to running out of capacity.
    pub fn cost_increase(&self) -> BigRational {
        &self.final_total - &self.unconstrained_total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    // Completions sort first so capacity freed at time t is visible to
    // arrivals at t.
    Completion { model: usize },
    Arrival { index: usize, deferred: bool },
}

struct Sim<'a> {
    cost: &'a ProvisionCostModel,
    state: ProvisioningState,
    full_since: Vec<Option<u64>>,
}

impl Sim<'_> {
    fn refresh(&mut self, i: usize, now: u64) {
        let full = !self.state.has_capacity(self.cost, i);
        match (full, self.full_since[i]) {
            (true, None) => self.full_since[i] = Some(now),
            (false, Some(_)) => self.full_since[i] = None,
            _ => {}
        }
    }
}

/// Replays `arrivals` in `(timestamp, kind, sequence)` order.
///
/// While a request's entry model is full, its group's policy applies
/// first. A downgrade serves it on the policy target when that model has
/// room; a stagger defers it once by `κ ×` the time the entry model has been
/// full. Everything else goes through [`allocate_from`] with the chosen
/// strategy. Instances are never released.
pub fn simulate_load(
    arrivals: &[Arrival],
    initial: &ProvisioningState,
    cost: &ProvisionCostModel,
    policies: &PolicySet,
    plan: &LoadPlan,
    settings: SimSettings,
) -> Result<SimOutcome> {
    initial.validate(cost)?;
    policies.validate()?;
    plan.validate(cost.models())?;
    if arrivals.windows(2).any(|w| w[1].timestamp_ms < w[0].timestamp_ms) {
        return Err(Error::MalformedTrace("arrivals are not time-ordered".into()));
    }
    let m = cost.models();
    let mut sim = Sim {
        cost,
        state: initial.clone(),
        full_since: vec![None; m],
    };
    for i in 0..m {
        sim.refresh(i, arrivals.first().map_or(0, |a| a.timestamp_ms));
    }
    let initial_total = total_cost(initial, cost).total;
    let mut cumulative = initial_total.clone();
    let mut unconstrained = initial_total.clone();
    let mut classifier_total = BigRational::zero();
    let mut counts = EventCounts::default();
    let mut ledger = Vec::with_capacity(arrivals.len());
    let mut queue: BinaryHeap<Reverse<(u64, Event, u64)>> = BinaryHeap::new();
    let mut seq = 0u64;
    for (index, a) in arrivals.iter().enumerate() {
        queue.push(Reverse((a.timestamp_ms, Event::Arrival { index, deferred: false }, seq)));
        seq += 1;
    }

    while let Some(Reverse((now, event, _))) = queue.pop() {
        let (index, deferred) = match event {
            Event::Completion { model } => {
                sim.state.release(model);
                sim.refresh(model, now);
                continue;
            }
            Event::Arrival { index, deferred } => (index, deferred),
        };
        let a = &arrivals[index];
        let entry = plan.entry(&a.email_id);
        let row = |event, model, marginal: BigRational, cumulative: &BigRational| LedgerRow {
            time_ms: now,
            email_id: a.email_id.clone(),
            user_group: a.user_group.clone(),
            event,
            entry_model: entry,
            model,
            marginal_cost: marginal,
            cumulative_total: cumulative.clone(),
        };
        if !deferred {
            counts.requests += 1;
            unconstrained += cost.running(entry);
            if let Some(flat) = plan.classifier_cost {
                let c = exact::int(flat.0);
                classifier_total += &c;
                ledger.push(row(LedgerEvent::Classifier, None, c, &cumulative));
            }
        }

        let entry_full = !sim.state.has_capacity(cost, entry);
        let policy = if entry_full { policies.get(&a.user_group) } else { None };
        match policy {
            Some(PolicyKind::QualityDowngrade { target })
                if *target < entry && sim.state.has_capacity(cost, *target) =>
            {
                let t = *target;
                sim.state.admit(t);
                sim.refresh(t, now);
                if let Some(s) = settings.service_ms {
                    queue.push(Reverse((now + s, Event::Completion { model: t }, seq)));
                    seq += 1;
                }
                let c = cost.running(t);
                cumulative += &c;
                counts.downgraded += 1;
                ledger.push(row(LedgerEvent::Downgraded, Some(t), c, &cumulative));
                continue;
            }
            Some(PolicyKind::DelayStagger { kappa }) if !deferred => {
                let since = sim.full_since[entry].unwrap_or(now);
                let delay = (kappa * (now - since) as f64).round() as u64;
                if delay > 0 {
                    queue.push(Reverse((now + delay, Event::Arrival { index, deferred: true }, seq)));
                    seq += 1;
                    counts.deferred += 1;
                    ledger.push(row(LedgerEvent::Deferred, None, BigRational::zero(), &cumulative));
                    continue;
                }
            }
            _ => {}
        }

        let before = sim.state.instances.clone();
        let alloc = allocate_from(&mut sim.state, cost, entry, settings.strategy);
        let i = alloc.model();
        sim.refresh(i, now);
        if let Some(s) = settings.service_ms {
            queue.push(Reverse((now + s, Event::Completion { model: i }, seq)));
            seq += 1;
        }
        let c = marginal_cost(cost, alloc, before[i]);
        cumulative += &c;
        if i > entry {
            counts.escalated += 1;
        } else {
            counts.served_in_place += 1;
        }
        let event = match alloc {
            Allocation::ServedOn(_) => LedgerEvent::Served,
            Allocation::ProvisionedAndServedOn(_) => {
                counts.provisioned += 1;
                LedgerEvent::Provisioned
            }
        };
        ledger.push(row(event, Some(i), c, &cumulative));
    }

    let final_total = total_cost(&sim.state, cost).total;
    debug_assert_eq!(final_total, cumulative);
    Ok(SimOutcome {
        strategy: settings.strategy,
        ledger,
        final_state: sim.state,
        initial_total,
        final_total,
        unconstrained_total: unconstrained,
        classifier_total,
        counts,
    })
}

fn units(micros: &BigRational) -> f64 {
    exact::to_f64(micros) / 1e6
}

fn units_exact(micros: &BigRational) -> String {
    format_exact(&(micros / exact::int(1_000_000)), 12)
}

/// Writes the ledger with costs in whole currency units.
pub fn write_ledger(path: &Path, rows: &[LedgerRow], model_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([
        "time_ms",
        "email_id",
        "user_group",
        "event",
        "entry_model",
        "model",
        "marginal_cost",
        "cumulative_total",
    ])?;
    let name = |i: usize| model_names.get(i).cloned().unwrap_or_else(|| i.to_string());
    for r in rows {
        w.write_record([
            r.time_ms.to_string(),
            r.email_id.clone(),
            r.user_group.clone(),
            r.event.name().to_string(),
            name(r.entry_model),
            r.model.map(name).unwrap_or_default(),
            units_exact(&r.marginal_cost),
            units_exact(&r.cumulative_total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub initial_total: String,
    pub final_total: String,
    pub unconstrained_total: String,
    pub cost_increase: String,
    pub cost_increase_units: f64,
    pub classifier_total: String,
    pub instances: Vec<u64>,
    pub served: Vec<u64>,
    pub counts: EventCounts,
}

impl StrategySummary {
    pub fn new(o: &SimOutcome) -> Self {
        Self {
            strategy: o.strategy,
            initial_total: units_exact(&o.initial_total),
            final_total: units_exact(&o.final_total),
            unconstrained_total: units_exact(&o.unconstrained_total),
            cost_increase: units_exact(&o.cost_increase()),
            cost_increase_units: units(&o.cost_increase()),
            classifier_total: units_exact(&o.classifier_total),
            instances: o.final_state.instances.clone(),
            served: o.final_state.served.clone(),
            counts: o.counts,
        }
    }
}

/// Greedy against both reference strategies on the same trace. Ratios are
/// reference increase over greedy increase, so 2.0 means greedy added half
/// as much cost; they are absent when greedy added nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub models: Vec<String>,
    pub penalty: String,
    pub requests: usize,
    pub strategies: Vec<StrategySummary>,
    pub always_provision_over_greedy: Option<f64>,
    pub always_escalate_over_greedy: Option<f64>,
    pub greedy_not_worse: bool,
}

/// Runs the three strategies and summarizes them.
pub fn compare_strategies(
    arrivals: &[Arrival],
    initial: &ProvisioningState,
    cost: &ProvisionCostModel,
    policies: &PolicySet,
    plan: &LoadPlan,
    service_ms: Option<u64>,
    model_names: &[String],
) -> Result<(Vec<SimOutcome>, LoadSummary)> {
    let outcomes = Strategy::ALL
        .iter()
        .map(|&strategy| simulate_load(arrivals, initial, cost, policies, plan, SimSettings { strategy, service_ms }))
        .collect::<Result<Vec<_>>>()?;
    let greedy = outcomes[0].cost_increase();
    let ratio = |o: &SimOutcome| {
        (greedy > BigRational::zero()).then(|| exact::to_f64(&(o.cost_increase() / &greedy)))
    };
    let summary = LoadSummary {
        models: model_names.to_vec(),
        penalty: format_exact(cost.penalty(), 12),
        requests: arrivals.len(),
        strategies: outcomes.iter().map(StrategySummary::new).collect(),
        always_provision_over_greedy: ratio(&outcomes[1]),
        always_escalate_over_greedy: ratio(&outcomes[2]),
        greedy_not_worse: outcomes[1..].iter().all(|o| greedy <= o.cost_increase()),
    };
    Ok((outcomes, summary))
}

pub fn write_summary(path: &Path, summary: &LoadSummary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provisioner::exact::parse_exact;

    fn arrivals(times: &[u64], group: &str) -> Vec<Arrival> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| Arrival {
                timestamp_ms: t,
                email_id: format!("e{i}"),
                user_group: group.to_string(),
            })
            .collect()
    }

    fn greedy(service_ms: Option<u64>) -> SimSettings {
        SimSettings {
            strategy: Strategy::Greedy,
            service_ms,
        }
    }

    #[test]
    fn trace_parsing() {
        let ok = "timestamp_ms,email_id,user_group\n0,a,x\n5,b,y\n5,c,x\n";
        assert_eq!(parse_trace(ok.as_bytes()).unwrap().len(), 3);
        for bad in [
            "ts,email_id,user_group\n0,a,x\n",
            "timestamp_ms,email_id,user_group\n5,a,x\n4,b,x\n",
            "timestamp_ms,email_id,user_group\n-1,a,x\n",
            "timestamp_ms,email_id,user_group\n1,,x\n",
            "timestamp_ms,email_id,user_group\n1,a\n",
        ] {
            assert!(matches!(parse_trace(bad.as_bytes()), Err(Error::MalformedTrace(_))), "{bad}");
        }
    }

    #[test]
    fn ledger_matches_bare_allocation() {
        let cost = ProvisionCostModel::simple(&[1, 4], parse_exact("2").unwrap(), &[1, 2], 2).unwrap();
        let init = ProvisioningState::idle(vec![1, 1]).unwrap();
        let out = simulate_load(
            &arrivals(&[0, 1, 2, 3, 4], "g"),
            &init,
            &cost,
            &PolicySet::default(),
            &LoadPlan::bottom_entry(2),
            greedy(None),
        )
        .unwrap();
        assert_eq!(out.final_total, exact::int(21));
        assert_eq!(out.initial_total, exact::int(5));
        assert_eq!(out.ledger.last().unwrap().cumulative_total, exact::int(21));
        assert_eq!(out.counts.escalated, 3);
        assert_eq!(out.counts.provisioned, 1);
    }

    #[test]
    fn downgrade_avoids_penalty() {
        // Requests enter at model 1, which holds one request; the group may
        // drop to model 0 while it is full.
        let cost = ProvisionCostModel::simple(&[1, 1], parse_exact("2").unwrap(), &[1, 2], 1).unwrap();
        let init = ProvisioningState::idle(vec![1, 1]).unwrap();
        let plan = LoadPlan {
            usage_fractions: vec![0.0, 1.0],
            seed: 0,
            classifier_cost: None,
        };
        let policies = PolicySet::new(vec![OrgPolicy {
            group: "bulk".into(),
            kind: PolicyKind::QualityDowngrade { target: 0 },
        }])
        .unwrap();
        let out = simulate_load(&arrivals(&[0, 1], "bulk"), &init, &cost, &policies, &plan, greedy(None)).unwrap();
        assert_eq!(out.ledger[1].event, LedgerEvent::Downgraded);
        assert_eq!(out.ledger[1].model, Some(0));
        assert_eq!(out.final_state.instances, vec![1, 1]);

        // Without the policy the top model must provision.
        let plain = simulate_load(&arrivals(&[0, 1], "bulk"), &init, &cost, &PolicySet::default(), &plan, greedy(None)).unwrap();
        assert_eq!(plain.final_state.instances, vec![1, 2]);
    }

    #[test]
    fn stagger_defers_by_full_duration() {
        // One slot, 15 s service. The slot fills at t = 0; a request at
        // t = 10 s waits κ·10 s and finds the slot free at 20 s.
        let cost = ProvisionCostModel::simple(&[1], parse_exact("2").unwrap(), &[1], 1).unwrap();
        let init = ProvisioningState::idle(vec![1]).unwrap();
        let policies = PolicySet::new(vec![OrgPolicy {
            group: "g".into(),
            kind: PolicyKind::DelayStagger { kappa: 1.0 },
        }])
        .unwrap();
        let out = simulate_load(
            &arrivals(&[0, 10_000], "g"),
            &init,
            &cost,
            &policies,
            &LoadPlan::bottom_entry(1),
            greedy(Some(15_000)),
        )
        .unwrap();
        let events: Vec<(u64, LedgerEvent)> = out.ledger.iter().map(|r| (r.time_ms, r.event)).collect();
        assert_eq!(
            events,
            vec![(0, LedgerEvent::Served), (10_000, LedgerEvent::Deferred), (20_000, LedgerEvent::Served)]
        );
        assert_eq!(out.final_state.instances, vec![1]);

        let unknown = simulate_load(
            &arrivals(&[0, 10_000], "other"),
            &init,
            &cost,
            &policies,
            &LoadPlan::bottom_entry(1),
            greedy(Some(15_000)),
        )
        .unwrap();
        assert_eq!(unknown.final_state.instances, vec![2]);
    }

    #[test]
    fn under_load_strategies_agree() {
        let cost = ProvisionCostModel::simple(&[5, 7, 9], parse_exact("2").unwrap(), &[1, 2, 3], 4).unwrap();
        let init = ProvisioningState::idle(vec![1, 1, 1]).unwrap();
        let trace = arrivals(&(0..50).map(|i| i * 100).collect::<Vec<_>>(), "g");
        let plan = LoadPlan {
            usage_fractions: vec![0.6, 0.3, 0.1],
            seed: 3,
            classifier_cost: Some(Currency(2)),
        };
        let (outs, summary) =
            compare_strategies(&trace, &init, &cost, &PolicySet::default(), &plan, Some(50), &[]).unwrap();
        for o in &outs {
            assert_eq!(o.cost_increase(), BigRational::zero());
            assert_eq!(o.final_total, outs[0].final_total);
            assert_eq!(o.classifier_total, exact::int(100));
        }
        assert!(summary.greedy_not_worse);
        assert_eq!(summary.always_provision_over_greedy, None);
    }

    #[test]
    fn peak_trace_is_seeded_and_ordered() {
        let spec = PeakSpec {
            duration_ms: 60_000,
            base_rate_per_s: 5.0,
            peak_rate_per_s: 20.0,
            peak_start_ms: 20_000,
            peak_end_ms: 40_000,
            groups: vec!["a".into(), "b".into()],
        };
        let a = peak_load_trace(1, &spec, &[]).unwrap();
        assert_eq!(a, peak_load_trace(1, &spec, &[]).unwrap());
        assert!(a.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms));
        let in_peak = a.iter().filter(|x| (20_000..40_000).contains(&x.timestamp_ms)).count() as f64;
        // Expected 400 in the peak and 200 outside.
        assert!((in_peak - 400.0).abs() < 80.0, "{in_peak}");
        assert!(((a.len() as f64 - in_peak) - 200.0).abs() < 60.0);
        assert_eq!(initial_instances(&[0.6, 0.3, 0.1], 10.0, 4.0), vec![2, 1, 1]);
    }
}
