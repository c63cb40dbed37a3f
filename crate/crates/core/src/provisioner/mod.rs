//! Greedy instance provisioning for the model cascade under peak load.
//!
//! Model indices are zero-based and follow the cascade order, cheapest
//! first. All money is exact: base and running costs are integer
//! micro-units and the penalty is a rational, so totals are rationals in
//! micro-units.

pub mod exact;
pub mod sim;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pricing::Currency;

pub use sim::{
    compare_strategies, initial_instances, parse_trace, peak_load_trace, read_trace, simulate_load,
    write_ledger, write_summary, write_trace, Arrival, EventCounts, LedgerEvent, LedgerRow, LoadPlan,
    LoadSummary, OrgPolicy, PeakSpec, PolicyKind, PolicySet, SimOutcome, SimSettings, StrategySummary,
};

/// Costs and capacities driving allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvisionCostModel {
    base_cost: Vec<Currency>,
    penalty: BigRational,
    run_cost: Vec<Currency>,
    capacity: BigRational,
    demand_per_request: BigRational,
}

impl ProvisionCostModel {
    /// `base_cost[i]` is `c_i`, `run_cost[i]` is `z_i`; the running costs
    /// must strictly increase along the cascade.
    pub fn new(
        base_cost: Vec<Currency>,
        penalty: BigRational,
        run_cost: Vec<Currency>,
        capacity: BigRational,
        demand_per_request: BigRational,
    ) -> Result<Self> {
        if base_cost.is_empty() || base_cost.len() != run_cost.len() {
            return Err(Error::Config(format!(
                "need one base cost per running cost, got {} and {}",
                base_cost.len(),
                run_cost.len()
            )));
        }
        if run_cost.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("running costs must strictly increase up the cascade".into()));
        }
        if base_cost.iter().any(|c| c.0 < 0) || run_cost.iter().any(|z| z.0 < 0) {
            return Err(Error::Config("costs must be nonnegative".into()));
        }
        if penalty < BigRational::one() {
            return Err(Error::Config("penalty must be at least 1".into()));
        }
        if capacity <= BigRational::zero() || demand_per_request <= BigRational::zero() {
            return Err(Error::Config("capacity and per-request demand must be positive".into()));
        }
        if demand_per_request > capacity {
            return Err(Error::Config("a single request must fit in one instance".into()));
        }
        Ok(Self {
            base_cost,
            penalty,
            run_cost,
            capacity,
            demand_per_request,
        })
    }

    /// Integer capacity with unit demand per request.
    pub fn simple(base_cost: &[i64], penalty: BigRational, run_cost: &[i64], capacity: i64) -> Result<Self> {
        Self::new(
            base_cost.iter().map(|&c| Currency(c)).collect(),
            penalty,
            run_cost.iter().map(|&z| Currency(z)).collect(),
            exact::int(capacity),
            BigRational::one(),
        )
    }

    pub fn models(&self) -> usize {
        self.base_cost.len()
    }

    pub fn penalty(&self) -> &BigRational {
        &self.penalty
    }

    pub fn base_cost(&self) -> &[Currency] {
        &self.base_cost
    }

    pub fn run_cost(&self) -> &[Currency] {
        &self.run_cost
    }

    pub fn capacity(&self) -> &BigRational {
        &self.capacity
    }

    pub fn demand_per_request(&self) -> &BigRational {
        &self.demand_per_request
    }

    pub fn with_penalty(&self, penalty: BigRational) -> Result<Self> {
        Self::new(
            self.base_cost.clone(),
            penalty,
            self.run_cost.clone(),
            self.capacity.clone(),
            self.demand_per_request.clone(),
        )
    }

    /// `c_i · p^{n}`: the price of the instance that takes model `i` from
    /// `n` to `n + 1` instances.
    pub fn instance_increment(&self, i: usize, n: u64) -> BigRational {
        exact::int(self.base_cost[i].0) * exact::pow(&self.penalty, n)
    }

    /// `z_{i+1} − z_i`, or `None` at the top of the cascade.
    pub fn escalation_increment(&self, i: usize) -> Option<BigRational> {
        (i + 1 < self.models()).then(|| exact::int(self.run_cost[i + 1].0 - self.run_cost[i].0))
    }

    pub fn running(&self, i: usize) -> BigRational {
        exact::int(self.run_cost[i].0)
    }
}

/// Instance counts `n_i`, lifetime served counts `k_i`, and the requests
/// currently occupying capacity.
///
/// In the bare algorithm requests never leave, so `in_flight == served`.
/// The load simulator releases capacity when a request completes, while
/// `served` keeps counting for the running cost.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProvisioningState {
    pub instances: Vec<u64>,
    pub served: Vec<u64>,
    pub in_flight: Vec<u64>,
}

impl ProvisioningState {
    /// A steady state where the `served` requests still hold capacity.
    pub fn new(instances: Vec<u64>, served: Vec<u64>) -> Result<Self> {
        let state = Self {
            in_flight: served.clone(),
            instances,
            served,
        };
        state.check_shape()?;
        Ok(state)
    }

    pub fn idle(instances: Vec<u64>) -> Result<Self> {
        let zeros = vec![0; instances.len()];
        Self::new(instances, zeros)
    }

    fn check_shape(&self) -> Result<()> {
        let m = self.instances.len();
        if m == 0 || self.served.len() != m || self.in_flight.len() != m {
            return Err(Error::Config("state vectors must be nonempty and equally long".into()));
        }
        if self.instances.contains(&0) {
            return Err(Error::Config("every model starts with at least one instance".into()));
        }
        Ok(())
    }

    pub fn validate(&self, cost: &ProvisionCostModel) -> Result<()> {
        self.check_shape()?;
        if self.instances.len() != cost.models() {
            return Err(Error::Config(format!(
                "state covers {} models, cost model {}",
                self.instances.len(),
                cost.models()
            )));
        }
        Ok(())
    }

    /// `in_flight_i · D_req < n_i · C`.
    pub fn has_capacity(&self, cost: &ProvisionCostModel, i: usize) -> bool {
        exact::int(self.in_flight[i] as i64) * &cost.demand_per_request
            < exact::int(self.instances[i] as i64) * &cost.capacity
    }

    /// `in_flight_i · D_req ≤ n_i · C`.
    pub fn within_capacity(&self, cost: &ProvisionCostModel, i: usize) -> bool {
        exact::int(self.in_flight[i] as i64) * &cost.demand_per_request
            <= exact::int(self.instances[i] as i64) * &cost.capacity
    }

    fn admit(&mut self, i: usize) {
        self.served[i] += 1;
        self.in_flight[i] += 1;
    }

    pub(crate) fn release(&mut self, i: usize) {
        self.in_flight[i] -= 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "model", rename_all = "snake_case")]
pub enum Allocation {
    ServedOn(usize),
    ProvisionedAndServedOn(usize),
}

impl Allocation {
    pub fn model(self) -> usize {
        match self {
            Allocation::ServedOn(i) | Allocation::ProvisionedAndServedOn(i) => i,
        }
    }

    pub fn provisioned(self) -> bool {
        matches!(self, Allocation::ProvisionedAndServedOn(_))
    }
}

/// What to do when the model a request reaches has no free capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Provision here when an instance costs less than moving one model up.
    Greedy,
    /// Always provision on the entry model.
    AlwaysProvision,
    /// Move up while possible and provision only at the top.
    AlwaysEscalate,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Greedy, Strategy::AlwaysProvision, Strategy::AlwaysEscalate];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::AlwaysProvision => "always_provision",
            Strategy::AlwaysEscalate => "always_escalate",
        }
    }
}

/// Allocates one request entering at the bottom of the cascade with the
/// greedy rule, updating `state`.
pub fn allocate_request(state: &mut ProvisioningState, cost: &ProvisionCostModel) -> Allocation {
    allocate_from(state, cost, 0, Strategy::Greedy)
}

/// Allocates one request entering at model `entry`.
///
/// Scanning upward, a model with free capacity serves the request. A full
/// model provisions a new instance when `c_i·p^{n_i} < z_{i+1} − z_i`;
/// otherwise the scan moves on. The top model always provisions when full,
/// which keeps allocation total.
pub fn allocate_from(
    state: &mut ProvisioningState,
    cost: &ProvisionCostModel,
    entry: usize,
    strategy: Strategy,
) -> Allocation {
    let m = cost.models();
    for i in entry.min(m - 1)..m {
        if state.has_capacity(cost, i) {
            state.admit(i);
            return Allocation::ServedOn(i);
        }
        let provision = match (strategy, cost.escalation_increment(i)) {
            (_, None) | (Strategy::AlwaysProvision, _) => true,
            (Strategy::AlwaysEscalate, Some(_)) => false,
            (Strategy::Greedy, Some(run)) => cost.instance_increment(i, state.instances[i]) < run,
        };
        if provision {
            state.instances[i] += 1;
            state.admit(i);
            return Allocation::ProvisionedAndServedOn(i);
        }
    }
    unreachable!("the top model always provisions")
}

/// Cost added by `allocation`, given the instance count of its model
/// before the decision.
pub fn marginal_cost(cost: &ProvisionCostModel, allocation: Allocation, instances_before: u64) -> BigRational {
    let i = allocation.model();
    let mut c = cost.running(i);
    if allocation.provisioned() {
        c += cost.instance_increment(i, instances_before);
    }
    c
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TotalCost {
    pub instance: BigRational,
    pub run: BigRational,
    pub total: BigRational,
}

/// `Σ c_i (p^{n_i} − 1)/(p − 1) + Σ k_i z_i`, with `n_i · c_i` for the
/// instance term when `p = 1`.
pub fn total_cost(state: &ProvisioningState, cost: &ProvisionCostModel) -> TotalCost {
    let p = &cost.penalty;
    let one = BigRational::one();
    let mut instance = BigRational::zero();
    let mut run = BigRational::zero();
    for i in 0..cost.models() {
        let c = exact::int(cost.base_cost[i].0);
        let n = state.instances[i];
        let geometric = if *p == one {
            exact::int(n as i64)
        } else {
            (exact::pow(p, n) - &one) / (p - &one)
        };
        instance += c * geometric;
        run += BigRational::from_integer(BigInt::from(state.served[i])) * cost.running(i);
    }
    TotalCost {
        total: &instance + &run,
        instance,
        run,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> BigRational {
        exact::parse_exact(s).unwrap()
    }

    #[test]
    fn under_capacity_serves_in_place() {
        let cost = ProvisionCostModel::simple(&[10], p("2"), &[1], 100).unwrap();
        let mut s = ProvisioningState::idle(vec![1]).unwrap();
        assert_eq!(allocate_request(&mut s, &cost), Allocation::ServedOn(0));
        assert_eq!((s.instances[0], s.served[0]), (1, 1));
    }

    #[test]
    fn full_model_compares_marginal_costs() {
        let escalate = ProvisionCostModel::simple(&[1, 4], p("2"), &[1, 2], 2).unwrap();
        let mut s = ProvisioningState::new(vec![1, 1], vec![2, 0]).unwrap();
        assert_eq!(allocate_request(&mut s, &escalate), Allocation::ServedOn(1));

        let provision = ProvisionCostModel::simple(&[1, 4], p("2"), &[1, 10], 2).unwrap();
        let mut s = ProvisioningState::new(vec![1, 1], vec![2, 0]).unwrap();
        assert_eq!(allocate_request(&mut s, &provision), Allocation::ProvisionedAndServedOn(0));
        assert_eq!(s.instances, vec![2, 1]);
    }

    #[test]
    fn five_request_trace() {
        let cost = ProvisionCostModel::simple(&[1, 4], p("2"), &[1, 2], 2).unwrap();
        let mut s = ProvisioningState::idle(vec![1, 1]).unwrap();
        let got: Vec<Allocation> = (0..5).map(|_| allocate_request(&mut s, &cost)).collect();
        use Allocation::*;
        assert_eq!(got, vec![ServedOn(0), ServedOn(0), ServedOn(1), ServedOn(1), ProvisionedAndServedOn(1)]);
        assert_eq!((s.instances.clone(), s.served.clone()), (vec![1, 2], vec![2, 3]));
        let t = total_cost(&s, &cost);
        assert_eq!((t.instance, t.run, t.total), (exact::int(13), exact::int(8), exact::int(21)));
    }

    #[test]
    fn cost_formula_examples() {
        let cost = ProvisionCostModel::simple(&[10], p("2"), &[1], 1).unwrap();
        let s = ProvisioningState { instances: vec![1], served: vec![5], in_flight: vec![5] };
        assert_eq!(total_cost(&s, &cost).total, exact::int(15));

        let flat = ProvisionCostModel::simple(&[2], p("1"), &[1], 1).unwrap();
        let s = ProvisioningState::idle(vec![3]).unwrap();
        assert_eq!(total_cost(&s, &flat).instance, exact::int(6));
    }

    #[test]
    fn strategies_differ_only_when_full() {
        let cost = ProvisionCostModel::simple(&[1, 1, 1], p("2"), &[1, 2, 3], 1).unwrap();
        for strategy in Strategy::ALL {
            let mut s = ProvisioningState::new(vec![1, 1, 1], vec![1, 0, 0]).unwrap();
            let got = allocate_from(&mut s, &cost, 0, strategy);
            let want = match strategy {
                // c·p¹ = 2 ≥ z₂ − z₁ = 1.
                Strategy::Greedy | Strategy::AlwaysEscalate => Allocation::ServedOn(1),
                Strategy::AlwaysProvision => Allocation::ProvisionedAndServedOn(0),
            };
            assert_eq!(got, want, "{strategy:?}");
        }
        let mut s = ProvisioningState::new(vec![1, 1, 1], vec![1, 1, 1]).unwrap();
        assert_eq!(
            allocate_from(&mut s, &cost, 0, Strategy::AlwaysEscalate),
            Allocation::ProvisionedAndServedOn(2)
        );
    }

    #[test]
    fn rejects_bad_models() {
        assert!(ProvisionCostModel::simple(&[1, 1], p("2"), &[2, 2], 1).is_err());
        assert!(ProvisionCostModel::simple(&[1], p("0.5"), &[1], 1).is_err());
        assert!(ProvisionCostModel::simple(&[1], p("2"), &[1], 0).is_err());
        assert!(ProvisioningState::idle(vec![0, 1]).is_err());
    }
}
