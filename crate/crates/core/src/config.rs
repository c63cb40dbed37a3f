//! TOML configuration and the built-in default world.
//!
//! Every section is optional; an empty file yields [`AppConfig::default`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{ConfidenceParams, HttpConfig, MockConfig, MockModelConfig};
use crate::drift::{DEFAULT_PERIOD_MS, DEFAULT_SWD_THRESHOLD, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::pricing::{Currency, ModelPool, ModelSpec};
use crate::profiler::ProfilerConfig;
use crate::provisioner::exact::{parse_exact, to_f64};
use crate::provisioner::{
    initial_instances, LoadPlan, PeakSpec, PolicyKind, PolicySet, ProvisionCostModel, ProvisioningState,
};
use crate::schema::LabelSchema;
use crate::world::WorldSpec;

pub const BASELINE_MODEL: &str = "frontier";
pub const EMBEDDING_MODEL: &str = "embed-small";

/// The default cascade candidates: name, per-token price (input and output
/// alike), family and mock agreement rate. Prices make the blended baseline
/// 105, 100, 90, 20 and 10 times more expensive.
const DEFAULT_SLMS: [(&str, i64, &str, f64); 5] = [
    ("slm-xs", 600, "alpha", 0.72),
    ("slm-s", 630, "alpha", 0.78),
    ("slm-m", 700, "beta", 0.83),
    ("slm-l", 3150, "beta", 0.88),
    ("slm-xl", 6300, "gamma", 0.93),
];

pub fn default_pool() -> ModelPool {
    let mut models: Vec<ModelSpec> = DEFAULT_SLMS
        .iter()
        .zip(1..)
        .map(|(&(name, price, family, _), rank)| {
            ModelSpec::generative(name, price, price, rank).with_family(family)
        })
        .collect();
    models.push(ModelSpec::generative(BASELINE_MODEL, 36_000, 144_000, 100).with_family("frontier"));
    models.push(ModelSpec::embedding(EMBEDDING_MODEL, 20, 200).with_family("embed"));
    ModelPool::new(models).expect("default pool is valid")
}

pub fn default_mock() -> MockConfig {
    let mut cfg = MockConfig::new(0);
    for &(name, _, _, agreement) in &DEFAULT_SLMS {
        cfg = cfg.with_model(
            name,
            MockModelConfig::new(agreement)
                .with_confidence(ConfidenceParams::new(0.86, 0.10), ConfidenceParams::new(0.60, 0.15)),
        );
    }
    cfg.with_model(
        BASELINE_MODEL,
        MockModelConfig::new(1.0).with_confidence(ConfidenceParams::fixed(0.99), ConfidenceParams::fixed(0.5)),
    )
}

pub fn default_profiler() -> ProfilerConfig {
    let mut p = ProfilerConfig::new(BASELINE_MODEL);
    p.embedding_model = Some(EMBEDDING_MODEL.to_string());
    p.constraints.max_cascade_size = Some(3);
    p
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftSettings {
    pub period_ms: u64,
    pub swd_threshold: f64,
    pub window: usize,
}

impl Default for DriftSettings {
    fn default() -> Self {
        Self {
            period_ms: DEFAULT_PERIOD_MS,
            swd_threshold: DEFAULT_SWD_THRESHOLD,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Inputs of the load simulation. Rationals (`penalty`, `capacity`,
/// `demand_per_request`) are strings such as `"1.5"` or `"3/2"` so they are
/// read exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProvisioningSettings {
    /// Cascade models in escalation order; names the ledger columns.
    pub models: Vec<String>,
    /// Micro-units for the first extra instance of each model.
    pub base_cost: Vec<i64>,
    /// Micro-units per request served on each model.
    pub run_cost: Vec<i64>,
    pub penalty: String,
    pub capacity: String,
    pub demand_per_request: String,
    /// Entry-model shares; empty means take them from the chosen
    /// configuration when one exists.
    #[serde(default)]
    pub usage_fractions: Vec<f64>,
    /// Request lifetime; absent means requests never leave.
    #[serde(default)]
    pub service_ms: Option<u64>,
    /// The first `bottleneck` models start sized for steady load, the rest
    /// for peak load.
    pub bottleneck: usize,
    #[serde(default)]
    pub classifier_cost: Option<i64>,
    pub peak: PeakSpec,
    #[serde(default)]
    pub policies: PolicySet,
}

impl Default for ProvisioningSettings {
    fn default() -> Self {
        // One request is roughly 100 tokens; an extra instance costs what
        // one request costs on that model.
        let run_cost = vec![60_000, 70_000, 630_000];
        Self {
            models: vec!["slm-xs".into(), "slm-m".into(), "slm-xl".into()],
            base_cost: run_cost.clone(),
            run_cost,
            penalty: "2".into(),
            capacity: "4".into(),
            demand_per_request: "1".into(),
            usage_fractions: vec![0.6, 0.3, 0.1],
            service_ms: Some(2_000),
            bottleneck: 1,
            classifier_cost: None,
            peak: PeakSpec {
                duration_ms: 120_000,
                base_rate_per_s: 4.0,
                peak_rate_per_s: 12.0,
                peak_start_ms: 30_000,
                peak_end_ms: 90_000,
                groups: Vec::new(),
            },
            policies: PolicySet::default(),
        }
    }
}

impl ProvisioningSettings {
    pub fn cost_model(&self) -> Result<ProvisionCostModel> {
        if self.base_cost.len() != self.models.len() || self.run_cost.len() != self.models.len() {
            return Err(Error::Config(
                "provisioning.base_cost and run_cost need one entry per model".into(),
            ));
        }
        ProvisionCostModel::new(
            self.base_cost.iter().copied().map(Currency).collect(),
            parse_exact(&self.penalty)?,
            self.run_cost.iter().copied().map(Currency).collect(),
            parse_exact(&self.capacity)?,
            parse_exact(&self.demand_per_request)?,
        )
    }

    /// Instances at time zero. The first `bottleneck` models are sized for
    /// their share of base-rate load; the others can absorb the whole peak.
    pub fn initial_state(&self, usage: &[f64]) -> Result<ProvisioningState> {
        let capacity = to_f64(&parse_exact(&self.capacity)?);
        let demand = to_f64(&parse_exact(&self.demand_per_request)?);
        let lifetime_s = self.service_ms.unwrap_or(self.peak.duration_ms) as f64 / 1000.0;
        let steady = initial_instances(usage, self.peak.base_rate_per_s * lifetime_s * demand, capacity);
        let peak = ((self.peak.peak_rate_per_s * lifetime_s * demand / capacity).ceil() as u64).max(1);
        let instances = steady
            .iter()
            .enumerate()
            .map(|(i, &n)| if i < self.bottleneck { n } else { n.max(peak) })
            .collect();
        ProvisioningState::idle(instances)
    }

    pub fn load_plan(&self, usage: Vec<f64>, seed: u64) -> LoadPlan {
        LoadPlan {
            usage_fractions: usage,
            seed,
            classifier_cost: self.classifier_cost.map(Currency),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cost = self.cost_model()?;
        self.policies.validate()?;
        for p in &self.policies.policies {
            if let PolicyKind::QualityDowngrade { target } = p.kind {
                if target >= cost.models() {
                    return Err(Error::Config(format!("downgrade target for `{}` is out of range", p.group)));
                }
            }
        }
        if self.bottleneck > self.models.len() {
            return Err(Error::Config("provisioning.bottleneck exceeds the model count".into()));
        }
        if !self.usage_fractions.is_empty() && self.usage_fractions.len() != self.models.len() {
            return Err(Error::Config("provisioning.usage_fractions needs one entry per model".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    /// Seeds the world, the mock backend, the profiler and the load trace.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default = "default_pool")]
    pub pool: ModelPool,
    #[serde(default)]
    pub schema: LabelSchema,
    #[serde(default = "default_mock")]
    pub mock: MockConfig,
    #[serde(default)]
    pub http: Option<HttpConfig>,
    #[serde(default = "default_profiler")]
    pub profiler: ProfilerConfig,
    #[serde(default)]
    pub drift: DriftSettings,
    #[serde(default)]
    pub provisioning: ProvisioningSettings,
    #[serde(default)]
    pub world: WorldSpec,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: BackendKind::Mock,
            pool: default_pool(),
            schema: LabelSchema::default(),
            mock: default_mock(),
            http: None,
            profiler: default_profiler(),
            drift: DriftSettings::default(),
            provisioning: ProvisioningSettings::default(),
            world: WorldSpec::default(),
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        // Deserialization bypasses the pool's own checks.
        ModelPool::new(self.pool.models().to_vec())?;
        self.schema.validate()?;
        self.profiler.validate(&self.pool)?;
        self.world.validate(&self.schema)?;
        self.provisioning.validate()?;
        if self.backend == BackendKind::Http && self.http.is_none() {
            return Err(Error::Config("backend = \"http\" needs an [http] section".into()));
        }
        if self.drift.swd_threshold.is_nan() || self.drift.swd_threshold <= 0.0 || self.drift.window == 0 {
            return Err(Error::Config("drift.swd_threshold and drift.window must be positive".into()));
        }
        Ok(())
    }

    /// Overrides every seed in the configuration.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.mock.seed = seed;
        self.profiler.seed = seed;
        self.profiler.training.seed = seed;
        self
    }

    /// Seeds come from the top-level `seed` unless a section sets its own.
    pub fn resolved(self) -> Self {
        let seed = self.seed;
        self.with_seed(seed)
    }
}
