use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::DqnConfig;
use crate::cvae::{ModelConfig, ObjectiveConfig};
use crate::diffcore::Schedule;
use crate::envs::{GridLayout, ToySpec};
use crate::error::{Error, Result};
use crate::latents::{default_temperature, LatentSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Toy,
    GridUncorrelated,
    GridOnpolicy,
}

impl Domain {
    pub fn is_grid(self) -> bool {
        !matches!(self, Domain::Toy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    MlpDet,
    MlpNoise,
    VaeGauss,
    VaeFlow,
    VaeDiscrete,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::MlpDet,
        Variant::MlpNoise,
        Variant::VaeGauss,
        Variant::VaeFlow,
        Variant::VaeDiscrete,
    ];
    pub const VAES: [Variant; 3] = [Variant::VaeGauss, Variant::VaeFlow, Variant::VaeDiscrete];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MlpDet => "mlp-det",
            Variant::MlpNoise => "mlp-noise",
            Variant::VaeGauss => "vae-gauss",
            Variant::VaeFlow => "vae-flow",
            Variant::VaeDiscrete => "vae-discrete",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }

    pub fn is_vae(self) -> bool {
        Variant::VAES.contains(&self)
    }

    /// Latent layer used by this variant in `domain` (toy: n=3, flow 5
    /// layers, k=3; grid: n=8, flow 6 layers, k=4).
    pub fn latent(self, domain: Domain, steps: u64) -> LatentSpec {
        let (n, n_flow, k) = if domain.is_grid() { (8, 6, 4) } else { (3, 5, 3) };
        let spec = match self {
            Variant::VaeFlow => LatentSpec::flow(n, n_flow),
            Variant::VaeDiscrete => LatentSpec::discrete(n, k),
            _ => LatentSpec::gaussian(n),
        };
        LatentSpec {
            temperature: default_temperature(steps),
            ..spec
        }
    }
}

/// Probe-set protocol for distribution metrics on grid domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Number of uniformly drawn valid `(state, action)` pairs.
    pub states: usize,
    /// Model draws per probe used to build the empirical prediction.
    pub samples: usize,
    /// Seed of the probe draw, independent of the run seed.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            states: 200,
            samples: 10_000,
            seed: 7,
        }
    }
}

/// Rollout protocol for the on-policy domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub steps: usize,
    pub episodes: usize,
    pub epsilon: f64,
    pub max_retries: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            steps: 12,
            episodes: 100,
            epsilon: 0.05,
            max_retries: 10,
        }
    }
}

/// Everything a run needs. Presets come from [`ExperimentConfig::preset`];
/// files overlay a preset key by key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub domain: Domain,
    pub variant: Variant,
    pub latent: LatentSpec,
    pub objective: ObjectiveConfig,
    /// Fixed training set size; `0` draws fresh transitions for every batch.
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: Schedule,
    pub seeds: Vec<u64>,
    /// Importance samples per datapoint for test NLL.
    pub eval_samples: usize,
    /// Importance samples per datapoint for validation checks.
    pub val_samples: usize,
    /// Validation checks over training; the best checkpoint is kept.
    pub val_checks: u64,
    pub toy: ToySpec,
    pub layout: GridLayout,
    pub probe: ProbeConfig,
    pub dqn: DqnConfig,
    pub rollout: RolloutConfig,
    /// Width of the noise input of the `mlp-noise` baseline.
    pub noise_width: usize,
}

pub const PRESETS: [&str; 3] = ["toy", "grid", "grid-onpolicy"];

impl ExperimentConfig {
    /// Toy preset: 2000/500/2000 split, 30000 batches of 64, lr 0.005 to
    /// 0.0005 over 90%, discrete latents by default.
    pub fn toy() -> Self {
        let steps = 30_000;
        let variant = Variant::VaeDiscrete;
        let latent = variant.latent(Domain::Toy, steps);
        Self {
            name: "toy".into(),
            domain: Domain::Toy,
            variant,
            objective: ObjectiveConfig::for_latent(&latent),
            latent,
            train_size: 2000,
            val_size: 500,
            test_size: 2000,
            batch_size: 64,
            steps,
            lr: Schedule::new(0.005, 0.0005, 0.9, steps),
            seeds: (0..10).collect(),
            eval_samples: 500,
            val_samples: 20,
            val_checks: 10,
            toy: ToySpec::default(),
            layout: GridLayout::default(),
            probe: ProbeConfig::default(),
            dqn: DqnConfig::default(),
            rollout: RolloutConfig::default(),
            noise_width: 3,
        }
    }

    /// Grid preset on uncorrelated data: fresh batches of 32 for 75000
    /// steps, val 750 / test 1500, lr 0.0005 to 0.0001 over 70%.
    pub fn grid() -> Self {
        let steps = 75_000;
        let variant = Variant::VaeGauss;
        let latent = variant.latent(Domain::GridUncorrelated, steps);
        Self {
            name: "grid".into(),
            domain: Domain::GridUncorrelated,
            variant,
            objective: ObjectiveConfig::for_latent(&latent),
            latent,
            train_size: 0,
            val_size: 750,
            test_size: 1500,
            batch_size: 32,
            steps,
            lr: Schedule::new(0.0005, 0.0001, 0.7, steps),
            ..Self::toy()
        }
    }

    /// Grid model trained on the DQN's own transitions, one model update per
    /// environment step.
    pub fn grid_onpolicy() -> Self {
        let dqn = DqnConfig::default();
        let steps = dqn.total_steps;
        let variant = Variant::VaeGauss;
        let latent = variant.latent(Domain::GridOnpolicy, steps);
        Self {
            name: "grid-onpolicy".into(),
            domain: Domain::GridOnpolicy,
            objective: ObjectiveConfig::for_latent(&latent),
            latent,
            steps,
            lr: Schedule::new(0.0005, 0.0001, 0.7, steps),
            dqn,
            ..Self::grid()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "grid" => Ok(Self::grid()),
            "grid-onpolicy" => Ok(Self::grid_onpolicy()),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Switches variant and resets latent and objective to its defaults.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self.latent = variant.latent(self.domain, self.steps);
        self.objective = ObjectiveConfig::for_latent(&self.latent);
        self
    }

    /// Changes the step budget, stretching both schedules to match.
    pub fn with_steps(mut self, steps: u64) -> Self {
        self.steps = steps;
        self.lr = self.lr.with_total(steps);
        self.latent.temperature = self.latent.temperature.with_total(steps);
        if self.domain == Domain::GridOnpolicy {
            self.dqn.total_steps = steps;
            self.dqn.epsilon = self.dqn.epsilon.with_total(steps);
        }
        self
    }

    pub fn with_seeds(mut self, seeds: impl IntoIterator<Item = u64>) -> Self {
        self.seeds = seeds.into_iter().collect();
        self
    }

    pub fn model_config(&self) -> ModelConfig {
        if self.domain.is_grid() {
            ModelConfig::grid(self.latent.clone())
        } else {
            ModelConfig::toy(self.latent.clone())
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.domain.is_grid() && !self.variant.is_vae() {
            return bad("MLP baselines are only defined on the toy domain");
        }
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch size must be positive");
        }
        if self.domain == Domain::Toy && self.train_size == 0 {
            return bad("toy domain needs a fixed training set");
        }
        if self.test_size == 0 || self.eval_samples == 0 {
            return bad("test set and evaluation samples must be nonempty");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if !(self.lr.start > 0.0 && self.lr.end > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.domain.is_grid() && (self.probe.states == 0 || self.probe.samples == 0) {
            return bad("probe set must be nonempty");
        }
        if self.domain == Domain::GridOnpolicy && self.dqn.total_steps != self.steps {
            return bad("on-policy steps must equal the DQN step budget");
        }
        if self.noise_width == 0 {
            return bad("noise width must be positive");
        }
        self.latent.validate()?;
        self.objective.validate(&self.latent)?;
        self.toy.validate()?;
        self.layout.validate()?;
        self.dqn.validate()
    }

    /// Reads a TOML or JSON file (by extension) and overlays it on the
    /// preset named by its `preset` key, or on `base`.
    pub fn from_file(path: &Path, base: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let overlay: Value = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => {
                let t: toml::Value =
                    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
                serde_json::to_value(t)?
            }
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
            _ => return Err(Error::Config(format!("{}: expected .toml or .json", path.display()))),
        };
        Self::overlay(overlay, base)
    }

    /// Applies a partial JSON object on top of a preset. `preset`, `variant`
    /// and `steps` are applied first through their builders, so an overlay
    /// naming only a variant gets that variant's latent defaults.
    pub fn overlay(overlay: Value, base: Option<&str>) -> Result<Self> {
        let Value::Object(mut map) = overlay else {
            return Err(Error::Config("configuration must be a table".into()));
        };
        let preset = match map.remove("preset") {
            Some(Value::String(s)) => s,
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
            None => base.unwrap_or("toy").to_string(),
        };
        let mut cfg = Self::preset(&preset)?;
        if let Some(v) = map.remove("variant") {
            let v: Variant = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
            cfg = cfg.with_variant(v);
        }
        if let Some(s) = map.remove("steps") {
            let s = s
                .as_u64()
                .ok_or_else(|| Error::Config("`steps` must be a nonnegative integer".into()))?;
            cfg = cfg.with_steps(s);
        }
        let mut value = serde_json::to_value(&cfg)?;
        merge(&mut value, Value::Object(map));
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
