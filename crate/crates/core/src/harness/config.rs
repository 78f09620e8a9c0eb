use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::ModelConfig;
use crate::energy::EnergyConfig;
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::metrics::MetricsConfig;
use crate::sampler::{harmonic_step_sizes, ExplosionPolicy, SamplerConfig, ScheduleFamily};
use crate::scenarios::ScenarioSpec;

/// A sampling method under comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Method {
    /// Energy-guided reverse diffusion. `schedule_family` overrides the
    /// sampler section.
    Guided {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schedule_family: Option<ScheduleFamily>,
    },
    Unguided,
    Rejection,
    /// Unguided draw followed by Langevin refinement.
    Langevin,
}

impl Method {
    pub fn guided() -> Self {
        Method::Guided { schedule_family: None }
    }

    pub fn guided_with(family: ScheduleFamily) -> Self {
        Method::Guided { schedule_family: Some(family) }
    }

    pub fn label(&self, sampler: &SamplerConfig) -> String {
        match self {
            Method::Guided { schedule_family } => {
                format!("guided_{}", schedule_family.unwrap_or(sampler.schedule_family).as_str())
            }
            Method::Unguided => "unguided".into(),
            Method::Rejection => "rejection".into(),
            Method::Langevin => "langevin".into(),
        }
    }
}

/// Either an explicit seed list or a count starting at `seed_base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn resolve(&self, base: u64) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).map(|k| base.wrapping_add(k)).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LangevinConfig {
    pub iterations: usize,
    pub eta0: f64,
    /// Use `eta0 / k` instead of a constant step.
    pub harmonic: bool,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self { iterations: 50, eta0: 1e-3, harmonic: true }
    }
}

impl LangevinConfig {
    pub fn step_sizes(&self) -> Vec<f64> {
        if self.harmonic {
            harmonic_step_sizes(self.eta0, self.iterations)
        } else {
            vec![self.eta0; self.iterations]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingConfig {
    pub agent_counts: Vec<usize>,
    pub horizon: usize,
    /// Lattice spacing of the sparse placement, meters.
    pub spacing: f64,
    pub repetitions: usize,
    /// Each timed repetition loops until it spans at least this long.
    pub min_batch_ms: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { agent_counts: vec![16, 32, 64, 128], horizon: 30, spacing: 25.0, repetitions: 7, min_batch_ms: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureConfig {
    pub densities: Vec<f64>,
    pub arena_side: f64,
    pub horizon: usize,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self { densities: vec![0.02, 0.06, 0.12], arena_side: 20.0, horizon: 30 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { trials: 1000, tolerance: 1e-4 }
    }
}

/// Everything an experiment needs; the JSON config file deserializes into this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenarios: Vec<ScenarioSpec>,
    pub methods: Vec<Method>,
    pub seeds: Seeds,
    pub seed_base: u64,
    pub energy: EnergyConfig,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub graph: GraphConfig,
    pub metrics: MetricsConfig,
    pub langevin: LangevinConfig,
    pub scaling: ScalingConfig,
    pub failure: FailureConfig,
    pub gradcheck: GradcheckConfig,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![ScenarioSpec::default()],
            methods: vec![Method::guided(), Method::Unguided],
            seeds: Seeds::Count(200),
            seed_base: 0,
            energy: EnergyConfig::default(),
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            graph: GraphConfig::default(),
            metrics: MetricsConfig::default(),
            langevin: LangevinConfig::default(),
            scaling: ScalingConfig::default(),
            failure: FailureConfig::default(),
            gradcheck: GradcheckConfig::default(),
            output: None,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.resolve(self.seed_base)
    }

    pub fn policy(&self) -> ExplosionPolicy {
        self.sampler.policy()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::input("experiment needs at least one scenario"));
        }
        if self.methods.is_empty() {
            return Err(Error::input("experiment needs at least one method"));
        }
        if self.seed_list().is_empty() {
            return Err(Error::input("experiment needs at least one seed"));
        }
        if self.sampler.lambda0 < 0.0 || !self.sampler.lambda0.is_finite() {
            return Err(Error::input("lambda0 must be finite and >= 0"));
        }
        if self.sampler.max_attempts == 0 {
            return Err(Error::input("max_attempts must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::input("workers must be at least 1"));
        }
        for s in &self.scenarios {
            s.validate()?;
        }
        self.energy.validate()?;
        self.graph.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
