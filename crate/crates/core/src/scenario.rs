//! Experiment input: initial agent states, scenario archetype and limits.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{AgentState, PhysicalLimits, DEFAULT_DT, STATE_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Intersection,
    HighwayMerge,
    Roundabout,
    UrbanDense,
    /// Two agents approaching each other on a shared lane.
    HeadOn,
}

impl ScenarioKind {
    /// The four archetypes of the scenario breakdown.
    pub const ARCHETYPES: [ScenarioKind; 4] =
        [ScenarioKind::Intersection, ScenarioKind::HighwayMerge, ScenarioKind::Roundabout, ScenarioKind::UrbanDense];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::HighwayMerge => "highway_merge",
            ScenarioKind::Roundabout => "roundabout",
            ScenarioKind::UrbanDense => "urban_dense",
            ScenarioKind::HeadOn => "head_on",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned bounding box in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Arena {
    pub fn square(side: f64) -> Self {
        let h = side / 2.0;
        Self { min_x: -h, min_y: -h, max_x: h, max_y: h }
    }

    pub fn area(&self) -> f64 {
        (self.max_x - self.min_x) * (self.max_y - self.min_y)
    }
}

/// A scenario as exchanged on disk.
///
/// Field order is the on-disk order; serialization is stable so that a
/// write/read/write cycle reproduces the same bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioRepr", into = "ScenarioRepr")]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub limits: PhysicalLimits,
    pub dt: f64,
    pub horizon: usize,
    pub arena: Arena,
    pub initial: Vec<AgentState>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioRepr {
    kind: ScenarioKind,
    seed: u64,
    limits: PhysicalLimits,
    dt: f64,
    horizon: usize,
    arena: Arena,
    agents: Vec<[f64; STATE_DIM]>,
}

impl TryFrom<ScenarioRepr> for Scenario {
    type Error = Error;

    fn try_from(r: ScenarioRepr) -> Result<Self> {
        let sc = Scenario {
            kind: r.kind,
            seed: r.seed,
            limits: r.limits,
            dt: r.dt,
            horizon: r.horizon,
            arena: r.arena,
            initial: r.agents.into_iter().map(AgentState::from_array).collect(),
        };
        sc.validate()?;
        Ok(sc)
    }
}

impl From<Scenario> for ScenarioRepr {
    fn from(s: Scenario) -> Self {
        ScenarioRepr {
            kind: s.kind,
            seed: s.seed,
            limits: s.limits,
            dt: s.dt,
            horizon: s.horizon,
            arena: s.arena,
            agents: s.initial.into_iter().map(AgentState::to_array).collect(),
        }
    }
}

impl Scenario {
    pub fn new(kind: ScenarioKind, initial: Vec<AgentState>, limits: PhysicalLimits, arena: Arena) -> Result<Self> {
        let sc = Self { kind, seed: 0, limits, dt: DEFAULT_DT, horizon: 30, arena, initial };
        sc.validate()?;
        Ok(sc)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn agents(&self) -> usize {
        self.initial.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial.is_empty() {
            return Err(Error::input("scenario needs at least one agent"));
        }
        if self.horizon == 0 {
            return Err(Error::input("scenario horizon must be at least 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::input("scenario dt must be positive"));
        }
        let a = self.arena.area();
        if !(a.is_finite() && a > 0.0) || self.arena.max_x <= self.arena.min_x {
            return Err(Error::input("scenario arena must have positive area"));
        }
        if self.initial.iter().any(|s| !s.is_finite()) {
            return Err(Error::input("scenario contains non-finite states"));
        }
        self.limits.validate()
    }

    /// Agents per square meter of arena.
    pub fn density(&self) -> f64 {
        self.agents() as f64 / self.arena.area()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Agents per square meter.
pub fn density(scenario: &Scenario) -> f64 {
    scenario.density()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Scenario {
        Scenario::new(
            ScenarioKind::Roundabout,
            vec![AgentState::new(0.1, 0.2, 3.0, 0.0, 0.0, 0.0), AgentState::new(-5.0, 1.0 / 3.0, 0.0, 2.5, 0.0, 0.0)],
            PhysicalLimits::default(),
            Arena::square(40.0),
        )
        .unwrap()
    }

    #[test]
    fn json_uses_fixed_field_names() {
        let v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        for k in ["kind", "seed", "limits", "dt", "horizon", "arena", "agents"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert_eq!(v["kind"], "roundabout");
        assert_eq!(v["agents"][1].as_array().unwrap().len(), 6);
        for k in ["min_x", "min_y", "max_x", "max_y"] {
            assert!(v["arena"].get(k).is_some());
        }
        for k in ["d_safe", "v_max", "a_max"] {
            assert!(v["limits"].get(k).is_some());
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let a = sample().to_json().unwrap();
        let b = Scenario::from_json(&a).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn density_is_count_over_area() {
        let mut sc = sample();
        sc.arena = Arena::square(10.0);
        sc.initial = vec![AgentState::default(); 10];
        assert!((density(&sc) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn degenerate_arena_rejected() {
        let mut sc = sample();
        sc.arena.max_x = sc.arena.min_x;
        assert!(sc.validate().is_err());
        let json = serde_json::to_string(&sc).unwrap();
        assert!(Scenario::from_json(&json).is_err());
    }
}
