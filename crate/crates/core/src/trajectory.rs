//! Multi-agent state tensor and the physical limits it is judged against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scalar components per agent state.
pub const STATE_DIM: usize = 6;

/// Default timestep: 10 Hz.
pub const DEFAULT_DT: f64 = 0.1;

/// Planar point-mass state: position (m), velocity (m/s), acceleration (m/s²).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AgentState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
}

impl AgentState {
    pub const fn new(px: f64, py: f64, vx: f64, vy: f64, ax: f64, ay: f64) -> Self {
        Self { px, py, vx, vy, ax, ay }
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.px, self.py, self.vx, self.vy, self.ax, self.ay]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn accel(&self) -> f64 {
        self.ax.hypot(self.ay)
    }
}

/// Safety distance and kinematic bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalLimits {
    pub d_safe: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for PhysicalLimits {
    fn default() -> Self {
        Self { d_safe: 2.0, v_max: 30.0, a_max: 8.0 }
    }
}

impl PhysicalLimits {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.d_safe) && ok(self.v_max) && ok(self.a_max) {
            Ok(())
        } else {
            Err(Error::input(format!("physical limits must be positive: {self:?}")))
        }
    }
}

/// Dense `agents × horizon × 6` trajectory tensor.
///
/// Storage is agent-major: component `k` of agent `i` at timestep `t` lives
/// at `(i * horizon + t) * 6 + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    agents: usize,
    horizon: usize,
    dt: f64,
    data: Vec<f64>,
}

impl Trajectory {
    /// All-zero trajectory.
    pub fn zeros(agents: usize, horizon: usize, dt: f64) -> Result<Self> {
        Self::check_dims(agents, horizon, dt)?;
        Ok(Self { agents, horizon, dt, data: vec![0.0; agents * horizon * STATE_DIM] })
    }

    pub fn from_vec(agents: usize, horizon: usize, dt: f64, data: Vec<f64>) -> Result<Self> {
        Self::check_dims(agents, horizon, dt)?;
        if data.len() != agents * horizon * STATE_DIM {
            return Err(Error::input(format!(
                "trajectory buffer has {} values, expected {}",
                data.len(),
                agents * horizon * STATE_DIM
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("trajectory contains non-finite values"));
        }
        Ok(Self { agents, horizon, dt, data })
    }

    /// Builds a trajectory from `states[i][t]`.
    pub fn from_states(states: &[Vec<AgentState>], dt: f64) -> Result<Self> {
        let agents = states.len();
        let horizon = states.first().map_or(0, Vec::len);
        let mut traj = Self::zeros(agents, horizon, dt)?;
        for (i, row) in states.iter().enumerate() {
            if row.len() != horizon {
                return Err(Error::input("ragged state array"));
            }
            for (t, s) in row.iter().enumerate() {
                if !s.is_finite() {
                    return Err(Error::input("trajectory contains non-finite values"));
                }
                traj.set(i, t, *s);
            }
        }
        Ok(traj)
    }

    fn check_dims(agents: usize, horizon: usize, dt: f64) -> Result<()> {
        if agents == 0 || horizon == 0 {
            return Err(Error::input("trajectory needs at least one agent and one timestep"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::input(format!("dt must be positive, got {dt}")));
        }
        Ok(())
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.agents, self.horizon)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, t: usize) -> usize {
        (i * self.horizon + t) * STATE_DIM
    }

    #[inline]
    pub fn state(&self, i: usize, t: usize) -> AgentState {
        let o = self.offset(i, t);
        let d = &self.data[o..o + STATE_DIM];
        AgentState::new(d[0], d[1], d[2], d[3], d[4], d[5])
    }

    #[inline]
    pub fn set(&mut self, i: usize, t: usize, s: AgentState) {
        let o = self.offset(i, t);
        self.data[o..o + STATE_DIM].copy_from_slice(&s.to_array());
    }

    #[inline]
    pub fn position(&self, i: usize, t: usize) -> (f64, f64) {
        let o = self.offset(i, t);
        (self.data[o], self.data[o + 1])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy restricted to timesteps `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.horizon {
            return Err(Error::input(format!("window [{start}, {end}) invalid for horizon {}", self.horizon)));
        }
        let mut out = Self::zeros(self.agents, end - start, self.dt)?;
        for i in 0..self.agents {
            for t in start..end {
                out.set(i, t - start, self.state(i, t));
            }
        }
        Ok(out)
    }

    /// Agents reordered so that output agent `k` is input agent `perm[k]`.
    pub fn permute_agents(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.agents {
            return Err(Error::input("permutation length mismatch"));
        }
        let mut out = self.clone();
        let row = self.horizon * STATE_DIM;
        for (k, &src) in perm.iter().enumerate() {
            if src >= self.agents {
                return Err(Error::Index { what: "agent", index: src, len: self.agents });
            }
            out.data[k * row..(k + 1) * row].copy_from_slice(&self.data[src * row..(src + 1) * row]);
        }
        Ok(out)
    }

    /// Euclidean norm of the difference between two same-shape trajectories.
    pub fn distance_to(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Shape { expected: self.shape(), got: other.shape() });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr {
    dt: f64,
    /// `agents[i][t]` is a 6-element state.
    agents: Vec<Vec<[f64; STATE_DIM]>>,
}

impl Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let agents = (0..self.agents).map(|i| (0..self.horizon).map(|t| self.state(i, t).to_array()).collect()).collect();
        TrajectoryRepr { dt: self.dt, agents }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = TrajectoryRepr::deserialize(deserializer)?;
        let states: Vec<Vec<AgentState>> =
            repr.agents.into_iter().map(|row| row.into_iter().map(AgentState::from_array).collect()).collect();
        Trajectory::from_states(&states, repr.dt).map_err(serde::de::Error::custom)
    }
}
