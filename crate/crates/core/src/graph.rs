//! Per-timestep proximity graph and the uniform grid that builds it.

use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{AgentState, Trajectory};

/// Speeds below this carry no heading information.
const MIN_HEADING_SPEED: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub r_interact: f64,
    pub sigma_d: f64,
    pub sigma_theta: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { r_interact: 30.0, sigma_d: 10.0, sigma_theta: FRAC_PI_4 }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_interact > 0.0 && self.sigma_d > 0.0 && self.sigma_theta > 0.0 {
            Ok(())
        } else {
            Err(Error::input("graph config: radius and length scales must be positive"))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Edge lists per timestep, each sorted by `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    edges: Vec<Vec<Edge>>,
}

impl InteractionGraph {
    pub fn horizon(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self, t: usize) -> &[Edge] {
        &self.edges[t]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub(crate) fn pairs(&self, t: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges[t].iter().map(|e| (e.i, e.j))
    }

    /// `t,i,j,weight` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i,j,weight\n");
        for (t, es) in self.edges.iter().enumerate() {
            for e in es {
                let _ = writeln!(out, "{t},{},{},{}", e.i, e.j, e.weight);
            }
        }
        out
    }
}

/// Unsigned angle between two velocity vectors, or `None` when either is
/// (numerically) zero.
fn heading_angle(a: &AgentState, b: &AgentState) -> Option<f64> {
    if a.speed() < MIN_HEADING_SPEED || b.speed() < MIN_HEADING_SPEED {
        return None;
    }
    let cross = a.vx * b.vy - a.vy * b.vx;
    let dot = a.vx * b.vx + a.vy * b.vy;
    Some(cross.abs().atan2(dot))
}

/// `exp(-d^2 / 2 sigma_d^2) * exp(-angle / 2 sigma_theta^2)` inside the
/// interaction radius, zero outside. The angle enters unsquared.
pub fn edge_weight(a: &AgentState, b: &AgentState, cfg: &GraphConfig) -> f64 {
    let d = (a.px - b.px).hypot(a.py - b.py);
    if d >= cfg.r_interact {
        return 0.0;
    }
    let dist = (-d * d / (2.0 * cfg.sigma_d * cfg.sigma_d)).exp();
    let dir = heading_angle(a, b).map_or(1.0, |ang| (-ang / (2.0 * cfg.sigma_theta * cfg.sigma_theta)).exp());
    dist * dir
}

/// All pairs closer than `r_interact`, per timestep, with their weights.
pub fn build_graph(traj: &Trajectory, cfg: &GraphConfig) -> Result<InteractionGraph> {
    cfg.validate()?;
    let mut grid = NeighborGrid::new(cfg.r_interact);
    let mut edges = Vec::with_capacity(traj.horizon());
    for t in 0..traj.horizon() {
        grid.rebuild((0..traj.agents()).map(|i| traj.position(i, t)));
        let mut es = Vec::new();
        grid.for_each_pair(|i, j| {
            let weight = edge_weight(&traj.state(i, t), &traj.state(j, t), cfg);
            es.push(Edge { i, j, weight });
        });
        es.sort_unstable_by_key(|e| (e.i, e.j));
        edges.push(es);
    }
    Ok(InteractionGraph { edges })
}

/// In-radius pairs of timestep `t`, each exactly once with `i < j`.
pub fn pruned_pair_iterator(graph: &InteractionGraph, t: usize) -> Result<impl Iterator<Item = (usize, usize)> + '_> {
    if t >= graph.horizon() {
        return Err(Error::Index { what: "timestep", index: t, len: graph.horizon() });
    }
    Ok(graph.pairs(t))
}

/// Uniform hashed grid with cell size equal to the query radius.
///
/// Any pair closer than the radius lies in the same or adjacent cells, so
/// scanning the 3x3 block around each point finds every such pair.
#[derive(Debug, Clone)]
pub struct NeighborGrid {
    radius: f64,
    pos: Vec<(f64, f64)>,
    cells: Vec<(i64, i64)>,
    bucket_start: Vec<u32>,
    order: Vec<u32>,
    fill: Vec<u32>,
    mask: u64,
}

impl NeighborGrid {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            pos: Vec::new(),
            cells: Vec::new(),
            bucket_start: Vec::new(),
            order: Vec::new(),
            fill: Vec::new(),
            mask: 0,
        }
    }

    #[inline]
    fn bucket(&self, c: (i64, i64)) -> usize {
        let h = (c.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (c.1 as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        ((h ^ (h >> 29)) & self.mask) as usize
    }

    /// Re-index a new set of points.
    pub fn rebuild(&mut self, points: impl IntoIterator<Item = (f64, f64)>) {
        self.pos.clear();
        self.pos.extend(points);
        let n = self.pos.len();
        let inv = 1.0 / self.radius;
        self.cells.clear();
        self.cells.extend(self.pos.iter().map(|&(x, y)| ((x * inv).floor() as i64, (y * inv).floor() as i64)));

        let buckets = (2 * n).next_power_of_two().max(16);
        self.mask = buckets as u64 - 1;
        self.bucket_start.clear();
        self.bucket_start.resize(buckets + 1, 0);
        for k in 0..n {
            let b = self.bucket(self.cells[k]);
            self.bucket_start[b + 1] += 1;
        }
        for b in 0..buckets {
            self.bucket_start[b + 1] += self.bucket_start[b];
        }
        self.order.clear();
        self.order.resize(n, 0);
        self.fill.clear();
        self.fill.extend_from_slice(&self.bucket_start);
        for k in 0..n {
            let b = self.bucket(self.cells[k]);
            self.order[self.fill[b] as usize] = k as u32;
            self.fill[b] += 1;
        }
    }

    /// Calls `f(i, j)` once for every indexed pair with `i < j` closer than the radius.
    pub fn for_each_pair(&self, mut f: impl FnMut(usize, usize)) {
        let r2 = self.radius * self.radius;
        for (i, &(xi, yi)) in self.pos.iter().enumerate() {
            let (cx, cy) = self.cells[i];
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let cell = (cx + dx, cy + dy);
                    let b = self.bucket(cell);
                    let (lo, hi) = (self.bucket_start[b] as usize, self.bucket_start[b + 1] as usize);
                    for &j in &self.order[lo..hi] {
                        let j = j as usize;
                        if j <= i || self.cells[j] != cell {
                            continue;
                        }
                        let (xj, yj) = self.pos[j];
                        let (ddx, ddy) = (xi - xj, yi - yj);
                        if ddx * ddx + ddy * ddy < r2 {
                            f(i, j);
                        }
                    }
                }
            }
        }
    }
}
