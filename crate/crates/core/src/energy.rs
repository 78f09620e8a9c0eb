//! Collision and kinematic energies with analytic gradients.
//!
//! Every energy here is a sum of per-pair or per-state terms. Gradients are
//! laid out exactly like [`Trajectory::as_slice`], so a guidance step is a
//! plain axpy over the state buffer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, NeighborGrid};
use crate::trajectory::{AgentState, PhysicalLimits, Trajectory, STATE_DIM};

/// Distance below which `1/d` is evaluated at this clamp instead.
pub const D_MIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionVariant {
    /// `(1/d - 1/d_safe)^2` inside `d_safe`.
    InverseDistance,
    /// `k_c exp(-d^2 / sigma^2)`.
    SmoothExponential,
    /// `k_c exp(-d^2 / (2 sigma^2))`.
    GaussianRbf,
    /// `k_c (1/s - 1/d_safe)^2` applied to a per-timestep soft minimum `s`
    /// of all pair distances.
    SoftMinimum,
}

impl CollisionVariant {
    pub const ALL: [CollisionVariant; 4] = [
        CollisionVariant::InverseDistance,
        CollisionVariant::SmoothExponential,
        CollisionVariant::GaussianRbf,
        CollisionVariant::SoftMinimum,
    ];

    pub fn is_smooth(self) -> bool {
        self != CollisionVariant::InverseDistance
    }

    /// Whether the pair term vanishes identically beyond `d_safe`.
    pub fn has_compact_support(self) -> bool {
        self == CollisionVariant::InverseDistance
    }
}

/// Which kinematic penalty enters the combined energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinematicTerm {
    /// `sum max(0, |v| - v_max)^2`; accelerations get no gradient.
    SpeedHinge,
    /// Weighted speed and acceleration hinges.
    Consistency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    pub limits: PhysicalLimits,
    pub collision_variant: CollisionVariant,
    pub k_c: f64,
    /// Scale the inverse-distance term by `k_c` inside the combined energy.
    /// `collision_energy` always reports the bare term.
    pub inverse_distance_uses_k_c: bool,
    /// Length scale of the smooth variants; `None` means `d_safe`.
    pub sigma: Option<f64>,
    pub lambda_kin: f64,
    pub lambda_v: f64,
    pub lambda_a: f64,
    pub kinematic_term: KinematicTerm,
    /// Sharpness of the soft minimum.
    pub softmin_beta: f64,
    /// Relative-velocity margin time for the adaptive collision score, seconds.
    pub margin_tau: f64,
    /// Late-timestep emphasis of the adaptive collision score.
    pub margin_gamma: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            limits: PhysicalLimits::default(),
            collision_variant: CollisionVariant::InverseDistance,
            k_c: 100.0,
            inverse_distance_uses_k_c: true,
            sigma: None,
            lambda_kin: 1.0,
            lambda_v: 10.0,
            lambda_a: 5.0,
            kinematic_term: KinematicTerm::SpeedHinge,
            softmin_beta: 10.0,
            margin_tau: 0.5,
            margin_gamma: 1.0,
        }
    }
}

impl EnergyConfig {
    pub fn with_variant(mut self, v: CollisionVariant) -> Self {
        self.collision_variant = v;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.limits.d_safe)
    }

    /// Factor applied to [`collision_energy`] when it enters the combined energy.
    pub fn collision_weight(&self) -> f64 {
        if self.inverse_distance_uses_k_c && self.collision_variant == CollisionVariant::InverseDistance {
            self.k_c
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        let nonneg = [self.lambda_kin, self.lambda_v, self.lambda_a, self.margin_tau, self.margin_gamma];
        if !(self.k_c > 0.0 && self.sigma() > 0.0 && self.softmin_beta > 0.0) || nonneg.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::input("energy config: k_c, sigma, beta must be > 0 and weights >= 0"));
        }
        Ok(())
    }
}

/// Energies and the gradient of `e_total` with respect to every state component.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    pub e_coll: f64,
    pub e_kin: f64,
    pub e_total: f64,
    pub grad: Vec<f64>,
}

impl EnergyReport {
    pub fn grad_norm(&self) -> f64 {
        l2(&self.grad)
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Pair enumeration strategy for collision terms.
#[derive(Clone, Copy)]
pub enum PairSource<'a> {
    /// Every `i < j` pair at every timestep.
    All,
    /// Pairs listed in a prebuilt interaction graph.
    Graph(&'a InteractionGraph),
    /// Pairs found by a uniform grid of the given radius, rebuilt per timestep.
    Grid(f64),
}

// ---------------------------------------------------------------------------
// pair kernels

/// Inverse-distance pair term and `dE/dd`, with `d` clamped at [`D_MIN`].
#[inline]
fn inverse_pair(d: f64, d_safe: f64) -> (f64, f64) {
    if d >= d_safe {
        return (0.0, 0.0);
    }
    let dc = d.max(D_MIN);
    let u = 1.0 / dc - 1.0 / d_safe;
    (u * u, -2.0 * u / (dc * dc))
}

/// Energy of one pair at squared distance `d2`, plus the coefficient `c` such
/// that the gradient with respect to `p_i` is `c * (p_i - p_j)`.
#[inline]
fn pair_kernel(variant: CollisionVariant, d2: f64, d_safe: f64, k_c: f64, sigma: f64) -> (f64, f64) {
    match variant {
        CollisionVariant::InverseDistance => {
            if d2 >= d_safe * d_safe {
                return (0.0, 0.0);
            }
            let d = d2.sqrt();
            let (e, de) = inverse_pair(d, d_safe);
            (e, if d > 0.0 { de / d } else { 0.0 })
        }
        CollisionVariant::SmoothExponential => {
            let e = k_c * (-d2 / (sigma * sigma)).exp();
            (e, -2.0 * e / (sigma * sigma))
        }
        CollisionVariant::GaussianRbf => {
            let e = k_c * (-d2 / (2.0 * sigma * sigma)).exp();
            (e, -e / (sigma * sigma))
        }
        CollisionVariant::SoftMinimum => unreachable!("soft minimum is not pairwise separable"),
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn add_pair_grad(grad: &mut [f64], traj: &Trajectory, i: usize, j: usize, t: usize, c: f64, dx: f64, dy: f64) {
    let oi = traj.offset(i, t);
    let oj = traj.offset(j, t);
    grad[oi] += c * dx;
    grad[oi + 1] += c * dy;
    grad[oj] -= c * dx;
    grad[oj + 1] -= c * dy;
}

fn for_each_pair(
    traj: &Trajectory,
    pairs: PairSource<'_>,
    grid: &mut Option<NeighborGrid>,
    t: usize,
    mut f: impl FnMut(usize, usize),
) {
    match pairs {
        PairSource::All => {
            let n = traj.agents();
            for i in 0..n {
                for j in i + 1..n {
                    f(i, j);
                }
            }
        }
        PairSource::Graph(g) => {
            for (i, j) in g.pairs(t) {
                f(i, j);
            }
        }
        PairSource::Grid(radius) => {
            let grid = grid.get_or_insert_with(|| NeighborGrid::new(radius));
            grid.rebuild((0..traj.agents()).map(|i| traj.position(i, t)));
            grid.for_each_pair(f);
        }
    }
}

/// Collision energy under the configured variant times `scale`, accumulating
/// its gradient into `grad` when given.
fn collision_accumulate(
    traj: &Trajectory,
    cfg: &EnergyConfig,
    pairs: PairSource<'_>,
    mut grad: Option<&mut [f64]>,
    scale: f64,
) -> f64 {
    let d_safe = cfg.limits.d_safe;
    let sigma = cfg.sigma();
    let mut grid = None;
    let mut total = 0.0;

    if cfg.collision_variant == CollisionVariant::SoftMinimum {
        let beta = cfg.softmin_beta;
        let mut buf: Vec<(usize, usize, f64, f64, f64)> = Vec::new();
        for t in 0..traj.horizon() {
            buf.clear();
            for_each_pair(traj, pairs, &mut grid, t, |i, j| {
                let (xi, yi) = traj.position(i, t);
                let (xj, yj) = traj.position(j, t);
                let (dx, dy) = (xi - xj, yi - yj);
                buf.push((i, j, dx, dy, dx.hypot(dy)));
            });
            if buf.is_empty() {
                continue;
            }
            let m = buf.iter().map(|p| p.4).fold(f64::INFINITY, f64::min);
            let z: f64 = buf.iter().map(|p| (-beta * (p.4 - m)).exp()).sum();
            let s = m - z.ln() / beta;
            let (phi, dphi) = inverse_pair(s, d_safe);
            total += scale * cfg.k_c * phi;
            if let Some(g) = grad.as_deref_mut() {
                if dphi != 0.0 {
                    for &(i, j, dx, dy, d) in &buf {
                        if d > 0.0 {
                            let w = (-beta * (d - m)).exp() / z;
                            let c = scale * cfg.k_c * dphi * w / d;
                            add_pair_grad(g, traj, i, j, t, c, dx, dy);
                        }
                    }
                }
            }
        }
        return total;
    }

    for t in 0..traj.horizon() {
        for_each_pair(traj, pairs, &mut grid, t, |i, j| {
            let (xi, yi) = traj.position(i, t);
            let (xj, yj) = traj.position(j, t);
            let (dx, dy) = (xi - xj, yi - yj);
            let (e, c) = pair_kernel(cfg.collision_variant, dx * dx + dy * dy, d_safe, cfg.k_c, sigma);
            total += scale * e;
            if let Some(g) = grad.as_deref_mut() {
                if c != 0.0 {
                    add_pair_grad(g, traj, i, j, t, scale * c, dx, dy);
                }
            }
        });
    }
    total
}

#[inline]
fn hinge(x: f64, limit: f64) -> f64 {
    (x - limit).max(0.0)
}

fn kinematic_accumulate(
    traj: &Trajectory,
    cfg: &EnergyConfig,
    mode: KinematicTerm,
    mut grad: Option<&mut [f64]>,
    weight: f64,
) -> f64 {
    let PhysicalLimits { v_max, a_max, .. } = cfg.limits;
    let (wv, wa) = match mode {
        KinematicTerm::SpeedHinge => (1.0, 0.0),
        KinematicTerm::Consistency => (cfg.lambda_v, cfg.lambda_a),
    };
    let mut total = 0.0;
    for i in 0..traj.agents() {
        for t in 0..traj.horizon() {
            let s = traj.state(i, t);
            let o = traj.offset(i, t);
            let speed = s.speed();
            let hv = hinge(speed, v_max);
            if hv > 0.0 {
                total += wv * hv * hv;
                if let Some(g) = grad.as_deref_mut() {
                    let c = weight * wv * 2.0 * hv / speed;
                    g[o + 2] += c * s.vx;
                    g[o + 3] += c * s.vy;
                }
            }
            if wa > 0.0 {
                let acc = s.accel();
                let ha = hinge(acc, a_max);
                if ha > 0.0 {
                    total += wa * ha * ha;
                    if let Some(g) = grad.as_deref_mut() {
                        let c = weight * wa * 2.0 * ha / acc;
                        g[o + 4] += c * s.ax;
                        g[o + 5] += c * s.ay;
                    }
                }
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// public operations

/// Collision energy under `cfg.collision_variant`, summed over `t` and `i < j`.
///
/// The inverse-distance variant is the bare pair term without `k_c`.
pub fn collision_energy(traj: &Trajectory, cfg: &EnergyConfig) -> f64 {
    collision_accumulate(traj, cfg, PairSource::All, None, 1.0)
}

/// Collision energy restricted to the pairs of `pairs`.
pub fn collision_energy_with(traj: &Trajectory, cfg: &EnergyConfig, pairs: PairSource<'_>) -> f64 {
    collision_accumulate(traj, cfg, pairs, None, 1.0)
}

/// Collision energy for one of the smooth variants.
pub fn collision_energy_smooth(traj: &Trajectory, cfg: &EnergyConfig) -> Result<f64> {
    if !cfg.collision_variant.is_smooth() {
        return Err(Error::input("collision_energy_smooth needs a smooth collision variant"));
    }
    Ok(collision_energy(traj, cfg))
}

/// Speed-hinge kinematic energy.
pub fn kinematic_energy(traj: &Trajectory, cfg: &EnergyConfig) -> f64 {
    kinematic_accumulate(traj, cfg, KinematicTerm::SpeedHinge, None, 1.0)
}

/// Weighted speed and acceleration hinge penalties.
pub fn kinematic_consistency_score(traj: &Trajectory, cfg: &EnergyConfig) -> f64 {
    kinematic_accumulate(traj, cfg, KinematicTerm::Consistency, None, 1.0)
}

/// `k_c (1/d - 1/d_safe)^2` inside `d_safe`, zero outside.
pub fn collision_potential(a: &AgentState, b: &AgentState, cfg: &EnergyConfig) -> f64 {
    let d = (a.px - b.px).hypot(a.py - b.py);
    cfg.k_c * inverse_pair(d, cfg.limits.d_safe).0
}

/// Negative gradient of `sum_j collision_potential(i, j)` with respect to the
/// position of agent `i` at timestep `t`.
pub fn repulsive_force(traj: &Trajectory, i: usize, t: usize, cfg: &EnergyConfig) -> Result<(f64, f64)> {
    if i >= traj.agents() {
        return Err(Error::Index { what: "agent", index: i, len: traj.agents() });
    }
    if t >= traj.horizon() {
        return Err(Error::Index { what: "timestep", index: t, len: traj.horizon() });
    }
    let (xi, yi) = traj.position(i, t);
    let (mut fx, mut fy) = (0.0, 0.0);
    for j in (0..traj.agents()).filter(|&j| j != i) {
        let (xj, yj) = traj.position(j, t);
        let (dx, dy) = (xi - xj, yi - yj);
        let (_, c) = pair_kernel(CollisionVariant::InverseDistance, dx * dx + dy * dy, cfg.limits.d_safe, 1.0, 1.0);
        fx -= cfg.k_c * c * dx;
        fy -= cfg.k_c * c * dy;
    }
    Ok((fx, fy))
}

/// `E = E_coll + lambda_kin * E_kin` and its analytic gradient.
///
/// `e_coll` is the collision term as it enters `E`, i.e.
/// `cfg.collision_weight() * collision_energy`.
pub fn total_energy_and_grad(traj: &Trajectory, cfg: &EnergyConfig) -> Result<EnergyReport> {
    total_energy_and_grad_with(traj, cfg, PairSource::All)
}

pub fn total_energy_and_grad_with(traj: &Trajectory, cfg: &EnergyConfig, pairs: PairSource<'_>) -> Result<EnergyReport> {
    if !traj.is_finite() {
        return Err(Error::input("non-finite trajectory state"));
    }
    let mut grad = vec![0.0; traj.as_slice().len()];
    let e_coll = collision_accumulate(traj, cfg, pairs, Some(&mut grad), cfg.collision_weight());
    let e_kin = kinematic_accumulate(traj, cfg, cfg.kinematic_term, Some(&mut grad), cfg.lambda_kin);
    Ok(EnergyReport { e_coll, e_kin, e_total: e_coll + cfg.lambda_kin * e_kin, grad })
}

/// Scalar `E` without the gradient.
pub fn total_energy(traj: &Trajectory, cfg: &EnergyConfig) -> f64 {
    cfg.collision_weight() * collision_energy(traj, cfg)
        + cfg.lambda_kin * kinematic_accumulate(traj, cfg, cfg.kinematic_term, None, 1.0)
}

/// Margin-inflated collision score with late-timestep emphasis:
/// `sum_t sum_{i<j} rho(t) max(0, d_safe - d + tau |v_i - v_j|)^2`,
/// `rho(t) = 1 + gamma t / T` with `t` counted from 1.
pub fn adaptive_collision_score(traj: &Trajectory, cfg: &EnergyConfig) -> f64 {
    let n = traj.agents();
    let horizon = traj.horizon() as f64;
    let mut total = 0.0;
    for t in 0..traj.horizon() {
        let rho = 1.0 + cfg.margin_gamma * (t + 1) as f64 / horizon;
        for i in 0..n {
            let a = traj.state(i, t);
            for j in i + 1..n {
                let b = traj.state(j, t);
                let d = (a.px - b.px).hypot(a.py - b.py);
                let margin = cfg.margin_tau * (a.vx - b.vx).hypot(a.vy - b.vy);
                let h = (cfg.limits.d_safe - d + margin).max(0.0);
                total += rho * h * h;
            }
        }
    }
    total
}

/// Mean of `(1 + cos) / 2` over consecutive gradient pairs in an iterate
/// sequence. Pairs involving a zero gradient are skipped; if none remain the
/// score is 1.
pub fn gradient_stability(sequence: &[Trajectory], cfg: &EnergyConfig) -> Result<f64> {
    if sequence.len() < 2 {
        return Err(Error::input("gradient_stability needs at least two iterates"));
    }
    let grads = sequence.iter().map(|tr| total_energy_and_grad(tr, cfg).map(|r| r.grad)).collect::<Result<Vec<_>>>()?;
    Ok(stability_of_gradients(&grads))
}

pub(crate) fn stability_of_gradients(grads: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in grads.windows(2) {
        let (na, nb) = (l2(&w[0]), l2(&w[1]));
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let dot: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| a * b).sum();
        let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
        sum += 0.5 * (1.0 + cos);
        count += 1;
    }
    if count == 0 {
        1.0
    } else {
        sum / count as f64
    }
}

/// Number of scalar gradient entries for a trajectory shape.
pub fn grad_len(agents: usize, horizon: usize) -> usize {
    agents * horizon * STATE_DIM
}
