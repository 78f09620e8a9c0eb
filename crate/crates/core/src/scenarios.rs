//! Deterministic synthetic scenario generators.
//!
//! Geometry constants are fixed defaults:
//!
//! | kind           | layout                                                        | speeds (m/s) |
//! |----------------|---------------------------------------------------------------|--------------|
//! | intersection   | +x and +y streams crossing at the origin, 8 m headway          | 5 – 10       |
//! | highway_merge  | +x main lane, ramp joining at 15° towards x = 0, 15 m headway  | 20 – 28      |
//! | roundabout     | ring of radius 12 m plus radial entries from 4 arms            | 4 – 7        |
//! | urban_dense    | uniform placement in a square arena, random headings           | 0 – 8        |
//! | head_on        | opposing traffic on one lane, lateral offset up to 0.5 m       | 4 – 8        |
//!
//! Streams are timed so the leading agents meet at the middle of the horizon.
//! Initial accelerations are zero.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::prior_mean;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scenario::{Arena, Scenario, ScenarioKind};
use crate::trajectory::{AgentState, PhysicalLimits, DEFAULT_DT};

const INTERSECTION_HEADWAY: f64 = 8.0;
const MERGE_HEADWAY: f64 = 15.0;
const MERGE_ANGLE_DEG: f64 = 15.0;
const ROUNDABOUT_RADIUS: f64 = 12.0;
const ROUNDABOUT_ARM: f64 = 15.0;
const URBAN_ARENA_SIDE: f64 = 40.0;
const ARENA_MARGIN: f64 = 5.0;
const PLACEMENT_TRIES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n_agents: usize,
    pub horizon: usize,
    pub dt: f64,
    /// Agents per square meter; overrides `n_agents` for `urban_dense`.
    pub density_target: Option<f64>,
    pub seed: u64,
    /// Side of the square arena used by `urban_dense`, meters.
    pub arena_side: Option<f64>,
    pub limits: PhysicalLimits,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Intersection,
            n_agents: 4,
            horizon: 30,
            dt: DEFAULT_DT,
            density_target: None,
            seed: 0,
            arena_side: None,
            limits: PhysicalLimits::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, n_agents: usize, seed: u64) -> Self {
        Self { kind, n_agents, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 && self.density_target.is_none() {
            return Err(Error::input("scenario spec needs at least one agent"));
        }
        if let Some(rho) = self.density_target {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::input("density_target must be positive"));
            }
        }
        if let Some(side) = self.arena_side {
            if !(side > 0.0) {
                return Err(Error::input("arena_side must be positive"));
            }
        }
        if self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::input("scenario spec needs horizon >= 1 and dt > 0"));
        }
        self.limits.validate()
    }

    fn conflict_time(&self) -> f64 {
        (self.horizon / 2) as f64 * self.dt
    }
}

/// Builds the scenario described by `spec`. Pure in `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let (initial, arena) = match spec.kind {
        ScenarioKind::Intersection => (intersection(spec, &mut rng), None),
        ScenarioKind::HighwayMerge => (highway_merge(spec, &mut rng), None),
        ScenarioKind::Roundabout => (roundabout(spec, &mut rng), None),
        ScenarioKind::HeadOn => (head_on(spec, &mut rng), None),
        ScenarioKind::UrbanDense => {
            let side = spec.arena_side.unwrap_or(URBAN_ARENA_SIDE);
            let arena = Arena::square(side);
            (urban_dense(spec, arena, &mut rng)?, Some(arena))
        }
    };
    for s in &initial {
        debug_assert!(s.speed() <= spec.limits.v_max);
    }
    let mut sc = Scenario {
        kind: spec.kind,
        seed: spec.seed,
        limits: spec.limits,
        dt: spec.dt,
        horizon: spec.horizon,
        arena: Arena::square(1.0),
        initial,
    };
    sc.arena = match arena {
        Some(a) => a,
        None => rollout_bounds(&sc),
    };
    if spec.kind != ScenarioKind::UrbanDense {
        separate_initial(&mut sc.initial, spec.limits.d_safe);
    }
    sc.validate()?;
    Ok(sc)
}

fn speed_in<R: Rng>(rng: &mut R, lo: f64, hi: f64, limits: &PhysicalLimits) -> f64 {
    rng.gen_range(lo..hi).min(limits.v_max)
}

fn intersection<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Vec<AgentState> {
    let tc = spec.conflict_time();
    let speeds = [speed_in(rng, 5.0, 10.0, &spec.limits), speed_in(rng, 5.0, 10.0, &spec.limits)];
    (0..spec.n_agents)
        .map(|k| {
            let stream = k % 2;
            let rank = (k / 2) as f64;
            let v = speeds[stream];
            let dist = v * tc + rank * INTERSECTION_HEADWAY;
            if stream == 0 {
                AgentState::new(-dist, 0.0, v, 0.0, 0.0, 0.0)
            } else {
                AgentState::new(0.0, -dist, 0.0, v, 0.0, 0.0)
            }
        })
        .collect()
}

fn highway_merge<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Vec<AgentState> {
    let tc = spec.conflict_time();
    let main_v = speed_in(rng, 20.0, 28.0, &spec.limits);
    let ramp_v = speed_in(rng, 20.0, 28.0, &spec.limits);
    let theta = MERGE_ANGLE_DEG.to_radians();
    (0..spec.n_agents)
        .map(|k| {
            let rank = (k / 2) as f64;
            if k % 2 == 0 {
                let dist = main_v * tc + rank * MERGE_HEADWAY;
                AgentState::new(-dist, 0.0, main_v, 0.0, 0.0, 0.0)
            } else {
                let dist = ramp_v * tc + rank * MERGE_HEADWAY;
                let (c, s) = (theta.cos(), theta.sin());
                AgentState::new(-dist * c, -dist * s, ramp_v * c, ramp_v * s, 0.0, 0.0)
            }
        })
        .collect()
}

fn roundabout<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Vec<AgentState> {
    let n = spec.n_agents;
    let on_ring = n.div_ceil(2);
    let phase = rng.gen_range(0.0..TAU);
    let mut out = Vec::with_capacity(n);
    for k in 0..on_ring {
        let ang = phase + TAU * k as f64 / on_ring as f64;
        let v = speed_in(rng, 4.0, 7.0, &spec.limits);
        let (c, s) = (ang.cos(), ang.sin());
        out.push(AgentState::new(ROUNDABOUT_RADIUS * c, ROUNDABOUT_RADIUS * s, -v * s, v * c, 0.0, 0.0));
    }
    for k in 0..n - on_ring {
        let arm = (k % 4) as f64 * FRAC_PI_2;
        let back = (k / 4) as f64 * INTERSECTION_HEADWAY;
        let r = ROUNDABOUT_RADIUS + ROUNDABOUT_ARM + back;
        let v = speed_in(rng, 4.0, 7.0, &spec.limits);
        let (c, s) = (arm.cos(), arm.sin());
        out.push(AgentState::new(r * c, r * s, -v * c, -v * s, 0.0, 0.0));
    }
    out
}

fn head_on<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> Vec<AgentState> {
    let tc = spec.conflict_time();
    let speeds = [speed_in(rng, 4.0, 8.0, &spec.limits), speed_in(rng, 4.0, 8.0, &spec.limits)];
    let offset = rng.gen_range(-0.5..0.5);
    (0..spec.n_agents)
        .map(|k| {
            let dir = k % 2;
            let rank = (k / 2) as f64;
            let v = speeds[dir];
            let dist = v * tc + rank * INTERSECTION_HEADWAY;
            if dir == 0 {
                AgentState::new(-dist, 0.0, v, 0.0, 0.0, 0.0)
            } else {
                AgentState::new(dist, offset, -v, 0.0, 0.0, 0.0)
            }
        })
        .collect()
}

fn urban_dense<R: Rng>(spec: &ScenarioSpec, arena: Arena, rng: &mut R) -> Result<Vec<AgentState>> {
    let n = match spec.density_target {
        Some(rho) => (rho * arena.area()).round() as usize,
        None => spec.n_agents,
    };
    if n == 0 {
        return Err(Error::input("requested density yields zero agents"));
    }
    let d2 = spec.limits.d_safe * spec.limits.d_safe;
    let mut out: Vec<AgentState> = Vec::with_capacity(n);
    for k in 0..n {
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let x = rng.gen_range(arena.min_x..arena.max_x);
            let y = rng.gen_range(arena.min_y..arena.max_y);
            if out.iter().all(|s| (s.px - x).powi(2) + (s.py - y).powi(2) >= d2) {
                let heading = rng.gen_range(-PI..PI);
                let v = speed_in(rng, 0.0, 8.0, &spec.limits);
                out.push(AgentState::new(x, y, v * heading.cos(), v * heading.sin(), 0.0, 0.0));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "could not place agent {k} of {n} at distance >= {} m after {PLACEMENT_TRIES} tries",
                spec.limits.d_safe
            )));
        }
    }
    Ok(out)
}

/// Pushes later agents back along their heading until every initial pair is
/// at least `d_safe` apart.
fn separate_initial(states: &mut [AgentState], d_safe: f64) {
    for k in 1..states.len() {
        for _ in 0..1000 {
            let s = states[k];
            let clash = states[..k].iter().any(|o| (o.px - s.px).hypot(o.py - s.py) < d_safe);
            if !clash {
                break;
            }
            let v = s.speed();
            let (ux, uy) = if v > 0.0 { (s.vx / v, s.vy / v) } else { (1.0, 0.0) };
            states[k].px -= ux * d_safe;
            states[k].py -= uy * d_safe;
        }
    }
}

fn rollout_bounds(sc: &Scenario) -> Arena {
    let prior = prior_mean(sc);
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..prior.agents() {
        for t in 0..prior.horizon() {
            let (x, y) = prior.position(i, t);
            lo_x = lo_x.min(x);
            lo_y = lo_y.min(y);
            hi_x = hi_x.max(x);
            hi_y = hi_y.max(y);
        }
    }
    Arena { min_x: lo_x - ARENA_MARGIN, min_y: lo_y - ARENA_MARGIN, max_x: hi_x + ARENA_MARGIN, max_y: hi_y + ARENA_MARGIN }
}

/// Two agents approaching each other on a shared lane.
pub fn head_on_pair(seed: u64, horizon: usize) -> Scenario {
    generate(&ScenarioSpec { kind: ScenarioKind::HeadOn, n_agents: 2, horizon, seed, ..ScenarioSpec::default() })
        .expect("head-on spec is valid")
}
