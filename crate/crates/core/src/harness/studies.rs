use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::stats::{loglog_slope, median};
use super::with_pool;
use crate::diffusion::{prior_mean, BaseModel};
use crate::energy::{gradient_stability, total_energy_and_grad_with, CollisionVariant, EnergyConfig, PairSource};
use crate::error::{Error, Result};
use crate::rng::{mix_seed, seeded};
use crate::sampler::{langevin_refine, Chain, ExplosionPolicy};
use crate::scenario::{Arena, Scenario, ScenarioKind};
use crate::scenarios::{generate, ScenarioSpec};
use crate::trajectory::{AgentState, PhysicalLimits, Trajectory};
use crate::validity::is_valid;

// ---------------------------------------------------------------------------
// scaling

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub agents: usize,
    /// Median wall time of one brute-force energy and gradient evaluation.
    pub brute_ms: f64,
    /// Same, with pairs found through the neighbour grid.
    pub pruned_ms: f64,
    pub mean_neighbors: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    /// Log-log slope of brute-force time against agent count.
    pub brute_slope: Option<f64>,
    pub pruned_slope: Option<f64>,
}

/// Agents on a square lattice, all moving with the same velocity so the
/// neighbour structure holds over the horizon.
pub fn lattice_trajectory(agents: usize, horizon: usize, spacing: f64) -> Result<Trajectory> {
    let side = (agents as f64).sqrt().ceil() as usize;
    let initial = (0..agents)
        .map(|k| AgentState::new((k % side) as f64 * spacing, (k / side) as f64 * spacing, 5.0, 0.0, 0.0, 0.0))
        .collect();
    let extent = side as f64 * spacing + 10.0;
    let sc =
        Scenario::new(ScenarioKind::UrbanDense, initial, PhysicalLimits::default(), Arena::square(extent))?.with_horizon(horizon);
    Ok(prior_mean(&sc))
}

/// Smallest batch of calls to `f` that spans `min_batch_ms`, after warming up.
fn calibrate_batch(min_batch_ms: f64, f: &mut dyn FnMut()) -> usize {
    let mut batch = 1usize;
    loop {
        let start = Instant::now();
        for _ in 0..batch {
            f();
        }
        if start.elapsed().as_secs_f64() * 1e3 >= min_batch_ms || batch >= 1 << 24 {
            return batch;
        }
        batch *= 2;
    }
}

/// Median per-call time in milliseconds for each closure. Repetitions run
/// round-robin across the closures so slow spells on the host hit every
/// size alike.
fn time_all(reps: usize, min_batch_ms: f64, fs: &mut [Box<dyn FnMut() + '_>]) -> Vec<f64> {
    let batches: Vec<usize> = fs.iter_mut().map(|f| calibrate_batch(min_batch_ms, f.as_mut())).collect();
    let mut samples = vec![Vec::new(); fs.len()];
    for _ in 0..reps.max(5) {
        for ((f, &batch), out) in fs.iter_mut().zip(&batches).zip(&mut samples) {
            let start = Instant::now();
            for _ in 0..batch {
                f();
            }
            out.push(start.elapsed().as_secs_f64() * 1e3 / batch as f64);
        }
    }
    samples.into_iter().map(median).collect()
}

/// Times brute-force against grid-pruned energy evaluation. Runs on the
/// calling thread only.
pub fn run_scaling_study(agent_counts: &[usize], cfg: &ExperimentConfig) -> Result<ScalingStudy> {
    if agent_counts.is_empty() || agent_counts.contains(&0) {
        return Err(Error::input("agent_counts must be non-empty and positive"));
    }
    let sc = &cfg.scaling;
    let energy = EnergyConfig { collision_variant: CollisionVariant::InverseDistance, ..cfg.energy.clone() };
    let radius = cfg.graph.r_interact.max(energy.limits.d_safe);
    let trajs = agent_counts.iter().map(|&n| lattice_trajectory(n, sc.horizon, sc.spacing)).collect::<Result<Vec<_>>>()?;
    let mut timed: Vec<Box<dyn FnMut() + '_>> = Vec::new();
    for traj in &trajs {
        let e = &energy;
        timed.push(Box::new(move || {
            black_box(total_energy_and_grad_with(black_box(traj), e, PairSource::All).unwrap());
        }));
        timed.push(Box::new(move || {
            black_box(total_energy_and_grad_with(black_box(traj), e, PairSource::Grid(radius)).unwrap());
        }));
    }
    let times = time_all(sc.repetitions, sc.min_batch_ms, &mut timed);
    drop(timed);
    let mut rows = Vec::new();
    for (k, (&n, traj)) in agent_counts.iter().zip(&trajs).enumerate() {
        let graph = crate::graph::build_graph(traj, &cfg.graph)?;
        rows.push(ScalingRow {
            agents: n,
            brute_ms: times[2 * k],
            pruned_ms: times[2 * k + 1],
            mean_neighbors: 2.0 * graph.edge_count() as f64 / (n * sc.horizon) as f64,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.agents as f64).collect();
    let brute: Vec<f64> = rows.iter().map(|r| r.brute_ms).collect();
    let pruned: Vec<f64> = rows.iter().map(|r| r.pruned_ms).collect();
    Ok(ScalingStudy { brute_slope: loglog_slope(&xs, &brute), pruned_slope: loglog_slope(&xs, &pruned), rows })
}

impl ScalingStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("agents,brute_ms,pruned_ms,mean_neighbors\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.agents, r.brute_ms, r.pruned_ms, r.mean_neighbors));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// density sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub density: f64,
    pub agents: usize,
    pub seeds: usize,
    /// Seeds whose placement failed.
    pub infeasible: usize,
    pub validity: f64,
    pub unguided_validity: f64,
    pub explosion_frequency: f64,
    pub mean_grad_norm: f64,
}

struct SeedOutcome {
    agents: usize,
    valid: bool,
    unguided_valid: bool,
    exploded: bool,
    grad: f64,
}

/// Guided sampling on `urban_dense` scenes at each density, one scene per seed.
pub fn run_failure_sweep(densities: &[f64], cfg: &ExperimentConfig) -> Result<Vec<FailureRow>> {
    if densities.is_empty() {
        return Err(Error::input("density list is empty"));
    }
    if densities.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::input("densities must be positive"));
    }
    let seeds = cfg.seed_list();
    if seeds.is_empty() {
        return Err(Error::input("failure sweep needs at least one seed"));
    }
    let model = BaseModel::new(&cfg.model)?;
    let sched = cfg.sampler.schedule();
    let policy = cfg.policy();
    let run = |rho: f64, seed: u64| -> Result<Option<SeedOutcome>> {
        let spec = ScenarioSpec {
            kind: ScenarioKind::UrbanDense,
            density_target: Some(rho),
            arena_side: Some(cfg.failure.arena_side),
            horizon: cfg.failure.horizon,
            seed,
            ..ScenarioSpec::default()
        };
        let sc = match generate(&spec) {
            Ok(sc) => sc,
            Err(Error::Infeasible(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut energy = cfg.energy.clone();
        energy.limits = sc.limits;
        let mut chain = Chain::new(&model, &sc);
        let (res, diag) = chain.run_guided(&energy, &sched, &policy, &mut seeded(seed));
        let unguided = chain.run_unguided(&mut seeded(seed));
        let (valid, exploded) = match res {
            Ok(tr) => (is_valid(&tr, &sc.limits), false),
            Err(Error::Explosion { .. }) => (false, true),
            Err(e) => return Err(e),
        };
        Ok(Some(SeedOutcome {
            agents: sc.agents(),
            valid,
            unguided_valid: is_valid(&unguided, &sc.limits),
            exploded,
            grad: diag.mean_grad_norm(),
        }))
    };
    densities
        .iter()
        .map(|&rho| {
            let outs = with_pool(cfg.workers, || seeds.par_iter().map(|&s| run(rho, s)).collect::<Result<Vec<_>>>())?;
            let ok: Vec<&SeedOutcome> = outs.iter().flatten().collect();
            let frac = |f: &dyn Fn(&SeedOutcome) -> bool| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter(|o| f(o)).count() as f64 / ok.len() as f64
                }
            };
            Ok(FailureRow {
                density: rho,
                agents: ok.first().map_or(0, |o| o.agents),
                seeds: seeds.len(),
                infeasible: outs.len() - ok.len(),
                validity: frac(&|o| o.valid),
                unguided_validity: frac(&|o| o.unguided_valid),
                explosion_frequency: frac(&|o| o.exploded),
                mean_grad_norm: if ok.is_empty() { f64::NAN } else { ok.iter().map(|o| o.grad).sum::<f64>() / ok.len() as f64 },
            })
        })
        .collect()
}

pub fn failure_csv(rows: &[FailureRow]) -> String {
    let mut s = String::from("density,agents,seeds,infeasible,validity,unguided_validity,explosion_frequency,mean_grad_norm\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.density, r.agents, r.seeds, r.infeasible, r.validity, r.unguided_validity, r.explosion_frequency, r.mean_grad_norm
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// perturbation robustness

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub delta: f64,
    /// Mean L2 distance between the base and perturbed final trajectories.
    pub mean_deviation: f64,
    pub max_deviation: f64,
    /// Seeds where every run finished.
    pub seeds_used: usize,
}

/// Same-seed deviation of the guided sample when `lambda0` grows by each
/// `delta`. Seeds where any run aborts are skipped for all deltas.
pub fn run_perturbation(scenario: &Scenario, deltas: &[f64], cfg: &ExperimentConfig) -> Result<Vec<PerturbationRow>> {
    let model = BaseModel::new(&cfg.model)?;
    let policy = cfg.policy();
    let mut energy = cfg.energy.clone();
    energy.limits = scenario.limits;
    let seeds = cfg.seed_list();
    let runs = with_pool(cfg.workers, || {
        seeds
            .par_iter()
            .map(|&seed| {
                let mut chain = Chain::new(&model, scenario);
                let mut outs = Vec::with_capacity(deltas.len() + 1);
                for d in std::iter::once(0.0).chain(deltas.iter().copied()) {
                    let mut sched = cfg.sampler.schedule();
                    sched.lambda0 += d;
                    match chain.run_guided(&energy, &sched, &policy, &mut seeded(seed)).0 {
                        Ok(tr) => outs.push(tr),
                        Err(Error::Explosion { .. }) => return Ok(None),
                        Err(e) => return Err(e),
                    }
                }
                let base = &outs[0];
                outs[1..].iter().map(|tr| tr.distance_to(base)).collect::<Result<Vec<_>>>().map(Some)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let used: Vec<Vec<f64>> = runs.into_iter().flatten().collect();
    Ok(deltas
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            let devs: Vec<f64> = used.iter().map(|d| d[k]).collect();
            PerturbationRow {
                delta,
                mean_deviation: devs.iter().sum::<f64>() / devs.len().max(1) as f64,
                max_deviation: devs.iter().copied().fold(0.0, f64::max),
                seeds_used: devs.len(),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// sample complexity

/// Settings for [`run_sample_complexity`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplexityConfig {
    /// Validity the guided refinement must reach.
    pub target_validity: f64,
    pub calibration_samples: usize,
    pub max_iterations: usize,
    /// Constant Langevin step size.
    pub eta: f64,
    /// Inject Langevin noise; off means plain energy descent.
    pub noise: bool,
    /// Gradient clip applied during refinement instead of aborting.
    pub clip_grad_norm: Option<f64>,
    pub horizon: usize,
    pub speed: f64,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        Self {
            target_validity: 0.95,
            calibration_samples: 2000,
            max_iterations: 2000,
            eta: 0.05,
            noise: false,
            clip_grad_norm: Some(100.0),
            horizon: 30,
            speed: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    /// Probability mass of the valid set under the unguided model.
    pub epsilon: f64,
    /// Lateral offset of the head-on pair that realises it.
    pub offset: f64,
    pub unguided_validity: f64,
    pub rejection_mean_attempts: f64,
    pub rejection_exhausted: usize,
    /// Fewest Langevin iterations after which the refined samples reach the
    /// target validity; `None` if `max_iterations` is not enough.
    pub guided_budget: Option<usize>,
}

/// Two agents driving at each other with the given lateral offset.
pub fn head_on_with_offset(offset: f64, speed: f64, horizon: usize) -> Result<Scenario> {
    let tc = (horizon / 2) as f64 * crate::trajectory::DEFAULT_DT;
    let x0 = speed * tc;
    let initial = vec![AgentState::new(-x0, 0.0, speed, 0.0, 0.0, 0.0), AgentState::new(x0, offset, -speed, 0.0, 0.0, 0.0)];
    Ok(Scenario::new(ScenarioKind::HeadOn, initial, PhysicalLimits::default(), Arena::square(4.0 * x0 + 20.0))?
        .with_horizon(horizon))
}

fn unguided_validity(sc: &Scenario, model: &BaseModel, seeds: &[u64]) -> f64 {
    let ok = seeds.par_iter().filter(|&&s| is_valid(&Chain::new(model, sc).run_unguided(&mut seeded(s)), &sc.limits)).count();
    ok as f64 / seeds.len() as f64
}

/// For each `epsilon`, calibrates a head-on pair whose unguided valid mass
/// is about `epsilon`, then measures rejection attempts and the Langevin
/// refinement budget needed to reach `target_validity`.
pub fn run_sample_complexity(epsilons: &[f64], cc: &ComplexityConfig, cfg: &ExperimentConfig) -> Result<Vec<ComplexityRow>> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::input("epsilons must lie in (0, 1)"));
    }
    let model = BaseModel::new(&cfg.model)?;
    let seeds = cfg.seed_list();
    let calib: Vec<u64> = (0..cc.calibration_samples as u64).map(|k| mix_seed(0xCA1B, k)).collect();
    let policy = ExplosionPolicy { clip_grad_norm: cc.clip_grad_norm, ..cfg.policy() };
    with_pool(cfg.workers, || {
        epsilons
            .iter()
            .map(|&eps| {
                let (mut lo, mut hi) = (0.0, 2.0 * cfg.energy.limits.d_safe + 10.0);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    let p = unguided_validity(&head_on_with_offset(mid, cc.speed, cc.horizon)?, &model, &calib);
                    if p < eps {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let offset = 0.5 * (lo + hi);
                let sc = head_on_with_offset(offset, cc.speed, cc.horizon)?;
                let mut energy = cfg.energy.clone();
                energy.limits = sc.limits;
                let per_seed = seeds
                    .par_iter()
                    .map(|&seed| {
                        let rej = crate::sampler::rejection_sample(&sc, &model, &sc.limits, cfg.sampler.max_attempts, seed)?;
                        let mut x = Chain::new(&model, &sc).run_unguided(&mut seeded(seed));
                        let mut rng = seeded(mix_seed(seed, 0x4c41_4e47));
                        let mut valid = Vec::with_capacity(cc.max_iterations + 1);
                        valid.push(is_valid(&x, &sc.limits));
                        for _ in 0..cc.max_iterations {
                            let noise = cc.noise.then_some(&mut rng);
                            match langevin_refine(&x, &energy, &[cc.eta], &policy, noise) {
                                Ok((next, _)) => x = next,
                                // an aborted chain stays where it was and keeps its verdict
                                Err(Error::Explosion { .. }) => {}
                                Err(e) => return Err(e),
                            }
                            valid.push(is_valid(&x, &sc.limits));
                        }
                        Ok((rej, valid))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let n = per_seed.len() as f64;
                let budget = (0..=cc.max_iterations)
                    .find(|&k| per_seed.iter().filter(|(_, v)| v[k]).count() as f64 / n >= cc.target_validity);
                Ok(ComplexityRow {
                    epsilon: eps,
                    offset,
                    unguided_validity: per_seed.iter().filter(|(_, v)| v[0]).count() as f64 / n,
                    rejection_mean_attempts: per_seed.iter().map(|(r, _)| r.attempts as f64).sum::<f64>() / n,
                    rejection_exhausted: per_seed.iter().filter(|(r, _)| r.trajectory.is_none()).count(),
                    guided_budget: budget,
                })
            })
            .collect::<Result<Vec<_>>>()
    })
}

// ---------------------------------------------------------------------------
// Langevin convergence

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub iterations: usize,
    pub validity: f64,
    pub mean_final_energy: f64,
}

/// Invalid unguided draws from `scenario`, taken in seed order.
pub fn invalid_starts(scenario: &Scenario, model: &BaseModel, count: usize, seed: u64) -> Vec<Trajectory> {
    let mut out = Vec::with_capacity(count);
    let mut k = 0u64;
    while out.len() < count && k < 1000 * count as u64 + 1000 {
        let tr = Chain::new(model, scenario).run_unguided(&mut seeded(mix_seed(seed, k)));
        if !is_valid(&tr, &scenario.limits) {
            out.push(tr);
        }
        k += 1;
    }
    out
}

/// Validity of Langevin refinement at each iteration budget, each budget run
/// as a fresh chain with the same noise seed. With `noise` off the chain is
/// plain energy descent.
pub fn run_convergence(
    starts: &[Trajectory],
    budgets: &[usize],
    energy: &EnergyConfig,
    eta0: f64,
    noise: bool,
    policy: &ExplosionPolicy,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    budgets
        .iter()
        .map(|&b| {
            let steps = crate::sampler::harmonic_step_sizes(eta0, b);
            let outs = starts
                .par_iter()
                .enumerate()
                .map(|(k, st)| {
                    let mut rng = seeded(mix_seed(seed, k as u64));
                    match langevin_refine(st, energy, &steps, policy, noise.then_some(&mut rng)) {
                        Ok((tr, diag)) => Ok((is_valid(&tr, &energy.limits), *diag.energies.last().unwrap_or(&f64::NAN))),
                        Err(Error::Explosion { .. }) => Ok((false, f64::NAN)),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let finite: Vec<f64> = outs.iter().map(|o| o.1).filter(|e| e.is_finite()).collect();
            Ok(ConvergenceRow {
                iterations: b,
                validity: outs.iter().filter(|o| o.0).count() as f64 / outs.len().max(1) as f64,
                mean_final_energy: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// gradient stability

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityComparison {
    pub sequences: usize,
    pub smooth_wins: usize,
    pub mean_smooth: f64,
    pub mean_inverse: f64,
}

impl StabilityComparison {
    pub fn win_rate(&self) -> f64 {
        self.smooth_wins as f64 / self.sequences.max(1) as f64
    }
}

/// A random-walk iterate sequence around a scene whose pairs sit near
/// `d_safe`, so pairs keep crossing in and out of the safety distance.
pub fn boundary_sequence<R: Rng>(
    rng: &mut R,
    agents: usize,
    horizon: usize,
    len: usize,
    step: f64,
    d_safe: f64,
) -> Result<Vec<Trajectory>> {
    let mut states = Vec::with_capacity(agents);
    for i in 0..agents {
        // a loose chain of agents spaced at about d_safe
        let base = (i as f64 * d_safe * rng.gen_range(0.9..1.1), rng.gen_range(-0.3..0.3));
        states
            .push((0..horizon).map(|t| AgentState::new(base.0 + 0.2 * t as f64, base.1, 2.0, 0.0, 0.0, 0.0)).collect::<Vec<_>>());
    }
    let mut x = Trajectory::from_states(&states, crate::trajectory::DEFAULT_DT)?;
    let mut seq = Vec::with_capacity(len);
    seq.push(x.clone());
    for _ in 1..len {
        for i in 0..agents {
            for t in 0..horizon {
                let o = x.offset(i, t);
                let buf = x.as_mut_slice();
                buf[o] += step * rng.sample::<f64, _>(rand_distr::StandardNormal);
                buf[o + 1] += step * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        seq.push(x.clone());
    }
    Ok(seq)
}

/// Gradient stability of the smooth exponential variant against inverse
/// distance on shared boundary-straddling sequences.
pub fn run_stability_comparison(sequences: usize, seed: u64, energy: &EnergyConfig) -> Result<StabilityComparison> {
    let smooth = energy.clone().with_variant(CollisionVariant::SmoothExponential);
    let inverse = energy.clone().with_variant(CollisionVariant::InverseDistance);
    let scores = (0..sequences as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeded(mix_seed(seed, k));
            let seq = boundary_sequence(&mut rng, 4, 5, 20, 0.15, energy.limits.d_safe)?;
            Ok((gradient_stability(&seq, &smooth)?, gradient_stability(&seq, &inverse)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len().max(1) as f64;
    Ok(StabilityComparison {
        sequences,
        smooth_wins: scores.iter().filter(|(s, i)| s > i).count(),
        mean_smooth: scores.iter().map(|s| s.0).sum::<f64>() / n,
        mean_inverse: scores.iter().map(|s| s.1).sum::<f64>() / n,
    })
}
