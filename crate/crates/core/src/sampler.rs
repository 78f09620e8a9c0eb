//! Energy-guided reverse diffusion, Langevin refinement and the rejection
//! sampling baseline.
//!
//! A guided step is the unguided reverse step minus `lambda(t) * grad E`
//! evaluated at the current noisy iterate. Diffusion steps count down from
//! `T` (pure noise) to 1, so schedules that grow with `t/T` are strongest at
//! the start of the reverse chain.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{prior_mean, BaseModel};
use crate::energy::{l2, total_energy_and_grad_with, EnergyConfig, PairSource};
use crate::error::{Error, Result};
use crate::rng::{fill_normal, seeded};
use crate::scenario::Scenario;
use crate::trajectory::{PhysicalLimits, Trajectory};
use crate::validity::is_valid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    Constant,
    Linear,
    Quadratic,
    Exponential,
}

impl ScheduleFamily {
    pub const ALL: [ScheduleFamily; 4] =
        [ScheduleFamily::Constant, ScheduleFamily::Linear, ScheduleFamily::Quadratic, ScheduleFamily::Exponential];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleFamily::Constant => "constant",
            ScheduleFamily::Linear => "linear",
            ScheduleFamily::Quadratic => "quadratic",
            ScheduleFamily::Exponential => "exponential",
        }
    }
}

/// Guidance strength as a function of the diffusion step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSchedule {
    pub family: ScheduleFamily,
    pub lambda0: f64,
    /// Power of `t/T` for the quadratic (power-law) family.
    pub exponent: f64,
}

impl Default for GuidanceSchedule {
    fn default() -> Self {
        Self { family: ScheduleFamily::Quadratic, lambda0: 0.1, exponent: 2.0 }
    }
}

impl GuidanceSchedule {
    pub fn new(family: ScheduleFamily, lambda0: f64) -> Self {
        Self { family, lambda0, ..Self::default() }
    }

    pub fn off() -> Self {
        Self::new(ScheduleFamily::Quadratic, 0.0)
    }
}

/// `lambda(t)` for `0 <= t <= total`.
pub fn guidance_strength(t: usize, total: usize, sched: &GuidanceSchedule) -> f64 {
    let r = if total == 0 { 0.0 } else { t as f64 / total as f64 };
    match sched.family {
        ScheduleFamily::Constant => sched.lambda0,
        ScheduleFamily::Linear => sched.lambda0 * r,
        ScheduleFamily::Quadratic => sched.lambda0 * r.powf(sched.exponent),
        ScheduleFamily::Exponential => sched.lambda0 * (r - 1.0).exp(),
    }
}

/// Gradient-explosion handling: a step with `|grad| >= c_crit / sqrt(eta)`
/// aborts the sample, or is rescaled to `clip_grad_norm` when set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplosionPolicy {
    pub c_crit: f64,
    pub clip_grad_norm: Option<f64>,
}

impl Default for ExplosionPolicy {
    fn default() -> Self {
        Self { c_crit: 1e3, clip_grad_norm: None }
    }
}

impl ExplosionPolicy {
    pub fn threshold(&self, eta: f64) -> f64 {
        if eta > 0.0 {
            self.c_crit / eta.sqrt()
        } else {
            f64::INFINITY
        }
    }
}

/// Sampler section of the experiment config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub schedule_family: ScheduleFamily,
    pub lambda0: f64,
    pub exponent: f64,
    pub c_crit: f64,
    pub clip_grad_norm: Option<f64>,
    pub max_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let s = GuidanceSchedule::default();
        let p = ExplosionPolicy::default();
        Self {
            schedule_family: s.family,
            lambda0: s.lambda0,
            exponent: s.exponent,
            c_crit: p.c_crit,
            clip_grad_norm: p.clip_grad_norm,
            max_attempts: 1000,
        }
    }
}

impl SamplerConfig {
    pub fn schedule(&self) -> GuidanceSchedule {
        GuidanceSchedule { family: self.schedule_family, lambda0: self.lambda0, exponent: self.exponent }
    }

    pub fn policy(&self) -> ExplosionPolicy {
        ExplosionPolicy { c_crit: self.c_crit, clip_grad_norm: self.clip_grad_norm }
    }
}

/// One executed guided or Langevin step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub grad_norm: f64,
    pub energy: f64,
    pub step_size: f64,
    pub exploded: bool,
}

/// Per-chain trace. All series have one entry per executed step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SamplerDiagnostics {
    pub grad_norms: Vec<f64>,
    pub energies: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub steps: usize,
    pub explosion_flag: bool,
    pub attempts: usize,
}

impl SamplerDiagnostics {
    fn push(&mut self, r: StepRecord) {
        self.grad_norms.push(r.grad_norm);
        self.energies.push(r.energy);
        self.step_sizes.push(r.step_size);
        self.steps += 1;
        self.explosion_flag |= r.exploded;
    }

    pub fn max_grad_norm(&self) -> f64 {
        self.grad_norms.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_grad_norm(&self) -> f64 {
        if self.grad_norms.is_empty() {
            0.0
        } else {
            self.grad_norms.iter().sum::<f64>() / self.grad_norms.len() as f64
        }
    }
}

/// Whether any recorded gradient norm reaches `c_crit / sqrt(eta_k)` at its step.
pub fn detect_gradient_explosion(diag: &SamplerDiagnostics, c_crit: f64, eta: &[f64]) -> Result<bool> {
    if diag.grad_norms.is_empty() {
        return Err(Error::input("empty diagnostics series"));
    }
    if eta.len() != diag.grad_norms.len() {
        return Err(Error::input("step-size series length differs from gradient series"));
    }
    Ok(diag.grad_norms.iter().zip(eta).any(|(g, &e)| e > 0.0 && *g >= c_crit / e.sqrt()))
}

/// Applies `x -= eta * grad` with the explosion policy. Returns whether the
/// step crossed the threshold.
fn apply_guidance(x: &mut [f64], grad: &mut [f64], norm: f64, eta: f64, policy: &ExplosionPolicy, step: usize) -> Result<bool> {
    if !norm.is_finite() {
        return Err(Error::Explosion { step, norm });
    }
    if eta == 0.0 {
        return Ok(false);
    }
    let exploded = norm >= policy.threshold(eta);
    if exploded {
        match policy.clip_grad_norm {
            Some(c) => grad.iter_mut().for_each(|g| *g *= c / norm),
            None => return Err(Error::Explosion { step, norm }),
        }
    }
    for (xi, gi) in x.iter_mut().zip(grad.iter()) {
        *xi -= eta * gi;
    }
    Ok(exploded)
}

/// Reverse chain for one scenario. Holds the prior rollout and scratch
/// buffers so repeated steps do not reallocate.
pub struct Chain<'a> {
    model: &'a BaseModel,
    scenario: &'a Scenario,
    prior: Trajectory,
    eps: Vec<f64>,
    pairs: PairSource<'a>,
}

impl<'a> Chain<'a> {
    pub fn new(model: &'a BaseModel, scenario: &'a Scenario) -> Self {
        let prior = prior_mean(scenario);
        let eps = vec![0.0; prior.as_slice().len()];
        Self { model, scenario, prior, eps, pairs: PairSource::All }
    }

    /// Evaluate collision energies through a uniform grid of this radius.
    /// Only exact for compact-support variants with `radius >= d_safe`.
    pub fn with_pairs(mut self, pairs: PairSource<'a>) -> Self {
        self.pairs = pairs;
        self
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn prior(&self) -> &Trajectory {
        &self.prior
    }

    pub fn start<R: Rng + ?Sized>(&self, rng: &mut R) -> Trajectory {
        self.model.initial_noise(&self.prior, rng)
    }

    fn base_step<R: Rng + ?Sized>(&mut self, x: &Trajectory, t: usize, rng: &mut R) -> Trajectory {
        let mut out = x.clone();
        self.model.reverse_mean_into(x.as_slice(), t, self.prior.as_slice(), out.as_mut_slice());
        fill_normal(rng, &mut self.eps);
        let scale = self.model.temperature * self.model.sigma(t);
        for (o, e) in out.as_mut_slice().iter_mut().zip(&self.eps) {
            *o += scale * e;
        }
        out
    }

    /// Unguided reverse step.
    pub fn step<R: Rng + ?Sized>(&mut self, x: &Trajectory, t: usize, rng: &mut R) -> Trajectory {
        self.base_step(x, t, rng)
    }

    /// Guided reverse step. The gradient is taken at `x` before the base
    /// step so that both consume the noise stream identically.
    pub fn guided_step<R: Rng + ?Sized>(
        &mut self,
        x: &Trajectory,
        t: usize,
        energy: &EnergyConfig,
        sched: &GuidanceSchedule,
        policy: &ExplosionPolicy,
        rng: &mut R,
    ) -> Result<(Trajectory, StepRecord)> {
        let mut report = total_energy_and_grad_with(x, energy, self.pairs)?;
        let norm = l2(&report.grad);
        let eta = guidance_strength(t, self.model.steps(), sched);
        let mut out = self.base_step(x, t, rng);
        let exploded = apply_guidance(out.as_mut_slice(), &mut report.grad, norm, eta, policy, t)?;
        Ok((out, StepRecord { grad_norm: norm, energy: report.e_total, step_size: eta, exploded }))
    }

    /// Full unguided chain from `x_T`.
    pub fn run_unguided<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Trajectory {
        let mut x = self.start(rng);
        for t in (1..=self.model.steps()).rev() {
            x = self.base_step(&x, t, rng);
        }
        x
    }

    /// Full guided chain. On abort the diagnostics up to the failing step are
    /// returned alongside the error.
    pub fn run_guided<R: Rng + ?Sized>(
        &mut self,
        energy: &EnergyConfig,
        sched: &GuidanceSchedule,
        policy: &ExplosionPolicy,
        rng: &mut R,
    ) -> (Result<Trajectory>, SamplerDiagnostics) {
        let mut diag = SamplerDiagnostics { attempts: 1, ..Default::default() };
        let mut x = self.start(rng);
        for t in (1..=self.model.steps()).rev() {
            match self.guided_step(&x, t, energy, sched, policy, rng) {
                Ok((next, rec)) => {
                    diag.push(rec);
                    x = next;
                }
                Err(e) => {
                    if let Error::Explosion { norm, .. } = e {
                        diag.push(StepRecord {
                            grad_norm: norm,
                            energy: f64::NAN,
                            step_size: guidance_strength(t, self.model.steps(), sched),
                            exploded: true,
                        });
                    }
                    return (Err(e), diag);
                }
            }
        }
        (Ok(x), diag)
    }
}

/// One guided reverse step from `noisy` at diffusion step `t`.
#[allow(clippy::too_many_arguments)]
pub fn guided_reverse_step<R: Rng + ?Sized>(
    noisy: &Trajectory,
    t: usize,
    model: &BaseModel,
    energy: &EnergyConfig,
    sched: &GuidanceSchedule,
    policy: &ExplosionPolicy,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<(Trajectory, StepRecord)> {
    if t == 0 || t > model.steps() {
        return Err(Error::Index { what: "diffusion step", index: t, len: model.steps() });
    }
    let mut chain = Chain::new(model, scenario);
    if noisy.shape() != chain.prior.shape() {
        return Err(Error::Shape { expected: chain.prior.shape(), got: noisy.shape() });
    }
    chain.guided_step(noisy, t, energy, sched, policy, rng)
}

/// Guided sample from pure noise, deterministic in `seed`.
pub fn sample(
    scenario: &Scenario,
    model: &BaseModel,
    energy: &EnergyConfig,
    sched: &GuidanceSchedule,
    policy: &ExplosionPolicy,
    seed: u64,
) -> Result<(Trajectory, SamplerDiagnostics)> {
    let (res, diag) = Chain::new(model, scenario).run_guided(energy, sched, policy, &mut seeded(seed));
    res.map(|tr| (tr, diag))
}

/// Unguided sample consuming the same noise stream as [`sample`].
pub fn sample_unguided(scenario: &Scenario, model: &BaseModel, seed: u64) -> Trajectory {
    Chain::new(model, scenario).run_unguided(&mut seeded(seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectionOutcome {
    /// First valid draw, or `None` when the budget ran out.
    pub trajectory: Option<Trajectory>,
    pub attempts: usize,
}

/// Draws unguided samples until one is valid or `max_attempts` is spent.
/// The first attempt reproduces [`sample_unguided`] for the same seed.
pub fn rejection_sample(
    scenario: &Scenario,
    model: &BaseModel,
    limits: &PhysicalLimits,
    max_attempts: usize,
    seed: u64,
) -> Result<RejectionOutcome> {
    if max_attempts == 0 {
        return Err(Error::input("max_attempts must be at least 1"));
    }
    let mut rng = seeded(seed);
    let mut chain = Chain::new(model, scenario);
    for attempt in 1..=max_attempts {
        let tr = chain.run_unguided(&mut rng);
        if is_valid(&tr, limits) {
            return Ok(RejectionOutcome { trajectory: Some(tr), attempts: attempt });
        }
    }
    Ok(RejectionOutcome { trajectory: None, attempts: max_attempts })
}

/// `eta_k = eta0 / k` for `k = 1..=n`.
pub fn harmonic_step_sizes(eta0: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| eta0 / k as f64).collect()
}

/// Energy-descent Langevin chain `x <- x - eta grad E + sqrt(2 eta) xi`.
///
/// With `rng = None` the noise term is dropped and the chain is plain
/// gradient descent. The returned energy trace has one entry per iteration,
/// recorded before that iteration's update, plus the final energy as the
/// last element.
pub fn langevin_refine<R: Rng + ?Sized>(
    traj: &Trajectory,
    energy: &EnergyConfig,
    step_sizes: &[f64],
    policy: &ExplosionPolicy,
    mut rng: Option<&mut R>,
) -> Result<(Trajectory, SamplerDiagnostics)> {
    if step_sizes.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::input("Langevin step sizes must be positive"));
    }
    let mut x = traj.clone();
    let mut diag = SamplerDiagnostics { attempts: 1, ..Default::default() };
    let mut xi = vec![0.0; x.as_slice().len()];
    for (k, &eta) in step_sizes.iter().enumerate() {
        let mut rep = total_energy_and_grad_with(&x, energy, PairSource::All)?;
        let norm = l2(&rep.grad);
        let exploded = apply_guidance(x.as_mut_slice(), &mut rep.grad, norm, eta, policy, k + 1)?;
        if let Some(r) = rng.as_deref_mut() {
            fill_normal(r, &mut xi);
            let s = (2.0 * eta).sqrt();
            for (v, n) in x.as_mut_slice().iter_mut().zip(&xi) {
                *v += s * n;
            }
        }
        diag.push(StepRecord { grad_norm: norm, energy: rep.e_total, step_size: eta, exploded });
    }
    diag.energies.push(crate::energy::total_energy(&x, energy));
    Ok((x, diag))
}
