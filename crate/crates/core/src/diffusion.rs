//! Analytic diffusion base model.
//!
//! Clean trajectories are modeled as independent Gaussians per state
//! component, centered on a constant-velocity rollout of the scenario's
//! initial states. Under the standard DDPM forward process
//! `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps` the posterior over `x_0`
//! given `x_t` is Gaussian and available in closed form, which gives the
//! reverse-process mean without any learned network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fill_normal;
use crate::scenario::Scenario;
use crate::trajectory::{AgentState, Trajectory, STATE_DIM};

/// Linear-beta DDPM schedule. Step `t` runs over `1..=steps`; `t = 0` is the
/// clean end with `abar_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::input("noise schedule needs at least one step"));
        }
        if !(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max) {
            return Err(Error::input(format!("beta range [{beta_min}, {beta_max}] must lie in (0, 1)")));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|k| if steps == 1 { beta_min } else { beta_min + (beta_max - beta_min) * k as f64 / (steps - 1) as f64 })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `abar_t`, with `abar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// DDPM posterior variance `beta_t (1 - abar_{t-1}) / (1 - abar_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    /// Importance weight `1 / (1 - abar_t)` of the denoising loss.
    pub fn loss_weight(&self, t: usize) -> f64 {
        1.0 / (1.0 - self.alpha_bar(t))
    }

    fn check_step(&self, t: usize, allow_zero: bool) -> Result<()> {
        if t > self.steps() || (t == 0 && !allow_zero) {
            return Err(Error::Index { what: "diffusion step", index: t, len: self.steps() });
        }
        Ok(())
    }
}

/// Prior standard deviations per state group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorScale {
    pub pos: f64,
    pub vel: f64,
    pub acc: f64,
}

impl Default for PriorScale {
    fn default() -> Self {
        Self { pos: 2.0, vel: 1.0, acc: 0.5 }
    }
}

impl PriorScale {
    #[inline]
    pub fn component(&self, k: usize) -> f64 {
        match k {
            0 | 1 => self.pos,
            2 | 3 => self.vel,
            _ => self.acc,
        }
    }
}

/// On-disk model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub temperature: f64,
    pub prior_scale: PriorScale,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { steps: 16, beta_min: 1e-4, beta_max: 0.2, temperature: 0.8, prior_scale: PriorScale::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseModel {
    pub schedule: NoiseSchedule,
    pub prior_scale: PriorScale,
    pub temperature: f64,
}

impl BaseModel {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        let ps = cfg.prior_scale;
        if !(ps.pos > 0.0 && ps.vel > 0.0 && ps.acc > 0.0) {
            return Err(Error::input("prior scales must be positive"));
        }
        if !(cfg.temperature >= 0.0) {
            return Err(Error::input("temperature must be non-negative"));
        }
        Ok(Self {
            schedule: NoiseSchedule::linear(cfg.steps, cfg.beta_min, cfg.beta_max)?,
            prior_scale: ps,
            temperature: cfg.temperature,
        })
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    /// Constant-velocity rollout of the initial states with zero acceleration.
    pub fn prior_mean(&self, scenario: &Scenario) -> Trajectory {
        prior_mean(scenario)
    }

    /// Posterior mean of the clean trajectory given a noisy iterate at step `t`.
    pub fn predict_clean(&self, noisy: &Trajectory, t: usize, prior: &Trajectory) -> Result<Trajectory> {
        self.schedule.check_step(t, true)?;
        check_shape(noisy, prior)?;
        let mut out = noisy.clone();
        self.predict_clean_into(noisy.as_slice(), t, prior.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    fn predict_clean_into(&self, noisy: &[f64], t: usize, prior: &[f64], out: &mut [f64]) {
        let ab = self.schedule.alpha_bar(t);
        let sq = ab.sqrt();
        // gain per state component
        let mut gain = [0.0; STATE_DIM];
        for (k, g) in gain.iter_mut().enumerate() {
            let s2 = self.prior_scale.component(k).powi(2);
            *g = ab * s2 / (ab * s2 + 1.0 - ab);
        }
        for (idx, o) in out.iter_mut().enumerate() {
            let g = gain[idx % STATE_DIM];
            *o = g * noisy[idx] / sq + (1.0 - g) * prior[idx];
        }
    }

    /// Mean of `x_{t-1}` given `x_t`, written into `out`.
    pub(crate) fn reverse_mean_into(&self, noisy: &[f64], t: usize, prior: &[f64], out: &mut [f64]) {
        self.predict_clean_into(noisy, t, prior, out);
        let s = &self.schedule;
        let denom = 1.0 - s.alpha_bar(t);
        let c_clean = s.alpha_bar(t - 1).sqrt() * s.beta(t) / denom;
        let c_noisy = s.alpha(t).sqrt() * (1.0 - s.alpha_bar(t - 1)) / denom;
        for (o, x) in out.iter_mut().zip(noisy) {
            *o = c_clean * *o + c_noisy * x;
        }
    }

    /// Standard deviation of the reverse-step noise, before temperature.
    pub fn sigma(&self, t: usize) -> f64 {
        self.schedule.posterior_variance(t).sqrt()
    }

    /// Draw `x_T` from the model's exact marginal at the last step.
    pub fn initial_noise<R: Rng + ?Sized>(&self, prior: &Trajectory, rng: &mut R) -> Trajectory {
        let t = self.steps();
        let ab = self.schedule.alpha_bar(t);
        let mut out = prior.clone();
        let buf = out.as_mut_slice();
        fill_normal(rng, buf);
        let mut sd = [0.0; STATE_DIM];
        for (k, v) in sd.iter_mut().enumerate() {
            *v = (ab * self.prior_scale.component(k).powi(2) + 1.0 - ab).sqrt();
        }
        let sq = ab.sqrt();
        for (idx, (o, m)) in buf.iter_mut().zip(prior.as_slice()).enumerate() {
            *o = sq * m + sd[idx % STATE_DIM] * *o;
        }
        out
    }
}

fn check_shape(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { expected: b.shape(), got: a.shape() });
    }
    Ok(())
}

/// Constant-velocity rollout of a scenario's initial states.
pub fn prior_mean(scenario: &Scenario) -> Trajectory {
    let n = scenario.agents();
    let mut out = Trajectory::zeros(n, scenario.horizon, scenario.dt).expect("validated scenario");
    for (i, s) in scenario.initial.iter().enumerate() {
        for t in 0..scenario.horizon {
            let tau = t as f64 * scenario.dt;
            out.set(i, t, AgentState::new(s.px + s.vx * tau, s.py + s.vy * tau, s.vx, s.vy, 0.0, 0.0));
        }
    }
    out
}

/// `sqrt(abar_t) x + sqrt(1 - abar_t) eps`; `t = 0` returns the input.
pub fn forward_diffuse<R: Rng + ?Sized>(
    traj: &Trajectory,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Trajectory> {
    schedule.check_step(t, true)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = traj.clone();
    let mut eps = vec![0.0; traj.as_slice().len()];
    fill_normal(rng, &mut eps);
    for (o, e) in out.as_mut_slice().iter_mut().zip(&eps) {
        *o = a * *o + b * e;
    }
    Ok(out)
}

/// Reverse-process mean `mu(x_t, t)`: the DDPM posterior mean of `x_{t-1}`
/// evaluated at the analytic clean-trajectory prediction.
pub fn denoise_mean(noisy: &Trajectory, t: usize, model: &BaseModel, scenario: &Scenario) -> Result<Trajectory> {
    model.schedule.check_step(t, false)?;
    let prior = prior_mean(scenario);
    check_shape(noisy, &prior)?;
    let mut out = noisy.clone();
    model.reverse_mean_into(noisy.as_slice(), t, prior.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// One unguided reverse step: `mu(x_t, t) + temperature * sigma_t * eps`.
pub fn reverse_step<R: Rng + ?Sized>(
    noisy: &Trajectory,
    t: usize,
    model: &BaseModel,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut out = denoise_mean(noisy, t, model, scenario)?;
    let mut eps = vec![0.0; out.as_slice().len()];
    fill_normal(rng, &mut eps);
    let scale = model.temperature * model.sigma(t);
    for (o, e) in out.as_mut_slice().iter_mut().zip(&eps) {
        *o += scale * e;
    }
    Ok(out)
}
