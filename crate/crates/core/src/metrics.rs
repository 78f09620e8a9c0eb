//! Evaluation metrics for sampled trajectories.
//!
//! Reference trajectories for ADE/FDE are the scenario's constant-velocity
//! rollout. Batch metrics reduce in sample order so results are bit-stable.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{PhysicalLimits, Trajectory};
use crate::validity::{distance_unchecked, in_collision_set, is_valid, violates_accel, violates_speed};

/// Default radius for the social conformity score, meters.
pub const DEFAULT_D_SOCIAL: f64 = 5.0;
/// Diagonal jitter added to the diversity kernel.
pub const DIVERSITY_EPS: f64 = 1e-6;

fn same_shape(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape { expected: b.shape(), got: a.shape() });
    }
    Ok(())
}

fn position_error(pred: &Trajectory, reference: &Trajectory, i: usize, t: usize) -> f64 {
    let (px, py) = pred.position(i, t);
    let (rx, ry) = reference.position(i, t);
    (px - rx).hypot(py - ry)
}

/// Mean position error over all agents and timesteps.
pub fn ade(pred: &Trajectory, reference: &Trajectory) -> Result<f64> {
    same_shape(pred, reference)?;
    let (n, horizon) = pred.shape();
    let mut sum = 0.0;
    for i in 0..n {
        for t in 0..horizon {
            sum += position_error(pred, reference, i, t);
        }
    }
    Ok(sum / (n * horizon) as f64)
}

/// Mean position error at the final timestep.
pub fn fde(pred: &Trajectory, reference: &Trajectory) -> Result<f64> {
    same_shape(pred, reference)?;
    let (n, horizon) = pred.shape();
    let sum: f64 = (0..n).map(|i| position_error(pred, reference, i, horizon - 1)).sum();
    Ok(sum / n as f64)
}

fn non_empty(samples: &[Trajectory]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::input("metric needs at least one sample"));
    }
    Ok(())
}

fn fraction(samples: &[Trajectory], pred: impl Fn(&Trajectory) -> bool) -> Result<f64> {
    non_empty(samples)?;
    Ok(samples.iter().filter(|s| pred(s)).count() as f64 / samples.len() as f64)
}

pub fn validity_rate(samples: &[Trajectory], limits: &PhysicalLimits) -> Result<f64> {
    fraction(samples, |s| is_valid(s, limits))
}

/// Fraction of samples with at least one collision anywhere.
pub fn collision_rate(samples: &[Trajectory], limits: &PhysicalLimits) -> Result<f64> {
    fraction(samples, |s| in_collision_set(s, limits))
}

/// Fraction of agent pairs that collide at some timestep, for one sample.
/// Single-agent samples have no pairs and score 0.
pub fn pair_collision_fraction(traj: &Trajectory, limits: &PhysicalLimits) -> f64 {
    let n = traj.agents();
    if n < 2 {
        return 0.0;
    }
    let mut hits = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if (0..traj.horizon()).any(|t| distance_unchecked(traj, i, j, t) < limits.d_safe) {
                hits += 1;
            }
        }
    }
    hits as f64 / (n * (n - 1) / 2) as f64
}

/// Mean of [`pair_collision_fraction`] over a batch.
pub fn pair_collision_rate(samples: &[Trajectory], limits: &PhysicalLimits) -> Result<f64> {
    non_empty(samples)?;
    Ok(samples.iter().map(|s| pair_collision_fraction(s, limits)).sum::<f64>() / samples.len() as f64)
}

/// Number of windows [`temporal_consistency`] splits a horizon into.
pub fn window_count(horizon: usize, window: usize) -> usize {
    horizon.div_ceil(window)
}

/// Fraction of non-overlapping `window`-step segments that are valid on their
/// own. A shorter trailing segment counts as a window.
pub fn temporal_consistency(samples: &[Trajectory], limits: &PhysicalLimits, window: usize) -> Result<f64> {
    non_empty(samples)?;
    if window == 0 {
        return Err(Error::input("temporal consistency window must be >= 1"));
    }
    let mut good = 0usize;
    let mut total = 0usize;
    for s in samples {
        let horizon = s.horizon();
        if window > horizon {
            return Err(Error::input(format!("window {window} exceeds horizon {horizon}")));
        }
        for w in 0..window_count(horizon, window) {
            let start = w * window;
            let seg = s.window(start, (start + window).min(horizon))?;
            good += is_valid(&seg, limits) as usize;
            total += 1;
        }
    }
    Ok(good as f64 / total as f64)
}

/// Mean `|a(t+1) - a(t)| / dt` over agents and consecutive timesteps.
pub fn jerk_profile(traj: &Trajectory) -> Result<f64> {
    let (n, horizon) = traj.shape();
    if horizon < 2 {
        return Err(Error::input("jerk needs at least two timesteps"));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for t in 0..horizon - 1 {
            let a = traj.state(i, t);
            let b = traj.state(i, t + 1);
            sum += (b.ax - a.ax).hypot(b.ay - a.ay) / traj.dt();
        }
    }
    Ok(sum / (n * (horizon - 1)) as f64)
}

/// `sum_t sum_{i<j, d < d_social} (1 - cos angle(v_i, v_j)) exp(-d / d_social)`.
/// A stationary agent counts as aligned with everyone.
pub fn social_conformity(traj: &Trajectory, d_social: f64) -> Result<f64> {
    if !(d_social > 0.0) {
        return Err(Error::input("d_social must be > 0"));
    }
    let n = traj.agents();
    let mut total = 0.0;
    for t in 0..traj.horizon() {
        for i in 0..n {
            let a = traj.state(i, t);
            for j in i + 1..n {
                let b = traj.state(j, t);
                let d = (a.px - b.px).hypot(a.py - b.py);
                if d >= d_social {
                    continue;
                }
                let (sa, sb) = (a.speed(), b.speed());
                if sa < 1e-6 || sb < 1e-6 {
                    continue;
                }
                let cos = ((a.vx * b.vx + a.vy * b.vy) / (sa * sb)).clamp(-1.0, 1.0);
                total += (1.0 - cos) * (-d / d_social).exp();
            }
        }
    }
    Ok(total)
}

fn embedding(traj: &Trajectory) -> Vec<f64> {
    let (n, horizon) = traj.shape();
    let mut z = Vec::with_capacity(2 * n * horizon);
    for i in 0..n {
        for t in 0..horizon {
            let (x, y) = traj.position(i, t);
            z.push(x);
            z.push(y);
        }
    }
    z
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// `-log det(K + eps I)` with an RBF kernel over flattened position
/// sequences. `sigma_k = None` takes the median pairwise embedding distance
/// (falling back to 1 when every sample is identical).
pub fn diversity_logdet(samples: &[Trajectory], sigma_k: Option<f64>) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::input("diversity needs at least two samples"));
    }
    for s in &samples[1..] {
        same_shape(s, &samples[0])?;
    }
    let z: Vec<Vec<f64>> = samples.iter().map(embedding).collect();
    let m = z.len();
    let mut dist = DMatrix::<f64>::zeros(m, m);
    let mut off = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            let d = z[a].iter().zip(&z[b]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            dist[(a, b)] = d;
            dist[(b, a)] = d;
            off.push(d);
        }
    }
    let sigma = match sigma_k {
        Some(s) if s > 0.0 => s,
        Some(_) => return Err(Error::input("sigma_k must be > 0")),
        None => Some(median(off)).filter(|s| *s > 0.0).unwrap_or(1.0),
    };
    let k = DMatrix::from_fn(m, m, |a, b| {
        let kab = (-dist[(a, b)].powi(2) / (2.0 * sigma * sigma)).exp();
        if a == b {
            kab + DIVERSITY_EPS
        } else {
            kab
        }
    });
    let logdet = match k.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
        None => k.lu().determinant().abs().ln(),
    };
    Ok(-logdet)
}

/// Samples violating each constraint; one sample may count in several.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationBreakdown {
    pub collision: usize,
    pub speed: usize,
    pub acceleration: usize,
}

impl ViolationBreakdown {
    pub fn of(traj: &Trajectory, limits: &PhysicalLimits) -> Self {
        Self {
            collision: in_collision_set(traj, limits) as usize,
            speed: violates_speed(traj, limits) as usize,
            acceleration: violates_accel(traj, limits) as usize,
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.collision += other.collision;
        self.speed += other.speed;
        self.acceleration += other.acceleration;
    }
}

pub fn violation_breakdown(samples: &[Trajectory], limits: &PhysicalLimits) -> ViolationBreakdown {
    let mut acc = ViolationBreakdown::default();
    for s in samples {
        acc.add(&ViolationBreakdown::of(s, limits));
    }
    acc
}

/// What happened to one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    /// Aborted by the gradient explosion check.
    Exploded,
    /// Rejection sampling ran out of attempts.
    Exhausted,
}

impl SampleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleStatus::Ok => "ok",
            SampleStatus::Exploded => "exploded",
            SampleStatus::Exhausted => "exhausted",
        }
    }
}

/// Metrics for one sample or, in aggregate rows, their means.
///
/// Failed samples count as invalid and colliding; their trajectory metrics
/// are `None` and aggregates average over the samples that produced one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub scenario: String,
    pub kind: String,
    pub method: String,
    pub seed: Option<u64>,
    pub status: SampleStatus,
    pub validity: f64,
    pub collision_rate: f64,
    pub pair_collision_rate: Option<f64>,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
    pub temporal_consistency: Option<f64>,
    pub jerk_mean: Option<f64>,
    pub social_conformity: Option<f64>,
    pub diversity: Option<f64>,
    pub violation_breakdown: ViolationBreakdown,
    /// Draws used by rejection sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<f64>,
    /// Mean guidance gradient norm over executed steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm_mean: Option<f64>,
}

/// Knobs for [`SampleReport::evaluate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub d_social: f64,
    /// Temporal consistency window, timesteps.
    pub window: usize,
    pub sigma_k: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { d_social: DEFAULT_D_SOCIAL, window: 10, sigma_k: None }
    }
}

pub const CSV_HEADER: &str = "scenario,kind,method,seed,validity,collision,ade,fde,tc,jerk,social,diversity,status";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl SampleReport {
    /// Scores a finished sample against its reference rollout.
    pub fn evaluate(
        labels: (&str, &str, &str),
        seed: u64,
        traj: &Trajectory,
        reference: &Trajectory,
        limits: &PhysicalLimits,
        cfg: &MetricsConfig,
    ) -> Result<Self> {
        let one = std::slice::from_ref(traj);
        let window = cfg.window.min(traj.horizon()).max(1);
        Ok(Self {
            scenario: labels.0.to_string(),
            kind: labels.1.to_string(),
            method: labels.2.to_string(),
            seed: Some(seed),
            status: SampleStatus::Ok,
            validity: validity_rate(one, limits)?,
            collision_rate: collision_rate(one, limits)?,
            pair_collision_rate: Some(pair_collision_fraction(traj, limits)),
            ade: Some(ade(traj, reference)?),
            fde: Some(fde(traj, reference)?),
            temporal_consistency: Some(temporal_consistency(one, limits, window)?),
            jerk_mean: if traj.horizon() >= 2 { Some(jerk_profile(traj)?) } else { None },
            social_conformity: Some(social_conformity(traj, cfg.d_social)?),
            diversity: None,
            violation_breakdown: ViolationBreakdown::of(traj, limits),
            attempts: None,
            grad_norm_mean: None,
        })
    }

    /// Row for a sample that produced no trajectory.
    pub fn failed(labels: (&str, &str, &str), seed: u64, status: SampleStatus) -> Self {
        Self {
            scenario: labels.0.to_string(),
            kind: labels.1.to_string(),
            method: labels.2.to_string(),
            seed: Some(seed),
            status,
            validity: 0.0,
            collision_rate: 1.0,
            pair_collision_rate: None,
            ade: None,
            fde: None,
            temporal_consistency: None,
            jerk_mean: None,
            social_conformity: None,
            diversity: None,
            violation_breakdown: ViolationBreakdown::default(),
            attempts: None,
            grad_norm_mean: None,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.kind,
            self.method,
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.validity,
            self.collision_rate,
            opt(self.ade),
            opt(self.fde),
            opt(self.temporal_consistency),
            opt(self.jerk_mean),
            opt(self.social_conformity),
            opt(self.diversity),
            self.status.as_str(),
        )
    }

    /// Mean over rows of one group, with `diversity` filled in from the
    /// trajectories when at least two are given.
    pub fn aggregate(rows: &[SampleReport], samples: &[Trajectory], sigma_k: Option<f64>) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::input("cannot aggregate zero rows"))?;
        let n = rows.len() as f64;
        let mean_opt = |f: fn(&SampleReport) -> Option<f64>| {
            let v: Vec<f64> = rows.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let mut breakdown = ViolationBreakdown::default();
        for r in rows {
            breakdown.add(&r.violation_breakdown);
        }
        Ok(Self {
            scenario: first.scenario.clone(),
            kind: first.kind.clone(),
            method: first.method.clone(),
            seed: None,
            // worst status in the group
            status: rows.iter().map(|r| r.status).max().unwrap_or(SampleStatus::Ok),
            validity: rows.iter().map(|r| r.validity).sum::<f64>() / n,
            collision_rate: rows.iter().map(|r| r.collision_rate).sum::<f64>() / n,
            pair_collision_rate: mean_opt(|r| r.pair_collision_rate),
            ade: mean_opt(|r| r.ade),
            fde: mean_opt(|r| r.fde),
            temporal_consistency: mean_opt(|r| r.temporal_consistency),
            jerk_mean: mean_opt(|r| r.jerk_mean),
            social_conformity: mean_opt(|r| r.social_conformity),
            diversity: if samples.len() >= 2 { Some(diversity_logdet(samples, sigma_k)?) } else { None },
            violation_breakdown: breakdown,
            attempts: mean_opt(|r| r.attempts),
            grad_norm_mean: mean_opt(|r| r.grad_norm_mean),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::AgentState;

    fn line(n: usize, horizon: usize, f: impl Fn(usize, usize) -> AgentState) -> Trajectory {
        let states: Vec<Vec<AgentState>> = (0..n).map(|i| (0..horizon).map(|t| f(i, t)).collect()).collect();
        Trajectory::from_states(&states, 0.1).unwrap()
    }

    fn spread(i: usize, t: usize) -> AgentState {
        AgentState::new(10.0 * i as f64 + t as f64, 0.0, 10.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn displacement_errors() {
        let r = line(3, 5, spread);
        assert_eq!(ade(&r, &r).unwrap(), 0.0);
        let shifted = line(3, 5, |i, t| {
            let mut s = spread(i, t);
            s.px += 1.0;
            s
        });
        assert!((ade(&shifted, &r).unwrap() - 1.0).abs() < 1e-12);
        let last = line(3, 5, |i, t| {
            let mut s = spread(i, t);
            if t == 4 {
                s.py += 2.0;
            }
            s
        });
        assert!((fde(&last, &r).unwrap() - 2.0).abs() < 1e-12);
        assert!((ade(&last, &r).unwrap() - 2.0 / 5.0).abs() < 1e-12);
        assert!(ade(&line(2, 5, spread), &r).is_err());
    }

    #[test]
    fn rates_and_windows() {
        let lim = PhysicalLimits::default();
        let good = line(2, 10, spread);
        let bad_late = line(2, 10, |i, t| {
            let mut s = spread(i, t);
            if t == 9 {
                s.px = i as f64;
            }
            s
        });
        let batch = [good.clone(), bad_late.clone()];
        assert_eq!(validity_rate(&batch, &lim).unwrap(), 0.5);
        assert_eq!(collision_rate(&batch, &lim).unwrap(), 0.5);
        assert!(validity_rate(&[], &lim).is_err());
        assert_eq!(temporal_consistency(&[good], &lim, 3).unwrap(), 1.0);
        // windows [0,3) [3,6) [6,9) [9,10): only the last is bad
        assert!((temporal_consistency(std::slice::from_ref(&bad_late), &lim, 3).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(temporal_consistency(&batch, &lim, 10).unwrap(), validity_rate(&batch, &lim).unwrap());
        assert!(temporal_consistency(&batch, &lim, 11).is_err());
        assert!(temporal_consistency(&batch, &lim, 0).is_err());
        assert_eq!(pair_collision_fraction(&bad_late, &lim), 1.0);
    }

    #[test]
    fn jerk_values() {
        let flat = line(1, 4, |_, _| AgentState::new(0.0, 0.0, 0.0, 0.0, 2.0, 0.0));
        assert_eq!(jerk_profile(&flat).unwrap(), 0.0);
        let step = line(1, 2, |_, t| AgentState::new(0.0, 0.0, 0.0, 0.0, t as f64, 0.0));
        assert!((jerk_profile(&step).unwrap() - 10.0).abs() < 1e-12);
        assert!(jerk_profile(&line(1, 1, spread)).is_err());
    }

    #[test]
    fn social_values() {
        let anti = line(2, 1, |i, _| {
            let v = if i == 0 { 1.0 } else { -1.0 };
            AgentState::new(2.5 * i as f64, 0.0, v, 0.0, 0.0, 0.0)
        });
        assert!((social_conformity(&anti, 5.0).unwrap() - 2.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((social_conformity(&anti, 5.0).unwrap() - 1.2131).abs() < 1e-4);
        let parallel = line(3, 2, |i, _| AgentState::new(i as f64, 0.0, 1.0, 0.0, 0.0, 0.0));
        assert_eq!(social_conformity(&parallel, 5.0).unwrap(), 0.0);
        assert_eq!(social_conformity(&anti, 2.0).unwrap(), 0.0);
        assert!(social_conformity(&anti, 0.0).is_err());
    }

    #[test]
    fn diversity_extremes() {
        let a = line(1, 3, spread);
        let e = DIVERSITY_EPS;
        let same = diversity_logdet(&[a.clone(), a.clone()], None).unwrap();
        let expected = -((1.0 + e) * (1.0 + e) - 1.0f64).ln();
        assert!((same - expected).abs() < 1e-6 * expected.abs());
        assert!((same + (2.0 * e).ln()).abs() < 1e-5);
        let far = line(1, 3, |i, t| {
            let mut s = spread(i, t);
            s.px += 1e6;
            s
        });
        let d = diversity_logdet(&[a.clone(), far], Some(1.0)).unwrap();
        assert!((d + 2.0 * (1.0 + e).ln()).abs() < 1e-12);
        assert!(diversity_logdet(&[a], None).is_err());
    }

    #[test]
    fn breakdown_counts() {
        let lim = PhysicalLimits::default();
        let fast = line(1, 2, |_, _| AgentState::new(0.0, 0.0, 40.0, 0.0, 0.0, 0.0));
        assert_eq!(violation_breakdown(&[fast], &lim), ViolationBreakdown { collision: 0, speed: 1, acceleration: 0 });
        assert_eq!(violation_breakdown(&[line(2, 3, spread)], &lim), ViolationBreakdown::default());
    }

    #[test]
    fn report_rows() {
        let lim = PhysicalLimits::default();
        let tr = line(2, 4, spread);
        let r = SampleReport::evaluate(("s", "intersection", "guided"), 7, &tr, &tr, &lim, &MetricsConfig::default()).unwrap();
        assert_eq!(r.validity, 1.0);
        assert_eq!(r.csv_row().split(',').count(), CSV_HEADER.split(',').count());
        let f = SampleReport::failed(("s", "intersection", "guided"), 8, SampleStatus::Exploded);
        assert!(f.csv_row().ends_with(",exploded"));
        let agg = SampleReport::aggregate(&[r, f], &[tr.clone(), tr], None).unwrap();
        assert_eq!(agg.validity, 0.5);
        assert_eq!(agg.ade, Some(0.0));
        assert_eq!(agg.status, SampleStatus::Exploded);
    }
}
