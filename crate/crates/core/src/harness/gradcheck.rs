use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{total_energy, total_energy_and_grad, CollisionVariant, EnergyConfig, KinematicTerm, D_MIN};
use crate::error::{Error, Result};
use crate::rng::{mix_seed, seeded};
use crate::trajectory::{AgentState, Trajectory};

/// Coordinates whose kink lies closer than this are treated as non-smooth.
const LOCUS_BAND: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub coordinates: usize,
    /// Coordinates skipped from the pass criterion because a kink is near.
    pub near_locus: usize,
    /// Worst relative error away from non-smooth loci.
    pub max_rel_error: f64,
    /// Worst relative error over every coordinate.
    pub max_rel_error_all: f64,
    pub tolerance: f64,
    /// Coordinates above tolerance away from any locus.
    pub failures: usize,
    /// Above-tolerance coordinates keyed by the nearby locus.
    pub loci: BTreeMap<String, usize>,
    pub per_variant: BTreeMap<String, f64>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.max_rel_error < self.tolerance
    }
}

fn variant_name(v: CollisionVariant) -> &'static str {
    match v {
        CollisionVariant::InverseDistance => "inverse_distance",
        CollisionVariant::SmoothExponential => "smooth_exponential",
        CollisionVariant::GaussianRbf => "gaussian_rbf",
        CollisionVariant::SoftMinimum => "soft_minimum",
    }
}

fn random_instance<R: Rng>(rng: &mut R, snap: bool, d_safe: f64) -> Result<Trajectory> {
    let n = rng.gen_range(2..=5);
    let horizon = rng.gen_range(1..=4);
    let mut states: Vec<Vec<AgentState>> = (0..n)
        .map(|_| {
            (0..horizon)
                .map(|_| {
                    let (sh, ah) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
                    let (sp, ac) = (rng.gen_range(0.0..40.0), rng.gen_range(0.0..12.0));
                    AgentState::new(
                        rng.gen_range(0.0..3.5),
                        rng.gen_range(0.0..3.5),
                        sp * sh.cos(),
                        sp * sh.sin(),
                        ac * ah.cos(),
                        ac * ah.sin(),
                    )
                })
                .collect()
        })
        .collect();
    if snap {
        // put one pair right on the safety distance
        let a = states[0][0];
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let d = d_safe + rng.gen_range(-3e-6..3e-6);
        states[1][0].px = a.px + d * th.cos();
        states[1][0].py = a.py + d * th.sin();
    }
    Trajectory::from_states(&states, 0.1)
}

/// Soft minimum of pair distances at `t`, matching the energy's definition.
fn soft_min(tr: &Trajectory, t: usize, beta: f64) -> Option<f64> {
    let n = tr.agents();
    let mut d = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (tr.position(i, t), tr.position(j, t));
            d.push((a.0 - b.0).hypot(a.1 - b.1));
        }
    }
    let m = d.iter().copied().fold(f64::INFINITY, f64::min);
    (!d.is_empty()).then(|| m - d.iter().map(|x| (-beta * (x - m)).exp()).sum::<f64>().ln() / beta)
}

/// The non-smooth locus closest to coordinate `k` of agent `i` at `t`, if
/// one is inside [`LOCUS_BAND`].
fn nearby_locus(tr: &Trajectory, cfg: &EnergyConfig, i: usize, t: usize, k: usize) -> Option<&'static str> {
    let lim = cfg.limits;
    let near = |x: f64, at: f64| (x - at).abs() < LOCUS_BAND;
    let s = tr.state(i, t);
    match k {
        0 | 1 => match cfg.collision_variant {
            CollisionVariant::InverseDistance => (0..tr.agents()).filter(|&j| j != i).find_map(|j| {
                let (a, b) = (tr.position(i, t), tr.position(j, t));
                let d = (a.0 - b.0).hypot(a.1 - b.1);
                if near(d, lim.d_safe) {
                    Some("d_safe")
                } else if d < D_MIN + LOCUS_BAND {
                    Some("d_min")
                } else {
                    None
                }
            }),
            CollisionVariant::SoftMinimum => {
                let sm = soft_min(tr, t, cfg.softmin_beta)?;
                let coincident = (0..tr.agents()).filter(|&j| j != i).any(|j| {
                    let (a, b) = (tr.position(i, t), tr.position(j, t));
                    (a.0 - b.0).hypot(a.1 - b.1) < LOCUS_BAND
                });
                if near(sm, lim.d_safe) {
                    Some("soft_min_d_safe")
                } else if sm < D_MIN + LOCUS_BAND || coincident {
                    Some("d_min")
                } else {
                    None
                }
            }
            _ => None,
        },
        2 | 3 => near(s.speed(), lim.v_max).then_some("v_max"),
        _ => (cfg.kinematic_term == KinematicTerm::Consistency && near(s.accel(), lim.a_max)).then_some("a_max"),
    }
}

struct TrialResult {
    variant: &'static str,
    coords: usize,
    near: usize,
    max_rel: f64,
    max_rel_all: f64,
    failures: usize,
    loci: Vec<&'static str>,
}

fn check_trial(trial: usize, base: &EnergyConfig, seed: u64, tol: f64) -> Result<TrialResult> {
    let variant = CollisionVariant::ALL[trial % 4];
    let kin = if (trial / 4).is_multiple_of(2) { KinematicTerm::SpeedHinge } else { KinematicTerm::Consistency };
    let cfg = EnergyConfig { collision_variant: variant, kinematic_term: kin, ..base.clone() };
    let mut rng = seeded(mix_seed(seed, trial as u64));
    let tr = random_instance(&mut rng, trial % 10 == 9, cfg.limits.d_safe)?;
    let grad = total_energy_and_grad(&tr, &cfg)?.grad;
    let mut out = TrialResult {
        variant: variant_name(variant),
        coords: 0,
        near: 0,
        max_rel: 0.0,
        max_rel_all: 0.0,
        failures: 0,
        loci: Vec::new(),
    };
    let mut probe = tr.clone();
    for i in 0..tr.agents() {
        for t in 0..tr.horizon() {
            for k in 0..6 {
                let idx = tr.offset(i, t) + k;
                let x = tr.as_slice()[idx];
                let h = 1e-5 * x.abs().max(1.0);
                probe.as_mut_slice()[idx] = x + h;
                let ep = total_energy(&probe, &cfg);
                probe.as_mut_slice()[idx] = x - h;
                let em = total_energy(&probe, &cfg);
                probe.as_mut_slice()[idx] = x;
                let fd = (ep - em) / (2.0 * h);
                let a = grad[idx];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                out.coords += 1;
                out.max_rel_all = out.max_rel_all.max(rel);
                match nearby_locus(&tr, &cfg, i, t, k) {
                    Some(locus) => {
                        out.near += 1;
                        if rel >= tol {
                            out.loci.push(locus);
                        }
                    }
                    None => {
                        out.max_rel = out.max_rel.max(rel);
                        if rel >= tol {
                            out.failures += 1;
                            out.loci.push("none");
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Central finite-difference check of `total_energy_and_grad` over random
/// scenes, cycling through every collision variant and both kinematic terms.
/// Every tenth scene pins one pair at `d_safe` to exercise the kink.
pub fn run_gradcheck(trials: usize, cfg: &EnergyConfig, seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(Error::input("gradcheck needs at least one trial"));
    }
    cfg.validate()?;
    let results = (0..trials).into_par_iter().map(|k| check_trial(k, cfg, seed, tolerance)).collect::<Result<Vec<_>>>()?;
    let mut report = GradcheckReport {
        trials,
        coordinates: 0,
        near_locus: 0,
        max_rel_error: 0.0,
        max_rel_error_all: 0.0,
        tolerance,
        failures: 0,
        loci: BTreeMap::new(),
        per_variant: BTreeMap::new(),
    };
    for r in results {
        report.coordinates += r.coords;
        report.near_locus += r.near;
        report.max_rel_error = report.max_rel_error.max(r.max_rel);
        report.max_rel_error_all = report.max_rel_error_all.max(r.max_rel_all);
        report.failures += r.failures;
        for l in r.loci {
            *report.loci.entry(l.to_string()).or_default() += 1;
        }
        let e = report.per_variant.entry(r.variant.to_string()).or_insert(0.0);
        *e = e.max(r.max_rel);
    }
    Ok(report)
}
