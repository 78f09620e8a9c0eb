mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use trajguide::diffusion::{denoise_mean, reverse_step, BaseModel, ModelConfig};
use trajguide::energy::{
    collision_energy, collision_energy_with, kinematic_energy, total_energy, total_energy_and_grad, total_energy_and_grad_with,
    CollisionVariant, EnergyConfig, KinematicTerm, PairSource,
};
use trajguide::graph::{build_graph, GraphConfig};
use trajguide::metrics::{ade, diversity_logdet, fde, validity_rate};
use trajguide::rng::seeded;
use trajguide::sampler::{guidance_strength, guided_reverse_step, ExplosionPolicy, GuidanceSchedule, ScheduleFamily};
use trajguide::scenarios::{generate, ScenarioSpec};
use trajguide::validity::{in_collision_set, is_valid};
use trajguide::{PhysicalLimits, Scenario, ScenarioKind, Trajectory};

fn traj(seed: u64, n: usize, h: usize, side: f64) -> Trajectory {
    common::random_traj(&mut seeded(seed), n, h, side, 32.0, 9.0)
}

fn energy(variant: usize, consistency: bool) -> EnergyConfig {
    EnergyConfig {
        kinematic_term: if consistency { KinematicTerm::Consistency } else { KinematicTerm::SpeedHinge },
        ..EnergyConfig::default().with_variant(CollisionVariant::ALL[variant])
    }
}

fn shifted(tr: &Trajectory, dx: f64, dy: f64) -> Trajectory {
    let mut out = tr.clone();
    for i in 0..tr.agents() {
        for t in 0..tr.horizon() {
            let mut s = tr.state(i, t);
            s.px += dx;
            s.py += dy;
            out.set(i, t, s);
        }
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn energies_are_nonnegative(seed: u64, n in 1usize..6, h in 1usize..6, v in 0usize..4, c: bool) {
        let tr = traj(seed, n, h, 4.0);
        let cfg = energy(v, c);
        let r = total_energy_and_grad(&tr, &cfg).unwrap();
        prop_assert!(r.e_coll >= 0.0 && r.e_kin >= 0.0);
        prop_assert!(close(r.e_total, r.e_coll + cfg.lambda_kin * r.e_kin));
        prop_assert!(close(r.e_total, total_energy(&tr, &cfg)));
    }

    #[test]
    fn permuting_agents_permutes_everything(seed: u64, n in 2usize..6, h in 1usize..5, v in 0usize..4) {
        let tr = traj(seed, n, h, 5.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seeded(seed ^ 1));
        let p = tr.permute_agents(&perm).unwrap();
        let cfg = energy(v, seed % 2 == 0);
        let (a, b) = (total_energy_and_grad(&tr, &cfg).unwrap(), total_energy_and_grad(&p, &cfg).unwrap());
        prop_assert!(close(a.e_total, b.e_total));
        for (k, &src) in perm.iter().enumerate() {
            for t in 0..h {
                for d in 0..6 {
                    prop_assert!(close(b.grad[p.offset(k, t) + d], a.grad[tr.offset(src, t) + d]));
                }
            }
        }
        let lim = PhysicalLimits::default();
        prop_assert_eq!(is_valid(&tr, &lim), is_valid(&p, &lim));
    }

    #[test]
    fn collision_terms_ignore_translation(seed: u64, n in 2usize..6, h in 1usize..5, v in 0usize..4, dx in -1e3f64..1e3, dy in -1e3f64..1e3) {
        let tr = traj(seed, n, h, 4.0);
        let cfg = energy(v, false);
        let moved = shifted(&tr, dx, dy);
        let (a, b) = (collision_energy(&tr, &cfg), collision_energy(&moved, &cfg));
        prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        prop_assert_eq!(in_collision_set(&tr, &cfg.limits), in_collision_set(&moved, &cfg.limits));
        // pair forces cancel, so the collision gradient has no net push
        let mut kin_free = tr.clone();
        for i in 0..n {
            for t in 0..h {
                let mut s = kin_free.state(i, t);
                s.vx = 0.0;
                s.vy = 0.0;
                kin_free.set(i, t, s);
            }
        }
        let g = total_energy_and_grad(&kin_free, &cfg).unwrap().grad;
        for t in 0..h {
            let (sx, sy) = (0..n).fold((0.0, 0.0), |(x, y), i| (x + g[kin_free.offset(i, t)], y + g[kin_free.offset(i, t) + 1]));
            let scale = (0..n).map(|i| g[kin_free.offset(i, t)].abs() + g[kin_free.offset(i, t) + 1].abs()).sum::<f64>();
            prop_assert!(sx.abs() <= 1e-9 * scale.max(1.0) && sy.abs() <= 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn kinematic_energy_vanishes_inside_limits(seed: u64, n in 1usize..5, h in 1usize..5) {
        let tr = common::random_traj(&mut seeded(seed), n, h, 50.0, 21.0, 5.6);
        prop_assert_eq!(kinematic_energy(&tr, &EnergyConfig::default()), 0.0);
        prop_assert_eq!(kinematic_energy(&tr, &energy(0, true)), 0.0);
    }

    #[test]
    fn pruned_pairs_match_brute_force(seed: u64, n in 2usize..10, h in 1usize..5, side in 2.0f64..80.0) {
        let tr = traj(seed, n, h, side);
        let cfg = EnergyConfig::default();
        let brute = total_energy_and_grad(&tr, &cfg).unwrap();
        let graph = build_graph(&tr, &GraphConfig::default()).unwrap();
        for pairs in [PairSource::Grid(cfg.limits.d_safe), PairSource::Grid(30.0), PairSource::Graph(&graph)] {
            let r = total_energy_and_grad_with(&tr, &cfg, pairs).unwrap();
            prop_assert!(close(r.e_total, brute.e_total));
            prop_assert!(r.grad.iter().zip(&brute.grad).all(|(a, b)| close(*a, *b)));
            prop_assert!(close(collision_energy_with(&tr, &cfg, pairs), collision_energy(&tr, &cfg)));
        }
    }

    #[test]
    fn schedules_are_bounded_and_peak_at_the_start(lambda0 in 0.0f64..5.0, total in 1usize..40, f in 0usize..4) {
        let sched = GuidanceSchedule::new(ScheduleFamily::ALL[f], lambda0);
        prop_assert!(close(guidance_strength(total, total, &sched), lambda0));
        let mut prev = f64::INFINITY;
        for t in (0..=total).rev() {
            let l = guidance_strength(t, total, &sched);
            prop_assert!((0.0..=lambda0).contains(&l) && l <= prev);
            prev = l;
        }
    }

    #[test]
    fn denoise_mean_is_affine(seed: u64, t in 1usize..=16, w in -3.0f64..3.0) {
        let sc = generate(&ScenarioSpec::new(ScenarioKind::Roundabout, 3, seed % 50)).unwrap();
        let model = BaseModel::new(&ModelConfig::default()).unwrap();
        let a = traj(seed, 3, sc.horizon, 60.0);
        let b = traj(seed ^ 7, 3, sc.horizon, 60.0);
        let mix = Trajectory::from_vec(3, sc.horizon, a.dt(),
            a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| w * x + (1.0 - w) * y).collect()).unwrap();
        let (ma, mb, mm) = (
            denoise_mean(&a, t, &model, &sc).unwrap(),
            denoise_mean(&b, t, &model, &sc).unwrap(),
            denoise_mean(&mix, t, &model, &sc).unwrap(),
        );
        for k in 0..mm.as_slice().len() {
            let want = w * ma.as_slice()[k] + (1.0 - w) * mb.as_slice()[k];
            prop_assert!((mm.as_slice()[k] - want).abs() <= 1e-9 * (1.0 + want.abs() + ma.as_slice()[k].abs() + mb.as_slice()[k].abs()));
        }
    }

    #[test]
    fn displacement_metrics_are_distances(seed: u64, n in 1usize..5, h in 1usize..6) {
        let a = traj(seed, n, h, 30.0);
        let b = traj(seed ^ 3, n, h, 30.0);
        prop_assert_eq!(ade(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(fde(&a, &a).unwrap(), 0.0);
        prop_assert!(close(ade(&a, &b).unwrap(), ade(&b, &a).unwrap()));
        prop_assert!(fde(&a, &b).unwrap() >= 0.0);
        let r = validity_rate(&[a.clone(), b.clone()], &PhysicalLimits::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        let d = diversity_logdet(&[a, b], None).unwrap();
        prop_assert!(d.is_finite() && d >= 0.0 - 1e-12);
    }

    #[test]
    fn scenario_json_round_trips(seed in 0u64..500, n in 1usize..7, k in 0usize..4) {
        let sc = generate(&ScenarioSpec::new(ScenarioKind::ARCHETYPES[k], n, seed)).unwrap();
        let json = sc.to_json().unwrap();
        let back = Scenario::from_json(&json).unwrap();
        prop_assert_eq!(&back, &sc);
        prop_assert_eq!(back.to_json().unwrap(), json);
    }
}

#[test]
fn guided_step_with_zero_lambda_is_the_base_step() {
    let sc = generate(&ScenarioSpec::new(ScenarioKind::Intersection, 4, 9)).unwrap();
    let model = BaseModel::new(&ModelConfig::default()).unwrap();
    let energy = EnergyConfig::default();
    for seed in 0..20 {
        let x = traj(seed, 4, sc.horizon, 40.0);
        for t in 1..=model.steps() {
            let (g, rec) = guided_reverse_step(
                &x,
                t,
                &model,
                &energy,
                &GuidanceSchedule::off(),
                &ExplosionPolicy::default(),
                &sc,
                &mut seeded(seed),
            )
            .unwrap();
            let b = reverse_step(&x, t, &model, &sc, &mut seeded(seed)).unwrap();
            assert_eq!(g.as_slice(), b.as_slice());
            assert_eq!(rec.step_size, 0.0);
        }
    }
}
