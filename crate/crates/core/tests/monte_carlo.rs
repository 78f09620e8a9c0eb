mod common;

use trajguide::diffusion::{denoise_mean, prior_mean, BaseModel, ModelConfig, PriorScale};
use trajguide::energy::{total_energy, EnergyConfig};
use trajguide::graph::{build_graph, GraphConfig};
use trajguide::metrics::jerk_profile;
use trajguide::rng::seeded;
use trajguide::sampler::{rejection_sample, sample, sample_unguided, ExplosionPolicy, GuidanceSchedule};
use trajguide::scenarios::{generate, head_on_pair, ScenarioSpec};
use trajguide::validity::is_valid;
use trajguide::{AgentState, Arena, PhysicalLimits, Scenario, ScenarioKind};

fn model() -> BaseModel {
    BaseModel::new(&ModelConfig::default()).unwrap()
}

fn single(vx: f64) -> Scenario {
    Scenario::new(
        ScenarioKind::HeadOn,
        vec![AgentState::new(0.0, 0.0, vx, 0.0, 0.0, 0.0)],
        PhysicalLimits::default(),
        Arena::square(100.0),
    )
    .unwrap()
}

#[test]
fn denoise_mean_matches_exact_gaussian_posterior() {
    let m = model();
    let sc = generate(&ScenarioSpec::new(ScenarioKind::HighwayMerge, 3, 4)).unwrap();
    let prior = prior_mean(&sc);
    let s = &m.schedule;
    let scale =
        [m.prior_scale.pos, m.prior_scale.pos, m.prior_scale.vel, m.prior_scale.vel, m.prior_scale.acc, m.prior_scale.acc];
    for t in 1..=m.steps() {
        let x = common::random_traj(&mut seeded(t as u64), 3, sc.horizon, 80.0, 20.0, 5.0);
        let got = denoise_mean(&x, t, &m, &sc).unwrap();
        let (ab1, a) = (s.alpha_bar(t - 1), s.alpha(t));
        for (idx, (&xt, &mu0)) in x.as_slice().iter().zip(prior.as_slice()).enumerate() {
            // x_{t-1} ~ N(sqrt(ab1) mu0, v1); x_t | x_{t-1} ~ N(sqrt(a) x_{t-1}, 1 - a)
            let mu1 = ab1.sqrt() * mu0;
            let v1 = ab1 * scale[idx % 6].powi(2) + 1.0 - ab1;
            let want = mu1 + v1 * a.sqrt() / (a * v1 + 1.0 - a) * (xt - a.sqrt() * mu1);
            assert!(common::rel_close(got.as_slice()[idx], want, 1e-9) || (got.as_slice()[idx] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn huge_prior_scale_leaves_noisy_over_root_alpha_bar() {
    let cfg = ModelConfig { prior_scale: PriorScale { pos: 1e9, vel: 1e9, acc: 1e9 }, ..ModelConfig::default() };
    let m = BaseModel::new(&cfg).unwrap();
    let sc = head_on_pair(3, 10);
    let x = common::random_traj(&mut seeded(5), 2, 10, 30.0, 10.0, 3.0);
    let prior = prior_mean(&sc);
    for t in [1, 8, 16] {
        let got = m.predict_clean(&x, t, &prior).unwrap();
        let sq = m.schedule.alpha_bar(t).sqrt();
        for (g, v) in got.as_slice().iter().zip(x.as_slice()) {
            assert!((g - v / sq).abs() < 1e-6 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn one_agent_chain_mean_is_the_rollout() {
    let m = model();
    let sc = single(8.0);
    let prior = prior_mean(&sc);
    let n = 1000;
    let len = prior.as_slice().len();
    let (mut sum, mut sq) = (vec![0.0; len], vec![0.0; len]);
    for seed in 0..n {
        let tr = sample_unguided(&sc, &m, seed);
        for (k, v) in tr.as_slice().iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    for k in 0..len {
        let mean = sum[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        assert!((mean - prior.as_slice()[k]).abs() <= 3.0 * se + 1e-12, "component {k}: {mean} vs {}", prior.as_slice()[k]);
    }
}

#[test]
fn lone_slow_agent_is_always_valid() {
    let m = model();
    let sc = single(0.0);
    for seed in 0..100 {
        let (tr, _) =
            sample(&sc, &m, &EnergyConfig::default(), &GuidanceSchedule::default(), &ExplosionPolicy::default(), seed).unwrap();
        assert!(is_valid(&tr, &sc.limits));
        assert_eq!(rejection_sample(&sc, &m, &sc.limits, 10, seed).unwrap().attempts, 1);
    }
}

#[test]
fn head_on_guidance_beats_unguided() {
    let m = model();
    let sc = head_on_pair(0, 30);
    let energy = EnergyConfig::default();
    let (mut g, mut u) = (0, 0);
    for seed in 0..200 {
        if let Ok((tr, _)) = sample(&sc, &m, &energy, &GuidanceSchedule::default(), &ExplosionPolicy::default(), seed) {
            g += is_valid(&tr, &sc.limits) as usize;
        }
        u += is_valid(&sample_unguided(&sc, &m, seed), &sc.limits) as usize;
    }
    assert!(g > u, "guided {g} vs unguided {u}");
}

#[test]
fn guided_energy_never_exceeds_unguided_on_average() {
    let m = model();
    let energy = EnergyConfig::default();
    let policy = ExplosionPolicy { clip_grad_norm: Some(100.0), ..ExplosionPolicy::default() };
    for kind in ScenarioKind::ARCHETYPES.into_iter().chain([ScenarioKind::HeadOn]) {
        let sc = generate(&ScenarioSpec::new(kind, 4, 2)).unwrap();
        let (mut g, mut u) = (0.0, 0.0);
        for seed in 0..200 {
            let (tr, _) = sample(&sc, &m, &energy, &GuidanceSchedule::default(), &policy, seed).unwrap();
            g += total_energy(&tr, &energy);
            u += total_energy(&sample_unguided(&sc, &m, seed), &energy);
        }
        assert!(g <= u, "{kind:?}: guided {g} vs unguided {u}");
    }
}

#[test]
fn guided_jerk_is_no_worse() {
    let m = model();
    let sc = generate(&ScenarioSpec::new(ScenarioKind::Intersection, 4, 0)).unwrap();
    let policy = ExplosionPolicy { clip_grad_norm: Some(100.0), ..ExplosionPolicy::default() };
    let (mut g, mut u) = (0.0, 0.0);
    for seed in 0..200 {
        let (tr, _) = sample(&sc, &m, &EnergyConfig::default(), &GuidanceSchedule::default(), &policy, seed).unwrap();
        g += jerk_profile(&tr).unwrap();
        u += jerk_profile(&sample_unguided(&sc, &m, seed)).unwrap();
    }
    assert!(g <= u * (1.0 + 1e-9), "guided {g} vs unguided {u}");
}

#[test]
fn rejection_attempts_follow_the_geometric_mean() {
    let m = model();
    let sc = head_on_pair(1, 30);
    let n = 400;
    let p = (10_000..10_000 + 4000).filter(|&s| is_valid(&sample_unguided(&sc, &m, s), &sc.limits)).count() as f64 / 4000.0;
    let mean = (0..n).map(|s| rejection_sample(&sc, &m, &sc.limits, 1000, s).unwrap().attempts as f64).sum::<f64>() / n as f64;
    // geometric: sd = sqrt(1 - p) / p
    let se = (1.0 - p).sqrt() / p / (n as f64).sqrt();
    assert!((mean - 1.0 / p).abs() <= 4.0 * se + 0.1 / p, "mean {mean} vs 1/p {}", 1.0 / p);
}

#[test]
fn pinned_overlap_exhausts_the_budget() {
    let cfg = ModelConfig { prior_scale: PriorScale { pos: 1e-6, vel: 1e-6, acc: 1e-6 }, ..ModelConfig::default() };
    let m = BaseModel::new(&cfg).unwrap();
    let sc = Scenario::new(
        ScenarioKind::HeadOn,
        vec![AgentState::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), AgentState::new(0.5, 0.0, 0.0, 0.0, 0.0, 0.0)],
        PhysicalLimits::default(),
        Arena::square(10.0),
    )
    .unwrap()
    .with_horizon(5);
    let out = rejection_sample(&sc, &m, &sc.limits, 25, 0).unwrap();
    assert!(out.trajectory.is_none());
    assert_eq!(out.attempts, 25);
}

#[test]
fn graph_edges_match_a_pair_scan() {
    let cfg = GraphConfig::default();
    for seed in 0..5 {
        let tr = common::random_traj(&mut seeded(seed), 50, 3, 120.0, 15.0, 3.0);
        let g = build_graph(&tr, &cfg).unwrap();
        for t in 0..3 {
            let mut want = Vec::new();
            for i in 0..50 {
                for j in i + 1..50 {
                    let d = common::dist(&tr, i, j, t);
                    if d < cfg.r_interact {
                        let (a, b) = (tr.state(i, t), tr.state(j, t));
                        let cos = (a.vx * b.vx + a.vy * b.vy) / (a.vx.hypot(a.vy) * b.vx.hypot(b.vy));
                        let ang = cos.clamp(-1.0, 1.0).acos();
                        let w = (-d * d / (2.0 * cfg.sigma_d.powi(2))).exp() * (-ang / (2.0 * cfg.sigma_theta.powi(2))).exp();
                        want.push((i, j, w));
                    }
                }
            }
            let got = g.edges(t);
            assert_eq!(got.len(), want.len());
            for (e, (i, j, w)) in got.iter().zip(want) {
                assert_eq!((e.i, e.j), (i, j));
                assert!((e.weight - w).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn urban_density_is_near_target() {
    for (rho, side) in [(0.01, 40.0), (0.02, 50.0), (0.05, 30.0)] {
        let spec = ScenarioSpec {
            density_target: Some(rho),
            arena_side: Some(side),
            ..ScenarioSpec::new(ScenarioKind::UrbanDense, 0, 1)
        };
        let sc = generate(&spec).unwrap();
        let n = sc.initial.len() as f64;
        assert_eq!(n, (rho * side * side).round());
        assert!((sc.density() - rho).abs() <= 0.5 / (side * side));
        assert!(is_valid(&prior_mean(&sc).window(0, 1).unwrap(), &sc.limits));
    }
}
