//! Brute-force reference implementations shared by the integration tests.
//! They read states through the public accessors only and share no code
//! with the library's own loops.
#![allow(dead_code)]

use rand::Rng;
use trajguide::{AgentState, PhysicalLimits, Trajectory};

pub fn random_traj<R: Rng>(rng: &mut R, n: usize, horizon: usize, box_side: f64, v: f64, a: f64) -> Trajectory {
    let states: Vec<Vec<AgentState>> = (0..n)
        .map(|_| {
            (0..horizon)
                .map(|_| {
                    AgentState::new(
                        rng.gen_range(0.0..box_side),
                        rng.gen_range(0.0..box_side),
                        rng.gen_range(-v..=v),
                        rng.gen_range(-v..=v),
                        rng.gen_range(-a..=a),
                        rng.gen_range(-a..=a),
                    )
                })
                .collect()
        })
        .collect();
    Trajectory::from_states(&states, 0.1).unwrap()
}

/// Random shape and spread chosen so that every predicate comes out both
/// ways across a batch.
pub fn mixed_traj<R: Rng>(rng: &mut R, max_n: usize, max_h: usize) -> Trajectory {
    let n = rng.gen_range(1..=max_n);
    let h = rng.gen_range(1..=max_h);
    let side = [3.0, 10.0, 40.0, 200.0][rng.gen_range(0..4)];
    let v = [5.0, 21.5, 30.0][rng.gen_range(0..3)];
    let a = [2.0, 5.7, 8.0][rng.gen_range(0..3)];
    random_traj(rng, n, h, side, v, a)
}

pub fn dist(tr: &Trajectory, i: usize, j: usize, t: usize) -> f64 {
    let a = tr.state(i, t);
    let b = tr.state(j, t);
    ((a.px - b.px).powi(2) + (a.py - b.py).powi(2)).sqrt()
}

pub fn collides(tr: &Trajectory, lim: &PhysicalLimits) -> bool {
    let (n, h) = tr.shape();
    let mut hit = false;
    for t in 0..h {
        for i in 0..n {
            for j in 0..n {
                if i != j && dist(tr, i, j, t) < lim.d_safe {
                    hit = true;
                }
            }
        }
    }
    hit
}

pub fn speed_bad(tr: &Trajectory, lim: &PhysicalLimits) -> bool {
    let (n, h) = tr.shape();
    (0..n).any(|i| (0..h).any(|t| (tr.state(i, t).vx.powi(2) + tr.state(i, t).vy.powi(2)).sqrt() > lim.v_max))
}

pub fn accel_bad(tr: &Trajectory, lim: &PhysicalLimits) -> bool {
    let (n, h) = tr.shape();
    (0..n).any(|i| (0..h).any(|t| (tr.state(i, t).ax.powi(2) + tr.state(i, t).ay.powi(2)).sqrt() > lim.a_max))
}

pub fn valid(tr: &Trajectory, lim: &PhysicalLimits) -> bool {
    !collides(tr, lim) && !speed_bad(tr, lim) && !accel_bad(tr, lim)
}

/// Bare inverse-distance collision energy, with the same coincidence clamp.
pub fn inverse_energy(tr: &Trajectory, d_safe: f64) -> f64 {
    let (n, h) = tr.shape();
    let mut e = 0.0;
    for t in 0..h {
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dist(tr, i, j, t);
                if d < d_safe {
                    let d = d.max(trajguide::energy::D_MIN);
                    e += (1.0 / d - 1.0 / d_safe).powi(2);
                }
            }
        }
    }
    e
}

pub fn speed_hinge(tr: &Trajectory, v_max: f64) -> f64 {
    let (n, h) = tr.shape();
    let mut e = 0.0;
    for i in 0..n {
        for t in 0..h {
            let s = tr.state(i, t);
            let v = (s.vx * s.vx + s.vy * s.vy).sqrt();
            if v > v_max {
                e += (v - v_max).powi(2);
            }
        }
    }
    e
}

pub fn ade(a: &Trajectory, b: &Trajectory) -> f64 {
    let (n, h) = a.shape();
    let mut s = 0.0;
    for i in 0..n {
        for t in 0..h {
            s += dist_between(a, b, i, t);
        }
    }
    s / (n * h) as f64
}

pub fn fde(a: &Trajectory, b: &Trajectory) -> f64 {
    let (n, h) = a.shape();
    (0..n).map(|i| dist_between(a, b, i, h - 1)).sum::<f64>() / n as f64
}

fn dist_between(a: &Trajectory, b: &Trajectory, i: usize, t: usize) -> f64 {
    let (p, q) = (a.state(i, t), b.state(i, t));
    ((p.px - q.px).powi(2) + (p.py - q.py).powi(2)).sqrt()
}

/// Windows `[k w, min((k+1) w, T))`, each checked on its own states.
pub fn temporal_consistency(samples: &[Trajectory], lim: &PhysicalLimits, w: usize) -> f64 {
    let mut good = 0;
    let mut total = 0;
    for s in samples {
        let (n, h) = s.shape();
        let mut start = 0;
        while start < h {
            let end = (start + w).min(h);
            let mut ok = true;
            for t in start..end {
                for i in 0..n {
                    let st = s.state(i, t);
                    if (st.vx.powi(2) + st.vy.powi(2)).sqrt() > lim.v_max || (st.ax.powi(2) + st.ay.powi(2)).sqrt() > lim.a_max {
                        ok = false;
                    }
                    for j in 0..n {
                        if j != i && dist(s, i, j, t) < lim.d_safe {
                            ok = false;
                        }
                    }
                }
            }
            good += ok as usize;
            total += 1;
            start = end;
        }
    }
    good as f64 / total as f64
}

pub fn jerk(tr: &Trajectory) -> f64 {
    let (n, h) = tr.shape();
    let mut s = 0.0;
    let mut c = 0;
    for i in 0..n {
        for t in 1..h {
            let (a, b) = (tr.state(i, t - 1), tr.state(i, t));
            s += ((b.ax - a.ax).powi(2) + (b.ay - a.ay).powi(2)).sqrt() / tr.dt();
            c += 1;
        }
    }
    s / c as f64
}

pub fn social(tr: &Trajectory, d_social: f64) -> f64 {
    let (n, h) = tr.shape();
    let mut e = 0.0;
    for t in 0..h {
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dist(tr, i, j, t);
                let (a, b) = (tr.state(i, t), tr.state(j, t));
                let (na, nb) = ((a.vx.powi(2) + a.vy.powi(2)).sqrt(), (b.vx.powi(2) + b.vy.powi(2)).sqrt());
                if d < d_social && na >= 1e-6 && nb >= 1e-6 {
                    let cos = ((a.vx * b.vx + a.vy * b.vy) / (na * nb)).clamp(-1.0, 1.0);
                    e += (1.0 - cos) * (-d / d_social).exp();
                }
            }
        }
    }
    e
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        let pivot = m[c].clone();
        for row in m.iter_mut().skip(c + 1) {
            let f = row[c] / pivot[c];
            for (x, p) in row.iter_mut().zip(&pivot).skip(c) {
                *x -= f * p;
            }
        }
    }
    d
}

pub fn diversity(samples: &[Trajectory], sigma: f64) -> f64 {
    let z: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let (n, h) = s.shape();
            let mut v = Vec::new();
            for i in 0..n {
                for t in 0..h {
                    v.push(s.state(i, t).px);
                    v.push(s.state(i, t).py);
                }
            }
            v
        })
        .collect();
    let m = z.len();
    let k: Vec<Vec<f64>> = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| {
                    let d2: f64 = z[a].iter().zip(&z[b]).map(|(x, y)| (x - y).powi(2)).sum();
                    (-d2 / (2.0 * sigma * sigma)).exp() + if a == b { 1e-6 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    -det(k).ln()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
