//! Membership predicates for the collision set and the kinematically
//! feasible set.
//!
//! Collision is a strict `<` against `d_safe`; the kinematic bounds are
//! non-strict `<=`. A pair sitting exactly at `d_safe` is therefore valid.

use crate::error::{Error, Result};
use crate::trajectory::{PhysicalLimits, Trajectory};

/// Euclidean distance between agents `i` and `j` at timestep `t`.
pub fn pairwise_distance(traj: &Trajectory, i: usize, j: usize, t: usize) -> Result<f64> {
    let n = traj.agents();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::Index { what: "agent", index: idx, len: n });
        }
    }
    if t >= traj.horizon() {
        return Err(Error::Index { what: "timestep", index: t, len: traj.horizon() });
    }
    if i == j {
        return Err(Error::input("pairwise_distance requires two distinct agents"));
    }
    Ok(distance_unchecked(traj, i, j, t))
}

#[inline]
pub(crate) fn distance_unchecked(traj: &Trajectory, i: usize, j: usize, t: usize) -> f64 {
    let (xi, yi) = traj.position(i, t);
    let (xj, yj) = traj.position(j, t);
    (xi - xj).hypot(yi - yj)
}

/// Whether any pair is strictly closer than `d_safe` at any timestep.
pub fn in_collision_set(traj: &Trajectory, limits: &PhysicalLimits) -> bool {
    first_collision(traj, limits).is_some()
}

/// First `(t, i, j)` (timestep-major) with a collision, if any.
pub fn first_collision(traj: &Trajectory, limits: &PhysicalLimits) -> Option<(usize, usize, usize)> {
    let n = traj.agents();
    let d2 = limits.d_safe * limits.d_safe;
    for t in 0..traj.horizon() {
        for i in 0..n {
            let (xi, yi) = traj.position(i, t);
            for j in i + 1..n {
                let (xj, yj) = traj.position(j, t);
                let dx = xi - xj;
                let dy = yi - yj;
                if dx * dx + dy * dy < d2 {
                    return Some((t, i, j));
                }
            }
        }
    }
    None
}

/// Every state within `v_max` and `a_max`.
pub fn is_kinematically_feasible(traj: &Trajectory, limits: &PhysicalLimits) -> bool {
    !violates_speed(traj, limits) && !violates_accel(traj, limits)
}

pub fn violates_speed(traj: &Trajectory, limits: &PhysicalLimits) -> bool {
    states(traj).any(|s| s.speed() > limits.v_max)
}

pub fn violates_accel(traj: &Trajectory, limits: &PhysicalLimits) -> bool {
    states(traj).any(|s| s.accel() > limits.a_max)
}

/// Collision-free and kinematically feasible.
pub fn is_valid(traj: &Trajectory, limits: &PhysicalLimits) -> bool {
    !in_collision_set(traj, limits) && is_kinematically_feasible(traj, limits)
}

fn states(traj: &Trajectory) -> impl Iterator<Item = crate::trajectory::AgentState> + '_ {
    (0..traj.agents()).flat_map(move |i| (0..traj.horizon()).map(move |t| traj.state(i, t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::AgentState;

    fn two_agents(a: (f64, f64), b: (f64, f64)) -> Trajectory {
        Trajectory::from_states(
            &[vec![AgentState::new(a.0, a.1, 0.0, 0.0, 0.0, 0.0)], vec![AgentState::new(b.0, b.1, 0.0, 0.0, 0.0, 0.0)]],
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn three_four_five() {
        let tr = two_agents((0.0, 0.0), (3.0, 4.0));
        assert_eq!(pairwise_distance(&tr, 0, 1, 0).unwrap(), 5.0);
        assert_eq!(pairwise_distance(&tr, 1, 0, 0).unwrap(), 5.0);
    }

    #[test]
    fn hand_computed_distance() {
        let tr = two_agents((1.2, -0.7), (-2.1, 3.3));
        let expected = ((1.2f64 + 2.1).powi(2) + (-0.7f64 - 3.3).powi(2)).sqrt();
        assert!((pairwise_distance(&tr, 0, 1, 0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn self_distance_and_bad_index_rejected() {
        let tr = two_agents((0.0, 0.0), (1.0, 0.0));
        assert!(matches!(pairwise_distance(&tr, 0, 0, 0), Err(Error::Input(_))));
        assert!(matches!(pairwise_distance(&tr, 0, 2, 0), Err(Error::Index { .. })));
        assert!(matches!(pairwise_distance(&tr, 0, 1, 1), Err(Error::Index { .. })));
    }

    #[test]
    fn collision_set_boundaries() {
        let lim = PhysicalLimits::default();
        assert!(!in_collision_set(&two_agents((0.0, 0.0), (10.0, 0.0)), &lim));
        assert!(in_collision_set(&two_agents((1.0, 1.0), (1.0, 1.0)), &lim));
        // exactly d_safe apart is not a collision
        assert!(!in_collision_set(&two_agents((0.0, 0.0), (2.0, 0.0)), &lim));
        assert!(in_collision_set(&two_agents((0.0, 0.0), (1.999, 0.0)), &lim));
    }

    #[test]
    fn kinematic_bounds() {
        let lim = PhysicalLimits::default();
        let mut tr = two_agents((0.0, 0.0), (10.0, 0.0));
        assert!(is_kinematically_feasible(&tr, &lim));
        tr.set(0, 0, AgentState::new(0.0, 0.0, 31.0, 0.0, 0.0, 0.0));
        assert!(!is_kinematically_feasible(&tr, &lim));
        tr.set(0, 0, AgentState::new(0.0, 0.0, 30.0, 0.0, 8.0, 0.0));
        assert!(is_kinematically_feasible(&tr, &lim));
        tr.set(0, 0, AgentState::new(0.0, 0.0, 0.0, 0.0, 6.0, 6.0));
        assert!(!is_kinematically_feasible(&tr, &lim));
    }

    #[test]
    fn validity_is_a_conjunction() {
        let lim = PhysicalLimits::default();
        let mut speeding = two_agents((0.0, 0.0), (10.0, 0.0));
        speeding.set(1, 0, AgentState::new(10.0, 0.0, 0.0, 40.0, 0.0, 0.0));
        assert!(!is_valid(&speeding, &lim));
        assert!(!is_valid(&two_agents((0.0, 0.0), (0.5, 0.0)), &lim));
        assert!(is_valid(&two_agents((0.0, 0.0), (5.0, 0.0)), &lim));
    }
}
