//! Energy-guided sampling of physically valid multi-agent trajectories.
//!
//! A desk-scale analytic diffusion model proposes trajectories; collision and
//! kinematic energies steer each reverse step towards the valid set. The
//! harness compares guided, unguided, rejection and Langevin sampling on
//! synthetic traffic scenarios.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod energy;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod scenario;
pub mod scenarios;
pub mod trajectory;
pub mod validity;

pub use error::{Error, Result};
pub use scenario::{Arena, Scenario, ScenarioKind};
pub use trajectory::{AgentState, PhysicalLimits, Trajectory};
