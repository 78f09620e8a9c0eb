//! Experiment orchestration: paired method comparisons, schedule ablations,
//! scaling runs, density sweeps and gradient checks.
//!
//! Work fans out over a rayon pool; results are collected in task order, so
//! every output file is a deterministic function of the config.

mod compare;
mod config;
mod gradcheck;
mod stats;
mod studies;

use std::path::Path;

pub use compare::{
    prepare, run_comparison, run_method, run_schedule_ablation, valid_at, Comparison, MethodSummary, PairedComparison, Prepared,
    SampleOutcome,
};
pub use config::{ExperimentConfig, FailureConfig, GradcheckConfig, LangevinConfig, Method, ScalingConfig, Seeds};
pub use gradcheck::{run_gradcheck, GradcheckReport};
pub use stats::{loglog_slope, mean_se, paired_diff, MeanSe, PairedDiff};
pub use studies::{
    boundary_sequence, failure_csv, head_on_with_offset, invalid_starts, lattice_trajectory, run_convergence, run_failure_sweep,
    run_perturbation, run_sample_complexity, run_scaling_study, run_stability_comparison, ComplexityConfig, ComplexityRow,
    ConvergenceRow, FailureRow, PerturbationRow, ScalingRow, ScalingStudy, StabilityComparison,
};

use crate::error::{Error, Result};

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool.
pub fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match workers {
        None => f(),
        Some(n) => {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::input(format!("thread pool: {e}")))?;
            pool.install(f)
        }
    }
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
