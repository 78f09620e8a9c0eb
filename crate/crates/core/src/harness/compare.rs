use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use super::stats::{mean_se, paired_diff, MeanSe, PairedDiff};
use super::{with_pool, write_file};
use crate::diffusion::{prior_mean, BaseModel};
use crate::error::{Error, Result};
use crate::metrics::{SampleReport, SampleStatus, ViolationBreakdown, CSV_HEADER};
use crate::rng::{mix_seed, seeded};
use crate::sampler::{langevin_refine, rejection_sample, Chain, ScheduleFamily};
use crate::scenario::Scenario;
use crate::scenarios::generate;
use crate::trajectory::{PhysicalLimits, Trajectory};
use crate::validity::distance_unchecked;

/// Stream tag for the Langevin noise, so it never overlaps the base noise.
const LANGEVIN_STREAM: u64 = 0x4c41_4e47;

/// A generated scenario with its row label and reference rollout.
pub struct Prepared {
    pub name: String,
    pub scenario: Scenario,
    pub reference: Trajectory,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Vec<Prepared>> {
    cfg.scenarios
        .iter()
        .map(|spec| {
            let scenario = generate(spec)?;
            let name = format!("{}-n{}-s{}", spec.kind.as_str(), scenario.agents(), spec.seed);
            let reference = prior_mean(&scenario);
            Ok(Prepared { name, scenario, reference })
        })
        .collect()
}

/// Result of running one method on one scenario for one seed.
#[derive(Clone, Debug)]
pub struct SampleOutcome {
    pub report: SampleReport,
    pub trajectory: Option<Trajectory>,
}

/// Runs `method` with base-noise stream `seed`. Every method draws its
/// diffusion noise from the same seeded stream, so differences between
/// methods at a fixed seed come from guidance alone.
pub fn run_method(p: &Prepared, method: &Method, seed: u64, cfg: &ExperimentConfig, model: &BaseModel) -> Result<SampleOutcome> {
    let label = method.label(&cfg.sampler);
    let kind = p.scenario.kind.as_str();
    let labels = (p.name.as_str(), kind, label.as_str());
    let limits = &p.scenario.limits;
    let mut energy = cfg.energy.clone();
    energy.limits = *limits;
    let policy = cfg.policy();
    let finish = |tr: Trajectory, attempts: Option<f64>, grad: Option<f64>| -> Result<SampleOutcome> {
        let mut report = SampleReport::evaluate(labels, seed, &tr, &p.reference, limits, &cfg.metrics)?;
        report.attempts = attempts;
        report.grad_norm_mean = grad;
        Ok(SampleOutcome { report, trajectory: Some(tr) })
    };
    let failed = |status: SampleStatus, attempts: Option<f64>, grad: Option<f64>| {
        let mut report = SampleReport::failed(labels, seed, status);
        report.attempts = attempts;
        report.grad_norm_mean = grad;
        Ok(SampleOutcome { report, trajectory: None })
    };
    match method {
        Method::Guided { schedule_family } => {
            let mut sched = cfg.sampler.schedule();
            if let Some(f) = schedule_family {
                sched.family = *f;
            }
            let (res, diag) = Chain::new(model, &p.scenario).run_guided(&energy, &sched, &policy, &mut seeded(seed));
            let grad = Some(diag.mean_grad_norm());
            match res {
                Ok(tr) => finish(tr, None, grad),
                Err(Error::Explosion { .. }) => failed(SampleStatus::Exploded, None, grad),
                Err(e) => Err(e),
            }
        }
        Method::Unguided => finish(Chain::new(model, &p.scenario).run_unguided(&mut seeded(seed)), None, None),
        Method::Rejection => {
            let out = rejection_sample(&p.scenario, model, limits, cfg.sampler.max_attempts, seed)?;
            let attempts = Some(out.attempts as f64);
            match out.trajectory {
                Some(tr) => finish(tr, attempts, None),
                None => failed(SampleStatus::Exhausted, attempts, None),
            }
        }
        Method::Langevin => {
            let start = Chain::new(model, &p.scenario).run_unguided(&mut seeded(seed));
            let mut rng = seeded(mix_seed(seed, LANGEVIN_STREAM));
            match langevin_refine(&start, &energy, &cfg.langevin.step_sizes(), &policy, Some(&mut rng)) {
                Ok((tr, diag)) => finish(tr, None, Some(diag.mean_grad_norm())),
                Err(Error::Explosion { .. }) => failed(SampleStatus::Exploded, None, None),
                Err(e) => Err(e),
            }
        }
    }
}

/// Per-timestep validity: no pair inside `d_safe` and every state within
/// the kinematic limits at that timestep.
pub fn valid_at(traj: &Trajectory, limits: &PhysicalLimits) -> Vec<bool> {
    let n = traj.agents();
    (0..traj.horizon())
        .map(|t| {
            let feasible = (0..n).all(|i| {
                let s = traj.state(i, t);
                s.speed() <= limits.v_max && s.accel() <= limits.a_max
            });
            feasible && (0..n).all(|i| (i + 1..n).all(|j| distance_unchecked(traj, i, j, t) >= limits.d_safe))
        })
        .collect()
}

/// Per-method statistics for one scenario (or for all scenarios pooled).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub scenario: String,
    pub method: String,
    pub validity: MeanSe,
    pub collision: MeanSe,
    pub ade: MeanSe,
    pub failures: usize,
    pub violations: ViolationBreakdown,
}

/// Paired difference of one method against a baseline on shared seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub scenario: String,
    pub method: String,
    pub baseline: String,
    pub validity: PairedDiff,
    pub collision: PairedDiff,
}

/// Rows plus everything derived from them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<SampleReport>,
    pub aggregates: Vec<SampleReport>,
    pub summaries: Vec<MethodSummary>,
    pub paired: Vec<PairedComparison>,
    /// `(group, method) -> fraction of samples valid at each timestep`.
    #[serde(skip)]
    pub validity_over_time: BTreeMap<(String, String), Vec<f64>>,
}

/// How rows are grouped into aggregates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grouping {
    PerScenario,
    /// All scenarios pooled under the label `all`.
    Pooled,
}

fn run_rows(cfg: &ExperimentConfig, methods: &[Method], prepared: &[Prepared]) -> Result<Vec<(usize, usize, SampleOutcome)>> {
    let model = BaseModel::new(&cfg.model)?;
    let seeds = cfg.seed_list();
    let mut tasks = Vec::with_capacity(prepared.len() * methods.len() * seeds.len());
    for si in 0..prepared.len() {
        for mi in 0..methods.len() {
            tasks.extend(seeds.iter().map(|&s| (si, mi, s)));
        }
    }
    with_pool(cfg.workers, || {
        tasks
            .par_iter()
            .map(|&(si, mi, seed)| run_method(&prepared[si], &methods[mi], seed, cfg, &model).map(|o| (si, mi, o)))
            .collect::<Result<Vec<_>>>()
    })
}

fn summarize(
    cfg: &ExperimentConfig,
    methods: &[Method],
    prepared: &[Prepared],
    outcomes: Vec<(usize, usize, SampleOutcome)>,
    grouping: Grouping,
    baseline: Option<usize>,
) -> Result<Comparison> {
    let group_of = |si: usize| match grouping {
        Grouping::PerScenario => si,
        Grouping::Pooled => 0,
    };
    let group_name = |g: usize| match grouping {
        Grouping::PerScenario => prepared[g].name.clone(),
        Grouping::Pooled => "all".to_string(),
    };
    let n_groups = match grouping {
        Grouping::PerScenario => prepared.len(),
        Grouping::Pooled => 1,
    };
    // outcomes arrive ordered by (scenario, method, seed)
    let mut buckets: Vec<Vec<Vec<(usize, &SampleOutcome)>>> = vec![vec![Vec::new(); methods.len()]; n_groups];
    for (si, mi, o) in &outcomes {
        buckets[group_of(*si)][*mi].push((*si, o));
    }
    let mut aggregates = Vec::new();
    let mut summaries = Vec::new();
    let mut paired = Vec::new();
    let mut over_time = BTreeMap::new();
    for (g, per_method) in buckets.iter().enumerate() {
        let name = group_name(g);
        for (mi, bucket) in per_method.iter().enumerate() {
            let label = methods[mi].label(&cfg.sampler);
            let rows: Vec<SampleReport> = bucket.iter().map(|(_, o)| o.report.clone()).collect();
            let trajs: Vec<Trajectory> = bucket.iter().filter_map(|(_, o)| o.trajectory.clone()).collect();
            // diversity needs a common shape, which pooled groups may lack
            let same_shape = trajs.windows(2).all(|w| w[0].shape() == w[1].shape());
            let div_set: &[Trajectory] = if same_shape { &trajs } else { &[] };
            let mut agg = SampleReport::aggregate(&rows, div_set, cfg.metrics.sigma_k)?;
            agg.scenario = name.clone();
            aggregates.push(agg.clone());
            let ade: Vec<f64> = rows.iter().filter_map(|r| r.ade).collect();
            summaries.push(MethodSummary {
                scenario: name.clone(),
                method: label.clone(),
                validity: mean_se(&rows.iter().map(|r| r.validity).collect::<Vec<_>>()),
                collision: mean_se(&rows.iter().map(|r| r.collision_rate).collect::<Vec<_>>()),
                ade: mean_se(&ade),
                failures: rows.iter().filter(|r| r.status != SampleStatus::Ok).count(),
                violations: agg.violation_breakdown,
            });
            let horizon = trajs.iter().map(|t| t.horizon()).max().unwrap_or(0);
            let mut counts = vec![0usize; horizon];
            for (si, o) in bucket {
                if let Some(tr) = &o.trajectory {
                    for (t, ok) in valid_at(tr, &prepared[*si].scenario.limits).into_iter().enumerate() {
                        counts[t] += ok as usize;
                    }
                }
            }
            let denom = bucket.len().max(1) as f64;
            over_time.insert((name.clone(), label), counts.iter().map(|&c| c as f64 / denom).collect());
        }
        if let Some(b) = baseline {
            let base = &per_method[b];
            for (mi, bucket) in per_method.iter().enumerate() {
                if mi == b {
                    continue;
                }
                let v = |xs: &[(usize, &SampleOutcome)]| xs.iter().map(|(_, o)| o.report.validity).collect::<Vec<_>>();
                let c = |xs: &[(usize, &SampleOutcome)]| xs.iter().map(|(_, o)| o.report.collision_rate).collect::<Vec<_>>();
                paired.push(PairedComparison {
                    scenario: name.clone(),
                    method: methods[mi].label(&cfg.sampler),
                    baseline: methods[b].label(&cfg.sampler),
                    validity: paired_diff(&v(bucket), &v(base)),
                    collision: paired_diff(&c(bucket), &c(base)),
                });
            }
        }
    }
    Ok(Comparison {
        rows: outcomes.into_iter().map(|(_, _, o)| o.report).collect(),
        aggregates,
        summaries,
        paired,
        validity_over_time: over_time,
    })
}

/// Every (scenario, method, seed) triple, with paired statistics against the
/// unguided method when present (else the first method).
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<Comparison> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let outcomes = run_rows(cfg, &cfg.methods, &prepared)?;
    let baseline = cfg.methods.iter().position(|m| *m == Method::Unguided).or(Some(0));
    summarize(cfg, &cfg.methods, &prepared, outcomes, Grouping::PerScenario, baseline)
}

/// Guided sampling under each schedule family with shared seeds. Yields one
/// aggregate row per family, pooled over scenarios, and paired differences
/// against the constant schedule.
pub fn run_schedule_ablation(cfg: &ExperimentConfig) -> Result<Comparison> {
    let mut cfg = cfg.clone();
    cfg.methods = ScheduleFamily::ALL.iter().map(|&f| Method::guided_with(f)).collect();
    cfg.validate()?;
    let prepared = prepare(&cfg)?;
    let outcomes = run_rows(&cfg, &cfg.methods, &prepared)?;
    let baseline = ScheduleFamily::ALL.iter().position(|&f| f == ScheduleFamily::Constant);
    summarize(&cfg, &cfg.methods, &prepared, outcomes, Grouping::Pooled, baseline)
}

impl Comparison {
    pub fn rows_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn aggregates_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.aggregates {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn validity_over_time_csv(&self) -> String {
        let mut s = String::from("scenario,method,t,valid_fraction\n");
        for ((g, m), series) in &self.validity_over_time {
            for (t, v) in series.iter().enumerate() {
                let _ = writeln!(s, "{g},{m},{t},{v}");
            }
        }
        s
    }

    pub fn violations_csv(&self) -> String {
        let mut s = String::from("scenario,method,collision,speed,acceleration\n");
        for m in &self.summaries {
            let v = m.violations;
            let _ = writeln!(s, "{},{},{},{},{}", m.scenario, m.method, v.collision, v.speed, v.acceleration);
        }
        s
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            aggregates: &'a [SampleReport],
            summaries: &'a [MethodSummary],
            paired: &'a [PairedComparison],
        }
        let mut s = serde_json::to_string_pretty(&Summary {
            aggregates: &self.aggregates,
            summaries: &self.summaries,
            paired: &self.paired,
        })?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `<name>.csv`, `<name>_aggregate.csv`, `<name>_summary.json`,
    /// `<name>_validity_over_time.csv` and `<name>_violations.csv`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        write_file(dir, &format!("{name}.csv"), &self.rows_csv())?;
        write_file(dir, &format!("{name}_aggregate.csv"), &self.aggregates_csv())?;
        write_file(dir, &format!("{name}_summary.json"), &self.summary_json()?)?;
        write_file(dir, &format!("{name}_validity_over_time.csv"), &self.validity_over_time_csv())?;
        write_file(dir, &format!("{name}_violations.csv"), &self.violations_csv())
    }

    pub fn summary(&self, scenario: &str, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|m| m.scenario == scenario && m.method == method)
    }
}
