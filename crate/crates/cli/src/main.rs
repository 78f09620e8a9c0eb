use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use trajguide::diffusion::BaseModel;
use trajguide::harness::{
    failure_csv, prepare, run_comparison, run_failure_sweep, run_gradcheck, run_method, run_scaling_study, run_schedule_ablation,
    to_json, with_pool, write_file, Comparison, ExperimentConfig, Method, Prepared,
};
use trajguide::metrics::CSV_HEADER;
use trajguide::scenarios::generate;
use trajguide::{Error, Scenario, ScenarioKind};

#[derive(Parser)]
#[command(name = "trajguide", version, about = "Energy-guided multi-agent trajectory sampling and benchmarks")]
struct Cli {
    /// Experiment config JSON; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides `seed_base` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scenario JSON file (stdout without --out).
    GenerateScenario {
        /// intersection, highway_merge, roundabout, urban_dense or head_on;
        /// defaults to the first scenario in the config.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        agents: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Agents per square meter, urban_dense only.
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        arena_side: Option<f64>,
    },
    /// Draw one sample and print its metrics and trajectory.
    Sample {
        /// guided, unguided, rejection or langevin.
        #[arg(long, default_value = "guided")]
        method: String,
        /// Scenario JSON to sample; defaults to the first config scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Paired comparison of the configured methods.
    Compare,
    /// All four guidance schedules on identical seeds.
    AblateSchedule,
    /// Brute-force versus pruned energy timing.
    Scaling,
    /// Validity and explosions across agent densities.
    FailureSweep,
    /// Finite-difference check of the energy gradient.
    Gradcheck {
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            emit_error("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            emit_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn emit_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message.trim_end() }));
}

fn load_config(cli: &Cli) -> trajguide::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed_base = s;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if cli.out.is_some() {
        cfg.output = cli.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn parse_tag<T: serde::de::DeserializeOwned>(what: &str, value: Value) -> trajguide::Result<T> {
    serde_json::from_value(value.clone()).map_err(|_| Error::Input(format!("unknown {what} {value}")))
}

fn print(value: &impl serde::Serialize) -> trajguide::Result<()> {
    print!("{}", to_json(value)?);
    Ok(())
}

fn run(cli: Cli) -> trajguide::Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenerateScenario { kind, agents, horizon, density, arena_side } => {
            let mut spec = cfg.scenarios[0].clone();
            if let Some(k) = kind {
                spec.kind = parse_tag::<ScenarioKind>("scenario kind", Value::String(k.clone()))?;
            }
            spec.seed = cli.seed.unwrap_or(spec.seed);
            spec.n_agents = agents.unwrap_or(spec.n_agents);
            spec.horizon = horizon.unwrap_or(spec.horizon);
            spec.density_target = density.or(spec.density_target);
            spec.arena_side = arena_side.or(spec.arena_side);
            spec.validate()?;
            let sc = generate(&spec)?;
            match &cli.out {
                Some(dir) => {
                    let name = format!("{}-n{}-s{}.json", spec.kind.as_str(), sc.agents(), spec.seed);
                    write_file(dir, &name, &sc.to_json()?)?;
                    println!("{}", dir.join(name).display());
                }
                None => print!("{}", sc.to_json()?),
            }
        }
        Command::Sample { method, scenario } => {
            let method: Method = parse_tag("method", json!({ "type": method }))?;
            let p = match scenario {
                Some(path) => prepared_from(path)?,
                None => prepare(&cfg)?.remove(0),
            };
            let model = BaseModel::new(&cfg.model)?;
            let out = run_method(&p, &method, cfg.seed_base, &cfg, &model)?;
            let doc = json!({
                "report": out.report,
                "trajectory": out.trajectory,
            });
            match &cli.out {
                Some(dir) => {
                    write_file(dir, "sample.json", &to_json(&doc)?)?;
                    write_file(dir, "sample.csv", &format!("{CSV_HEADER}\n{}\n", out.report.csv_row()))?;
                    print(&out.report)?;
                }
                None => print(&doc)?,
            }
        }
        Command::Compare => finish_comparison(&run_comparison(&cfg)?, &cfg, "compare")?,
        Command::AblateSchedule => finish_comparison(&run_schedule_ablation(&cfg)?, &cfg, "ablation")?,
        Command::Scaling => {
            let study = run_scaling_study(&cfg.scaling.agent_counts, &cfg)?;
            let dir = out_dir(&cfg);
            write_file(&dir, "scaling.csv", &study.to_csv())?;
            write_file(&dir, "scaling.json", &to_json(&study)?)?;
            print(&study)?;
        }
        Command::FailureSweep => {
            let rows = run_failure_sweep(&cfg.failure.densities, &cfg)?;
            let dir = out_dir(&cfg);
            write_file(&dir, "failure_sweep.csv", &failure_csv(&rows))?;
            write_file(&dir, "failure_sweep.json", &to_json(&rows)?)?;
            print(&rows)?;
        }
        Command::Gradcheck { trials } => {
            let trials = trials.unwrap_or(cfg.gradcheck.trials);
            let report = with_pool(cfg.workers, || run_gradcheck(trials, &cfg.energy, cfg.seed_base, cfg.gradcheck.tolerance))?;
            if let Some(dir) = &cfg.output {
                write_file(dir, "gradcheck.json", &to_json(&report)?)?;
            }
            print(&report)?;
            if !report.passed() {
                emit_error(
                    "gradcheck",
                    &format!("{} coordinates above tolerance, max relative error {:e}", report.failures, report.max_rel_error),
                );
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn prepared_from(path: &Path) -> trajguide::Result<Prepared> {
    let scenario = Scenario::load(path)?;
    scenario.validate()?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string();
    let reference = trajguide::diffusion::prior_mean(&scenario);
    Ok(Prepared { name, scenario, reference })
}

fn finish_comparison(cmp: &Comparison, cfg: &ExperimentConfig, name: &str) -> trajguide::Result<()> {
    cmp.write(&out_dir(cfg), name)?;
    print!("{}", cmp.summary_json()?);
    Ok(())
}
