use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use relalloc::baselines::no_sharing;
use relalloc::colgen::{solve_scenario, ColgenOptions, PipelineOptions};
use relalloc::harness::{run_grid, write_csv, BenchOptions, Heuristic, ScenarioKind, ScenarioSpec};
use relalloc::homogeneous::{PenaltyUpdate, RefinementOptions};
use relalloc::knapsack::DEFAULT_RESOLUTION;
use relalloc::rare_event::{validate_plan_reliability, ValidationMode, Verdict, DEFAULT_SAMPLE_SIZE};
use relalloc::{AllocationPlan, Execution, Scenario};

/// Reliability-aware placement of replicated services.
///
/// Worker threads follow RAYON_NUM_THREADS; logging follows RUST_LOG.
#[derive(Parser)]
#[command(name = "relalloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario as JSON.
    Gen(GenArgs),
    /// Compute an allocation plan for a scenario.
    Solve(SolveArgs),
    /// Estimate per-service failure probabilities of a plan.
    Estimate(EstimateArgs),
    /// Run heuristics over a grid of generated scenarios and write CSV.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Uniform,
    Bivalued,
}

impl From<Kind> for ScenarioKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Uniform => ScenarioKind::Uniform,
            Kind::Bivalued => ScenarioKind::Bivalued,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum HeuristicArg {
    NoSharing,
    ColgenPd,
    ColgenFloat,
}

impl From<HeuristicArg> for Heuristic {
    fn from(h: HeuristicArg) -> Self {
        match h {
            HeuristicArg::NoSharing => Heuristic::NoSharing,
            HeuristicArg::ColgenPd => Heuristic::ColgenPd,
            HeuristicArg::ColgenFloat => Heuristic::ColgenFloat,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateArg {
    /// Replace the penalties by their refined values each round.
    Replace,
    /// Never let a penalty decrease.
    Ratchet,
}

#[derive(Args)]
struct PipelineArgs {
    /// Knapsack grid resolution used for pricing.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    q: usize,
    /// Convergence tolerance on the penalties during refinement.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Refinement round cap.
    #[arg(long, default_value_t = 50)]
    max_refinements: usize,
    /// How refined penalties replace the current ones.
    #[arg(long, value_enum, default_value_t = UpdateArg::Replace)]
    penalty_update: UpdateArg,
}

impl PipelineArgs {
    fn options(&self) -> Result<PipelineOptions> {
        if self.q == 0 {
            bail!("--q must be positive");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            bail!("--epsilon must be positive");
        }
        Ok(PipelineOptions {
            refinement: RefinementOptions {
                epsilon: self.epsilon,
                iteration_cap: self.max_refinements,
                update: match self.penalty_update {
                    UpdateArg::Replace => PenaltyUpdate::Replace,
                    UpdateArg::Ratchet => PenaltyUpdate::Ratchet,
                },
            },
            colgen: ColgenOptions {
                resolution: self.q,
                ..ColgenOptions::default()
            },
        })
    }
}

#[derive(Args)]
struct EstimatorArgs {
    /// Sample size of the splitting estimator.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
    n_sample: usize,
    /// Stop a service's estimation once it clearly meets its target.
    #[arg(long)]
    early_stop: bool,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

impl EstimatorArgs {
    fn mode(&self) -> ValidationMode {
        if self.early_stop {
            ValidationMode::EarlyStop
        } else {
            ValidationMode::Full
        }
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value_t = Kind::Uniform)]
    kind: Kind,
    /// Number of services (uniform scenarios only).
    #[arg(long, default_value_t = 100)]
    ns: usize,
    /// Memory capacity: replicas per machine.
    #[arg(long, default_value_t = 5)]
    mem: usize,
    /// Machine failure probability.
    #[arg(long, default_value_t = 0.01)]
    fail: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw reliability exponents from the integers 2..=8.
    #[arg(long)]
    integer_exponent: bool,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = HeuristicArg::ColgenPd)]
    heuristic: HeuristicArg,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Plan JSON file.
    plan: PathBuf,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = Kind::Uniform)]
    kind: Kind,
    /// Service counts (uniform scenarios only).
    #[arg(long, value_delimiter = ',', default_value = "100")]
    ns: Vec<usize>,
    /// Memory capacities.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    mem: Vec<usize>,
    /// Seeds per cell.
    #[arg(long, default_value_t = relalloc::harness::DEFAULT_SEEDS_PER_CELL)]
    seeds: u64,
    /// First seed of every cell.
    #[arg(long, default_value_t = 0)]
    seed_start: u64,
    #[arg(long, default_value_t = 0.01)]
    fail: f64,
    #[arg(long)]
    integer_exponent: bool,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "no_sharing,colgen_pd,colgen_float")]
    heuristics: Vec<HeuristicArg>,
    /// Estimate the reliability of every rounded plan.
    #[arg(long)]
    validate: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Output CSV file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let mut out = output(path)?;
    writeln!(out, "{text}")?;
    out.flush()?;
    Ok(())
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let scenario = Scenario::load(path).with_context(|| format!("reading scenario {}", path.display()))?;
    scenario.validate()?;
    Ok(scenario)
}

fn gen(args: GenArgs) -> Result<()> {
    let spec = ScenarioSpec {
        kind: args.kind.into(),
        ns: args.ns,
        mem: args.mem,
        fail: args.fail,
        seed: args.seed,
        integer_exponent: args.integer_exponent,
    };
    let scenario = spec.generate()?;
    write_text(args.output.as_deref(), &scenario.to_json()?)
}

fn solve(args: SolveArgs) -> Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let plan = match args.heuristic {
        HeuristicArg::NoSharing => no_sharing(&scenario)?,
        HeuristicArg::ColgenPd | HeuristicArg::ColgenFloat => {
            let run = solve_scenario(&scenario, args.pipeline.options()?)?;
            info!(
                "refinement: {} rounds, converged {}; packing: {} pricing rounds, lower bound {:.3}",
                run.refinement.state.iteration,
                run.refinement.state.converged,
                run.packing.iterations,
                run.packing.objective
            );
            match args.heuristic {
                HeuristicArg::ColgenFloat => run.packing.plan,
                _ => run.rounded,
            }
        }
    };
    info!("{} machines", plan.machines_used());
    write_text(args.output.as_deref(), &plan.to_json()?)
}

fn estimate(args: EstimateArgs) -> Result<bool> {
    let scenario = load_scenario(&args.scenario)?;
    let plan = AllocationPlan::load(&args.plan).with_context(|| format!("reading plan {}", args.plan.display()))?;
    if plan.service_count() != scenario.services.len() {
        bail!(
            "plan covers {} services, scenario has {}",
            plan.service_count(),
            scenario.services.len()
        );
    }
    plan.validate(&scenario.platform)?;
    let report = validate_plan_reliability(
        &plan,
        &scenario,
        args.estimator.n_sample,
        args.estimator.mode(),
        execution(args.estimator.sequential),
    )?;
    let mut out = io::stdout().lock();
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        writeln!(out, "service  target      estimate    levels  time_ms  verdict")?;
        for s in &report.services {
            writeln!(
                out,
                "{:>7}  {:<10.3e}  {:<10.3e}  {:>6}  {:>7.1}  {:?}{}",
                s.service,
                s.target,
                s.estimate,
                s.levels,
                s.wall_time_ms,
                s.verdict,
                if s.stopped_early { " (early stop)" } else { "" }
            )?;
        }
        let failing = report.services.iter().filter(|s| s.verdict == Verdict::Fail).count();
        writeln!(
            out,
            "{failing} of {} services fail; max relative violation {:.3}",
            report.services.len(),
            report.max_relative_violation()
        )?;
    }
    Ok(report.all_pass())
}

fn bench(args: BenchArgs) -> Result<()> {
    let kind: ScenarioKind = args.kind.into();
    let ns = match kind {
        ScenarioKind::Uniform => args.ns.clone(),
        ScenarioKind::Bivalued => vec![0],
    };
    let mut specs = Vec::new();
    for &n in &ns {
        for &mem in &args.mem {
            for seed in args.seed_start..args.seed_start + args.seeds {
                let base = match kind {
                    ScenarioKind::Uniform => ScenarioSpec::uniform(n, mem, seed),
                    ScenarioKind::Bivalued => ScenarioSpec::bivalued(mem, seed),
                };
                specs.push(ScenarioSpec {
                    fail: args.fail,
                    integer_exponent: args.integer_exponent,
                    ..base
                });
            }
        }
    }
    let heuristics: Vec<Heuristic> = args.heuristics.iter().map(|&h| h.into()).collect();
    let options = BenchOptions {
        pipeline: args.pipeline.options()?,
        validate: args.validate,
        sample_size: args.estimator.n_sample,
        mode: args.estimator.mode(),
        execution: execution(args.estimator.sequential),
    };
    info!("running {} cells", specs.len());
    let reports = run_grid(&specs, &heuristics, &options)?;
    for r in &reports {
        for run in r.runs.iter().filter(|run| run.error.is_some()) {
            log::warn!(
                "{} failed on {} ns={} mem={} seed={}: {}",
                run.heuristic.name(),
                r.spec.kind.name(),
                r.spec.ns,
                r.spec.mem,
                r.spec.seed,
                run.error.as_deref().unwrap_or_default()
            );
        }
    }
    let rows: Vec<_> = reports.iter().flat_map(|r| r.csv_rows()).collect();
    let mut out = output(args.output.as_deref())?;
    write_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a).map(|_| true),
        Command::Solve(a) => solve(a).map(|_| true),
        Command::Estimate(a) => estimate(a),
        Command::Bench(a) => bench(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        // Some service misses its reliability target.
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
