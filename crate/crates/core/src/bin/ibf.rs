use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ibf_core::calibration::DEFAULT_EPSILON_BLEED;
use ibf_core::experiment::{parse_assignment, sig6, stream_rng, CalibrationRecord, Condition, Domain, Overrides, RunSpec, RunStatus};
use ibf_core::harness::{
    ablation_specs, aggregate, load_config, merge_overrides, read_reports, render_summary, run_matrix, seed_specs,
    validate_spec, write_report, write_snapshots, write_summary, write_timings, ReportFormat, TimedRun,
};
use ibf_core::rrw::{rrw_calibration, RrwConfig, INPUT_DIM};
use ibf_core::toy::{toy_calibration, ToyConfig};
use ibf_core::Error;

#[derive(Parser)]
#[command(name = "ibf", version, about = "Particle-memory continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one condition over several seeds.
    Run(RunArgs),
    /// Print the calibrated kernel bandwidth of a domain.
    Calibrate(CalibrateArgs),
    /// Aggregate the run records in a directory.
    Report(ReportArgs),
    /// Run every condition of a domain and aggregate.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    domain: Domain,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Flat key = value file; command-line `--set` wins over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override such as `theta_create=0.2` or `toy.kappa=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    condition: Condition,
    /// Save landscape SVGs (toy only).
    #[arg(long)]
    snapshots: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    domain: Domain,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON_BLEED)]
    epsilon_bleed: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    dir: PathBuf,
    #[arg(long, default_value = "md")]
    format: ReportFormat,
}

enum Failure {
    Usage(Error),
    Runtime(Error),
    RunsFailed(usize),
}

fn overrides(c: &Common) -> Result<Overrides, Failure> {
    let file = match &c.config {
        Some(p) => load_config(p).map_err(Failure::Usage)?,
        None => Overrides::new(),
    };
    let mut cli = Overrides::new();
    for s in &c.set {
        let (k, v) = parse_assignment(s).map_err(Failure::Usage)?;
        cli.insert(k, v);
    }
    Ok(merge_overrides(file, cli))
}

fn execute(specs: Vec<RunSpec>, c: &Common) -> Result<Vec<TimedRun>, Failure> {
    for s in &specs {
        validate_spec(s).map_err(Failure::Usage)?;
    }
    let jobs = c
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let runs = run_matrix(&specs, jobs).map_err(Failure::Usage)?;
    for r in &runs {
        let path = write_report(&r.output.report, &c.out).map_err(Failure::Runtime)?;
        write_snapshots(&r.output, &c.out).map_err(Failure::Runtime)?;
        match &r.output.report.error {
            None => eprintln!("wrote {}", path.display()),
            Some(e) => eprintln!("FAILED {}: {e}", path.display()),
        }
    }
    write_timings(&runs, &c.out).map_err(Failure::Runtime)?;
    Ok(runs)
}

fn finish(runs: &[TimedRun]) -> Result<(), Failure> {
    let failed = runs
        .iter()
        .filter(|r| r.output.report.status == RunStatus::Failed)
        .count();
    if failed > 0 {
        Err(Failure::RunsFailed(failed))
    } else {
        Ok(())
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let o = overrides(&args.common)?;
    let c = &args.common;
    let specs = seed_specs(c.domain, args.condition, c.seed_base, c.seeds, &o, args.snapshots);
    let runs = execute(specs, c)?;
    let reports: Vec<_> = runs.iter().map(|r| r.output.report.clone()).collect();
    print!("{}", render_summary(&aggregate(&reports), ReportFormat::Markdown).map_err(Failure::Runtime)?);
    finish(&runs)
}

fn ablation(args: AblationArgs) -> Result<(), Failure> {
    let c = &args.common;
    let o = overrides(c)?;
    let runs = execute(ablation_specs(c.domain, c.seed_base, c.seeds, &o), c)?;
    let reports: Vec<_> = runs.iter().map(|r| r.output.report.clone()).collect();
    let rows = aggregate(&reports);
    write_summary(&rows, &c.out, ReportFormat::Csv).map_err(Failure::Runtime)?;
    write_summary(&rows, &c.out, ReportFormat::Markdown).map_err(Failure::Runtime)?;
    print!("{}", render_summary(&rows, ReportFormat::Markdown).map_err(Failure::Runtime)?);
    finish(&runs)
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let reports = read_reports(&args.dir).map_err(Failure::Usage)?;
    if reports.is_empty() {
        return Err(Failure::Usage(Error::InvalidArgument(format!(
            "no run records in {}",
            args.dir.display()
        ))));
    }
    let rows = aggregate(&reports);
    write_summary(&rows, &args.dir, args.format).map_err(Failure::Runtime)?;
    print!("{}", render_summary(&rows, args.format).map_err(Failure::Runtime)?);
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<(), Failure> {
    if args.samples < 2 {
        return Err(Failure::Usage(Error::InvalidArgument("--samples must be at least 2".into())));
    }
    let mut rng = stream_rng(args.domain, "env", args.seed);
    let record = match args.domain {
        Domain::Toy => {
            let cfg = ToyConfig {
                calibration_samples: args.samples,
                ..ToyConfig::default()
            };
            toy_calibration(&cfg, &mut rng).map_err(Failure::Usage)?
        }
        Domain::Rrw => {
            use rand_distr::{Distribution, StandardNormal};
            let cfg = RrwConfig::default();
            let states: Vec<Vec<f64>> = (0..args.samples)
                .map(|_| (0..INPUT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let c = rrw_calibration(&states, cfg.action_embed_scale, args.epsilon_bleed).map_err(Failure::Usage)?;
            CalibrationRecord {
                method: "sibling_bleed".into(),
                d_eff: sig6(c.d_eff),
                sigma_star: sig6(c.sigma_star),
                kappa: sig6(c.kappa),
                sibling_distance_median: Some(sig6(c.sibling_distance_median)),
                epsilon_bleed: Some(c.epsilon_bleed),
            }
        }
    };
    let text = serde_json::to_string_pretty(&record).map_err(|e| Failure::Runtime(Error::Parse(e.to_string())))?;
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Report(a) => report(a),
        Command::Ablation(a) => ablation(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::RunsFailed(n)) => {
            eprintln!("{n} run(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
