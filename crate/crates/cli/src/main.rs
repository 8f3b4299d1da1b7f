use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use quenched_cli::{execute, validate_report, CliError, ExperimentConfig, Verb};

/// Quenched limit-theorem experiments on random expanding circle maps.
#[derive(Debug, Parser)]
#[command(name = "quenched", version)]
struct Args {
    #[arg(value_enum)]
    verb: Verb,
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the Monte Carlo and per-theta fan-out.
    #[arg(long)]
    threads: Option<usize>,
    /// Replaces `base.master_seed`.
    #[arg(long)]
    seed_override: Option<u64>,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QL_LOG_LEVEL", "warn"))
        .format_timestamp(None)
        .init();
}

fn main_inner(args: Args) -> Result<(), CliError> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| CliError::Parse(format!("--threads: {e}")))?;
    }
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed_override {
        config.base.master_seed = seed;
    }
    let scenario = config.validate()?;
    if args.verb == Verb::Validate {
        let report = validate_report(&scenario)?;
        println!("expanding_on_average: {}", report.expanding_on_average);
        println!("mean_log_lambda: {:.16e}", report.mean_log_lambda);
        for (i, c) in report.per_map.iter().enumerate() {
            println!(
                "map {i}: lambda_min {:.6} distortion {:.6} branches {}",
                c.lambda_min, c.distortion, c.branch_count
            );
        }
        for w in &report.warnings {
            println!("warning: {w}");
        }
        return Ok(());
    }
    let manifest = execute(args.verb, &scenario, &args.out)?;
    for stage in &manifest.stages {
        log::info!("{} {:?} {:.3}s", stage.name, stage.status, stage.wall_seconds);
    }
    for f in &manifest.files {
        println!("{}", args.out.join(&f.name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    init_logging();
    let args = Args::parse();
    match main_inner(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
