use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polytube_cli::{run, verify, CliError, ExperimentConfig, Kind, Overrides, VerifyOptions};

#[derive(Parser)]
#[command(name = "polytube", version, about = "Directed polymers in tube environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact and predicted collision counts I_N.
    Intersect(RunArgs),
    /// Exact partition functions over replicas, with E[Z^2].
    Partition(RunArgs),
    /// Chaos terms per field and their variances.
    Chaos(RunArgs),
    /// Regime, schedule and limit variance per cell.
    RegimeMap(RunArgs),
    /// Replica statistics against the limit law along the N grid.
    Converge(RunArgs),
    /// Fractional moments along a beta grid.
    Fractional(RunArgs),
    /// Re-run pinned configs and diff against golden CSVs.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))]
    fixtures: PathBuf,
    /// Relative tolerance of deterministic columns.
    #[arg(long, default_value_t = 1e-12)]
    rtol: f64,
    /// Standard errors allowed for Monte Carlo columns.
    #[arg(long, default_value_t = 4.0)]
    n_se: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn run_kind(kind: Kind, args: RunArgs) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: args.seed,
        threads: args.threads,
        out: args.out,
    };
    let config = ExperimentConfig::load(&args.config)?.resolve(kind, &overrides)?;
    let summary = run(&config)?;
    for p in summary.csv.iter().chain([&summary.manifest]) {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<(), CliError> {
    let opts = VerifyOptions {
        dir: args.fixtures,
        rtol: args.rtol,
        n_se: args.n_se,
        seed: args.seed,
        threads: args.threads,
    };
    let reports = verify(&opts)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!("{r}");
        for m in &r.mismatches {
            println!("  {m}");
        }
        if !r.passed() {
            failed.push(r.name.as_str());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Intersect(a) => run_kind(Kind::Intersect, a),
        Command::Partition(a) => run_kind(Kind::Partition, a),
        Command::Chaos(a) => run_kind(Kind::Chaos, a),
        Command::RegimeMap(a) => run_kind(Kind::RegimeMap, a),
        Command::Converge(a) => run_kind(Kind::Converge, a),
        Command::Fractional(a) => run_kind(Kind::Fractional, a),
        Command::Verify(a) => run_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("polytube: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
