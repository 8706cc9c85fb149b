use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

mod artifact;
mod commands;
mod config;
mod error;

use commands::Outcome;
use config::{load, Seeded};
use error::CliError;

/// Exponential moments and tail bounds for Galton-Watson trees, Poisson
/// clusters and Hawkes processes.
///
/// Each subcommand reads a JSON config and writes JSON/CSV artifacts into
/// the output directory. Exit status: 0 success, 1 mathematical failure
/// (divergence, no bound, failed check), 2 configuration error.
/// Set GWTK_LOG (e.g. `GWTK_LOG=debug`) for diagnostics on stderr.
#[derive(Parser)]
#[command(name = "gwtk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for the artifacts; created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Overrides the `seed` field of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for simulation and convolution (results do not depend
    /// on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Laplace exponent L(u) with its bounds.
    Solve,
    /// Finiteness domain of L.
    Domain {
        #[arg(value_enum)]
        mode: DomainMode,
    },
    /// Generation tails R_n(u) and their geometric bound.
    Tails,
    /// Decay curve of the cluster-tail bound.
    ClusterBound,
    /// Moment bound for Hawkes counts.
    HawkesBound,
    /// Compare a bound with Monte-Carlo estimates.
    Verify {
        #[arg(value_enum)]
        target: VerifyTarget,
    },
    /// Property suite for bivariate grid kernels. Runs with defaults when no
    /// config is given.
    ConvolveCheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainMode {
    Classify,
    Ray,
    BoundaryFromY,
    Reduce,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyTarget {
    Laplace,
    Tails,
    Cluster,
    Hawkes,
}

fn required(path: &Option<PathBuf>) -> Result<&Path, CliError> {
    path.as_deref().ok_or_else(|| CliError::Config("--config PATH is required".into()))
}

/// Loads, seeds and validates a config, then runs `f` on it.
fn with_config<C, F>(cli: &Cli, check: fn(&mut C) -> Result<(), CliError>, f: F) -> Result<Outcome, CliError>
where
    C: DeserializeOwned + Seeded,
    F: FnOnce(&C, u64) -> Result<Outcome, CliError>,
{
    let mut cfg: C = load(required(&cli.config)?)?;
    let seed = cfg.resolve_seed(cli.seed);
    check(&mut cfg)?;
    f(&cfg, seed)
}

fn no_check<C>(_: &mut C) -> Result<(), CliError> {
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    use config::*;
    match cli.command {
        Command::Solve => with_config(cli, SolveConfig::resolve, commands::solve),
        Command::Domain { mode } => match mode {
            DomainMode::Classify => with_config(cli, ClassifyConfig::resolve, commands::domain_classify),
            DomainMode::Ray => with_config(cli, RayConfig::resolve, commands::domain_ray),
            DomainMode::BoundaryFromY => with_config(cli, BoundaryConfig::resolve, commands::domain_boundary),
            DomainMode::Reduce => with_config(cli, no_check::<ReduceConfig>, commands::domain_reduce),
        },
        Command::Tails => with_config(cli, TailsConfig::resolve, commands::tails),
        Command::ClusterBound => with_config(cli, ClusterBoundConfig::resolve, commands::cluster_bound),
        Command::HawkesBound => with_config(cli, HawkesBoundConfig::resolve, commands::hawkes_bound),
        Command::Verify { target } => match target {
            VerifyTarget::Laplace => with_config(cli, VerifyLaplaceConfig::resolve, commands::verify_laplace),
            VerifyTarget::Tails => with_config(cli, VerifyTailsConfig::resolve, commands::verify_tails),
            VerifyTarget::Cluster => with_config(cli, VerifyClusterConfig::resolve, commands::verify_cluster),
            VerifyTarget::Hawkes => with_config(cli, VerifyHawkesConfig::resolve, commands::verify_hawkes),
        },
        Command::ConvolveCheck => {
            let mut cfg: gwtk::grid::ConvolveCheckConfig = match &cli.config {
                Some(p) => load(p)?,
                None => Default::default(),
            };
            let seed = cfg.resolve_seed(cli.seed);
            config::check_convolve(&cfg)?;
            commands::convolve(&cfg, seed)
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let outcome = dispatch(cli)?;
    outcome.artifacts.write(&cli.out)?;
    for name in outcome.artifacts.names() {
        log::info!("wrote {}", cli.out.join(name).display());
    }
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GWTK_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gwtk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
