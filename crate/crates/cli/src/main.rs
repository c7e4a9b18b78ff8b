use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcs_cli::{report::report, run_case, CliError, RunConfig};

/// Worker-count override for the thread pool.
const THREADS_VAR: &str = "MCS_THREADS";

#[derive(Parser)]
#[command(name = "mcs", version, about = "Mass-conserving mixed stress solver for incompressible flow")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a case described by a TOML config.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Override a config entry, e.g. `--set time.dt=5e-4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a verification suite.
    Verify {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(mcs_core::verify::SUITES))]
        suite: String,
    },
    /// Summarize the artifacts of a finished run.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.parse().map_err(|_| CliError::Config(format!("{THREADS_VAR}: expected a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("{THREADS_VAR}: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.cmd {
        Cmd::Solve { config, set } => {
            let cfg = RunConfig::load(&config, &set)?;
            let s = run_case(&cfg)?;
            println!("{} steps, t = {}, KE = {:.6e}, max |div u| = {:.3e}", s.steps, s.t, s.kinetic_energy, s.max_divergence);
            if let Some(c) = s.converged {
                println!("converged: {c} (last change {:.3e})", s.final_change);
            }
            if let Some((ue, pe)) = s.errors {
                println!("L2 errors: velocity {ue:.6e}, pressure {pe:.6e}");
            }
            println!("artifacts in {}", s.dir.display());
        }
        Cmd::Verify { suite } => {
            let checks = mcs_core::verify::run_suite(&suite)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::Check(format!("{failed} of {} checks failed in suite '{suite}'", checks.len())));
            }
            println!("all {} checks passed", checks.len());
        }
        Cmd::Report { dir } => print!("{}", report(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
