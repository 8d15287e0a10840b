//! Command-line front end for the verification studies.
//!
//! Exit status: 0 when every check in the invoked suite passes, 1 when a
//! check fails (or a simulation aborts), 2 for configuration errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use itowentzell::error::{ConfigError, Error, QuadratureError};
use itowentzell::experiments::{
    run_feps_study, run_mollifier_suite, run_reduction_suite, run_residual_study, Format, Report, DEFAULT_FEPS_EPS,
    DEFAULT_MOLLIFIER_EPS,
};
use itowentzell::feps::FepsParams;
use itowentzell::noise::{path_noise, write_noise_dump};
use itowentzell::scenario::{validate_scenario, ScenarioConfig};
use itowentzell::state::{evolve_state, write_trajectory_csv};

#[derive(Parser)]
#[command(name = "iwcheck", version, about = "Pathwise checks of the Itô–Wentzell formula with jumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Residual of the formula across refinement levels.
    VerifyIw {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Also write the noise dump and state trajectory of path 0 (finest level) into this directory.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Classical Itô–Wentzell, generalized Itô and chain-rule reductions.
    Reductions {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Mollifier bound and derivative-transfer checks.
    Mollifier {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_MOLLIFIER_EPS)]
        eps_grid: Vec<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Mean-square convergence of the mollified field.
    Feps {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FEPS_EPS)]
        eps_grid: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Override the number of refinement levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Worker threads (0 = all cores). Reports do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

enum Failure {
    Check(String),
    Config(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Quadrature(QuadratureError::InvalidParams(_)) => Failure::Config(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load(path: &Path, common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if let Some(p) = common.paths {
        cfg.n_paths = p;
    }
    if let Some(l) = common.levels {
        cfg.refinement_levels = l;
    }
    Ok(validate_scenario(cfg).map_err(ConfigError::from)?)
}

fn emit(report: &impl Report, output: &Output) -> Result<bool, Failure> {
    let text = report.render(output.format.into());
    match &output.out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display())))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Check(format!("stdout: {e}")))?;
        }
    }
    Ok(report.passed())
}

fn dump_path(cfg: &ScenarioConfig, dir: &Path) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Config(format!("cannot write dump into {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let (wiener, jumps) = path_noise(cfg, 0);
    let mut noise = fs::File::create(dir.join("noise.txt")).map_err(io)?;
    write_noise_dump(&mut noise, &wiener, &jumps).map_err(io)?;
    let traj = evolve_state(&cfg.state, &cfg.x0, &wiener, &jumps).map_err(Error::from)?;
    let mut csv = fs::File::create(dir.join("trajectory.csv")).map_err(io)?;
    write_trajectory_csv(&mut csv, &traj).map_err(io)?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::VerifyIw { config, common, dump } => {
            let cfg = load(&config, &common)?;
            if let Some(dir) = dump {
                dump_path(&cfg, &dir)?;
            }
            let report = run_residual_study(&cfg, common.workers)?;
            emit(&report, &common.output)
        }
        Command::Reductions { config, common } => {
            let cfg = load(&config, &common)?;
            let report = run_reduction_suite(&cfg, common.workers)?;
            emit(&report, &common.output)
        }
        Command::Mollifier { eps_grid, output } => {
            let report = run_mollifier_suite(&eps_grid)?;
            emit(&report, &output)
        }
        Command::Feps { config, eps_grid, common } => {
            let cfg = load(&config, &common)?;
            let params = FepsParams::new(eps_grid, cfg.n_paths);
            let report = run_feps_study(&cfg, &params, common.workers)?;
            emit(&report, &common.output)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Check(msg)) => {
            eprintln!("iwcheck: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("iwcheck: {msg}");
            ExitCode::from(2)
        }
    }
}
