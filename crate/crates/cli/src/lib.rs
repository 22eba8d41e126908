//! Command-line front end: `certify`, `simulate` and `sweep` subcommands over
//! the built-in benchmarks or a JSON problem file.
//!
//! Exit codes: 0 when the loop is certified (or the simulation passes the
//! stability test), 2 when it is not, 1 on any error.

pub mod grid;
pub mod problem;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use tdo_core::certify::{self, Certificate, CertifyError};
use tdo_core::ocp::{CondensedQp, OcpError};
use tdo_core::sim::{self, SimError, SimOptions, StabilityTest};
use tdo_core::solvers::SolverKind;
use tdo_core::tolerance::{self, ToleranceParseError, Tolerances};

pub use grid::Grid;
pub use problem::{Problem, ProblemFile};

/// Environment variable holding `key=value,…` tolerance overrides.
pub const TOLERANCE_ENV: &str = "TDO_MPC_TOL";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("problem file: {0}")]
    Problem(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tolerance(#[from] ToleranceParseError),
}

/// Result of a successful run, mapped onto the exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Positive,
    Negative,
}

impl Outcome {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Outcome::Positive
        } else {
            Outcome::Negative
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Positive => 0,
            Outcome::Negative => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tdo-mpc", version, about = "Stability certificates and closed-loop runs for time-distributed MPC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Tolerance overrides `key=value,…`, applied after the TDO_MPC_TOL environment variable.
    #[arg(long, global = true)]
    pub tol: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the small-gain condition at a fixed iteration budget.
    Certify(CertifyArgs),
    /// Run the coupled plant/optimizer loop and apply the stability test.
    Simulate(SimulateArgs),
    /// Tabulate gains over a grid of budgets, R scalings or horizons.
    Sweep(SweepArgs),
}

/// Problem source and the settings shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Built-in benchmark: jones or pendulum.
    #[arg(long, required_unless_present = "problem", conflicts_with = "problem")]
    pub bench: Option<String>,
    /// JSON problem file with fields A, B, Q, R, N, box_lower, box_upper, x0.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Inner solver: pgm or apgm.
    #[arg(long, default_value = "pgm")]
    pub solver: SolverKind,
    /// Iterations per sampling instant; defaults to the benchmark's nominal budget.
    #[arg(long)]
    pub ell: Option<usize>,
    /// Apply Jacobi scaling when it does not worsen the certificate.
    #[arg(long)]
    pub precondition: bool,
    /// Override the prediction horizon N.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Multiplier applied to R.
    #[arg(long)]
    pub rscale: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub run: RunConfig,
    /// JSON output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StabilityArgs {
    /// Closed-loop steps K of the stability test.
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    /// Required shrink factor ‖x_K‖ ≤ ε‖x₀‖.
    #[arg(long, default_value_t = 1e-4)]
    pub shrink_tol: f64,
}

impl StabilityArgs {
    fn test(&self) -> Result<StabilityTest, CliError> {
        Ok(StabilityTest::new(self.steps, self.shrink_tol)?)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunConfig,
    #[command(flatten)]
    pub stability: StabilityArgs,
    /// Skip the per-step reference solve (no e_norm or psi columns).
    #[arg(long)]
    pub no_oracle: bool,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Ell,
    Rscale,
    Horizon,
}

impl Axis {
    fn column(self) -> &'static str {
        match self {
            Axis::Ell => "ell",
            Axis::Rscale => "rscale",
            Axis::Horizon => "horizon",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// `a:b` or `logspace(lo,hi,count)`.
    #[arg(long)]
    pub grid: Grid,
    /// Also search for the smallest budget passing the stability test.
    #[arg(long)]
    pub empirical: bool,
    /// Upper end of the empirical search.
    #[arg(long, default_value_t = 100_000)]
    pub ell_max: usize,
    #[command(flatten)]
    pub stability: StabilityArgs,
    /// Worker threads for grid points (rows keep grid order).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    fn load(&self) -> Result<Problem, CliError> {
        let problem = match (&self.bench, &self.problem) {
            (Some(name), None) => Problem::benchmark(name)?,
            (None, Some(path)) => Problem::from_file(path)?,
            _ => return Err(CliError::Usage("exactly one of --bench and --problem is required".into())),
        };
        problem.with_overrides(self.horizon, self.rscale)
    }

    fn prepare(&self, problem: &Problem) -> Result<CondensedQp, CliError> {
        let qp = problem.condense()?;
        if self.precondition {
            Ok(certify::certified_precondition(&qp)?.0)
        } else {
            Ok(qp)
        }
    }

    fn budget(&self, problem: &Problem) -> Result<usize, CliError> {
        let ell = self
            .ell
            .or_else(|| problem.nominal_ell(self.solver))
            .ok_or_else(|| CliError::Usage("--ell is required for problem files".into()))?;
        if ell == 0 {
            return Err(CliError::Usage("--ell must be at least 1".into()));
        }
        Ok(ell)
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

pub fn cmd_certify(args: &CertifyArgs) -> Result<Outcome, CliError> {
    let problem = args.run.load()?;
    let ell = args.run.budget(&problem)?;
    let qp = args.run.prepare(&problem)?;
    let cert = certify::certify(&qp, ell, args.run.solver)?;
    emit(args.out.as_deref(), &(cert.to_json() + "\n"))?;
    emit(args.csv.as_deref(), &format!("{}\n{}\n", Certificate::csv_header(), cert.csv_row()))?;
    eprintln!(
        "{} {} ℓ = {}: small-gain product {} ({}; bound {})",
        problem.label,
        cert.kind,
        ell,
        certify::format_real(cert.smallgain_at_ell),
        cert.verdict(),
        certify::format_real(cert.report.iteration_bound(cert.kind)),
    );
    Ok(Outcome::from_bool(cert.certified))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Outcome, CliError> {
    let problem = args.run.load()?;
    let ell = args.run.budget(&problem)?;
    let qp = args.run.prepare(&problem)?;
    let test = args.stability.test()?;
    let opts = if args.no_oracle {
        SimOptions::without_oracle()
    } else {
        SimOptions::default()
    };
    let log = sim::simulate_tdo(&qp, args.run.solver, ell, &problem.x0, None, test.horizon_steps, &opts)?;
    emit(args.out.as_deref(), &log.to_csv())?;
    let stable = test.check(&log);
    eprintln!(
        "{} {} ℓ = {}: ‖x_K‖/‖x₀‖ = {} after {} steps ({})",
        problem.label,
        args.run.solver,
        ell,
        certify::format_real(log.final_state.norm() / problem.x0.norm()),
        test.horizon_steps,
        if stable { "stable" } else { "not stable" },
    );
    Ok(Outcome::from_bool(stable))
}

fn sweep_row(args: &SweepArgs, base: &Problem, value: f64) -> Result<Vec<String>, CliError> {
    let integer = |v: f64, what: &str| -> Result<usize, CliError> {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(CliError::Usage(format!("{what} grid values must be integers ≥ 1, got {v}")))
        }
    };
    let (problem, ell) = match args.axis {
        Axis::Ell => (base.clone(), integer(value, "ell")?),
        Axis::Rscale => (base.clone().with_overrides(None, Some(value))?, args.run.budget(base)?),
        Axis::Horizon => {
            let n = integer(value, "horizon")?;
            (base.clone().with_overrides(Some(n), None)?, args.run.budget(base)?)
        }
    };
    let qp = args.run.prepare(&problem)?;
    let cert = certify::certify(&qp, ell, args.run.solver)?;
    let mut row = vec![match args.axis {
        Axis::Rscale => certify::format_real(value),
        _ => format!("{}", value as i64),
    }];
    if args.axis != Axis::Ell {
        row.push(ell.to_string());
    }
    row.extend(cert.csv_fields());
    if args.empirical {
        let found = sim::empirical_min_iterations(&qp, args.run.solver, &problem.x0, args.ell_max, &args.stability.test()?)?;
        row.push(found.map_or_else(|| "none".to_string(), |v| v.to_string()));
    }
    Ok(row)
}

pub fn sweep_csv(args: &SweepArgs) -> Result<String, CliError> {
    let base = args.run.load()?;
    args.stability.test()?;
    let values = args.grid.values();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let rows: Vec<Vec<String>> = pool.install(|| {
        values
            .par_iter()
            .map(|&v| sweep_row(args, &base, v))
            .collect::<Result<_, _>>()
    })?;

    let mut header = vec![args.axis.column().to_string()];
    if args.axis != Axis::Ell {
        header.push("ell".into());
    }
    header.extend(Certificate::CSV_HEADER.iter().map(|s| s.to_string()));
    if args.empirical {
        header.push("empirical_min_iterations".into());
    }
    let mut out = header.join(",") + "\n";
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Outcome, CliError> {
    let csv = sweep_csv(args)?;
    emit(args.out.as_deref(), &csv)?;
    Ok(Outcome::Positive)
}

/// Installs tolerances from the environment value and the `--tol` flag.
pub fn configure_tolerances(env: Option<&str>, flag: Option<&str>) -> Result<Tolerances, CliError> {
    let mut t = Tolerances::default();
    for spec in [env, flag].into_iter().flatten() {
        t = t.with_overrides(spec)?;
    }
    tolerance::install(t);
    Ok(t)
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let env = std::env::var(TOLERANCE_ENV).ok();
    configure_tolerances(env.as_deref(), cli.tol.as_deref())?;
    match &cli.command {
        Command::Certify(a) => cmd_certify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Parses `args` and runs the selected command, mapping every failure,
/// including malformed arguments, to exit code 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
