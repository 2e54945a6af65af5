//! Terminal toolkit around the cardinality-constrained quadratic solver:
//! solve single instance files, generate seeded portfolio instances, run
//! benchmark grids into CSV, cross-check the solver against the exhaustive
//! oracle, and pair baseline sparsity levels with budgeted runs.
//!
//! Set `CARDSCA_LOG` (e.g. `info`, `debug`) to control diagnostics on
//! stderr; reports go to stdout.

mod bench;
mod checks;
mod compare;
mod solve;

use std::process::ExitCode;

use cardsca::baselines::SurrogateSpec;
use cardsca::qp::QpSettings;
use cardsca::sca::ScaConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cardsca",
    version,
    about = "Cardinality-constrained convex quadratic optimization toolkit",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance file under a cardinality budget
    Solve(solve::SolveArgs),
    /// Generate a seeded portfolio instance file
    Generate(solve::GenerateArgs),
    /// Run a benchmark grid and write one CSV row per configuration
    Bench(bench::BenchArgs),
    /// Cross-check the solver against the exhaustive oracle
    OracleCheck(checks::OracleCheckArgs),
    /// Pair each baseline sparsity level with a budgeted run at that level
    Compare(compare::CompareArgs),
}

/// Solver selector shared by the subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum Method {
    /// Joint selection-variable solver with an increasing exact penalty
    ScaRp,
    /// Reweighted surrogate baseline, power family
    ScaLp,
    /// Reweighted surrogate baseline, exponential family
    ScaExp,
}

impl Method {
    pub(crate) fn tag(self) -> &'static str {
        match self {
            Method::ScaRp => "sca-rp",
            Method::ScaLp => "sca-lp",
            Method::ScaExp => "sca-exp",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Tuning flags shared by the solving subcommands; defaults mirror the
/// library defaults.
#[derive(Debug, Clone, Args)]
pub(crate) struct Tuning {
    /// Initial penalty weight of the budgeted method
    #[arg(long, default_value_t = ScaConfig::default().mu0)]
    pub mu0: f64,
    /// Penalty growth factor per outer round
    #[arg(long, default_value_t = ScaConfig::default().rho_growth)]
    pub rho_growth: f64,
    /// Iterate-distance stopping tolerance
    #[arg(long, default_value_t = ScaConfig::default().eps)]
    pub eps: f64,
    /// Entries this close to zero count as zero
    #[arg(long, default_value_t = ScaConfig::default().zero_tol)]
    pub zero_tol: f64,
    /// Surrogate shape for the baselines: exponent of the power family
    /// (default 0.5) or scale of the exponential family (default 0.01)
    #[arg(long)]
    pub p: Option<f64>,
    /// Fixed surrogate weight for the baselines; when omitted, baseline
    /// solves sweep the default weight grid until the budget is met
    #[arg(long)]
    pub mu: Option<f64>,
}

impl Tuning {
    pub(crate) fn sca_config(&self) -> ScaConfig {
        ScaConfig {
            mu0: self.mu0,
            rho_growth: self.rho_growth,
            eps: self.eps,
            zero_tol: self.zero_tol,
            ..ScaConfig::default()
        }
    }

    pub(crate) fn qp_settings(&self) -> QpSettings {
        QpSettings::default()
    }

    /// Baseline run description at a given weight, with the shape flag
    /// applied.
    pub(crate) fn surrogate(&self, method: Method, mu: f64) -> Result<SurrogateSpec, CliError> {
        let mut spec = match method {
            Method::ScaLp => SurrogateSpec::lp(mu),
            Method::ScaExp => SurrogateSpec::exp(mu),
            Method::ScaRp => {
                return Err(CliError::Usage(
                    "surrogate parameters apply to sca-lp and sca-exp only".into(),
                ))
            }
        };
        if let Some(p) = self.p {
            spec.p = p;
        }
        spec.eps = self.eps;
        Ok(spec)
    }
}

/// Terminal-facing failures with distinct exit codes.
pub(crate) enum CliError {
    /// Bad arguments: exit code 2, matching the parser's own convention.
    Usage(String),
    /// A valid request that failed while running: exit code 1.
    Run(String),
}

impl From<cardsca::Error> for CliError {
    fn from(e: cardsca::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

pub(crate) type CmdResult = Result<ExitCode, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CARDSCA_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => solve::run_solve(args),
        Command::Generate(args) => solve::run_generate(args),
        Command::Bench(args) => bench::run(args),
        Command::OracleCheck(args) => checks::run(args),
        Command::Compare(args) => compare::run(args),
    };
    match outcome {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
