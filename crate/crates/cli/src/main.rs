use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use unfitted_core::experiment::{
    emit, run_case, sweep_gamma, sweep_refinement, write_records, BenchRecord, GeometryKind, OutputFormat, RunConfig,
    DEFAULT_GAMMAS, DEFAULT_REFINEMENT, DEFAULT_REFINEMENT_GAMMAS,
};
use unfitted_core::forms::{Method, ProblemKind, UStar};
use unfitted_core::system::BoundaryMode;
use unfitted_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const SWEEP_GAMMA_N: usize = 40;

#[derive(Parser)]
#[command(
    name = "unfitted-bench",
    version,
    about = "Condition number and error studies for unfitted FE stabilisations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single case.
    Run(CaseArgs),
    /// Sweep the penalty parameter on a fixed mesh.
    SweepGamma(CaseArgs),
    /// Refinement study over mesh sizes and penalty values.
    SweepH(CaseArgs),
}

#[derive(Args)]
struct CaseArgs {
    /// poisson or elasticity.
    #[arg(long, default_value = "poisson")]
    problem: String,
    /// nitsche or mixed.
    #[arg(long, default_value = "nitsche")]
    bc: String,
    /// box or circle.
    #[arg(long, default_value = "box")]
    geometry: String,
    /// Target smallest cut fraction over active cells.
    #[arg(long, default_value_t = 1e-8)]
    sliver_eta: f64,
    /// Comma-separated methods (NONE, F-GP, A-GP, B-GP-i, W-Ag-L2, W-Ag-GRAD, S-Ag).
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Comma-separated penalty values.
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    /// Polynomial order, 1 or 2.
    #[arg(long, default_value_t = 1)]
    order: usize,
    /// Comma-separated cells per side of the background mesh.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Cut fraction at or above which a cut cell counts as interior.
    #[arg(long, default_value_t = 1.0)]
    eta0: f64,
    /// Region of the weak aggregation penalties: U or U-minus-Omega.
    #[arg(long, default_value = "U")]
    ustar: String,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

fn parse<T: FromStr<Err = Error>>(what: &str, s: &str) -> Result<T, CliError> {
    s.parse().map_err(|e: Error| CliError::Config(format!("--{what}: {e}")))
}

struct Plan {
    base: RunConfig,
    methods: Vec<Method>,
    gammas: Vec<f64>,
    ns: Vec<usize>,
    format: OutputFormat,
}

fn plan(args: &CaseArgs, gammas: &[f64], ns: &[usize], methods: &[Method]) -> Result<Plan, CliError> {
    let base = RunConfig {
        problem: parse::<ProblemKind>("problem", &args.problem)?,
        bc: parse::<BoundaryMode>("bc", &args.bc)?,
        geometry: parse::<GeometryKind>("geometry", &args.geometry)?,
        sliver_eta: args.sliver_eta,
        order: args.order,
        eta0: args.eta0,
        ustar: parse::<UStar>("ustar", &args.ustar)?,
        ..RunConfig::default()
    };
    let methods = if args.method.is_empty() {
        methods.to_vec()
    } else {
        args.method.iter().map(|m| parse::<Method>("method", m)).collect::<Result<_, _>>()?
    };
    let gammas = if args.gamma.is_empty() { gammas.to_vec() } else { args.gamma.clone() };
    let ns = if args.n.is_empty() { ns.to_vec() } else { args.n.clone() };
    let plan = Plan { base, methods, gammas, ns, format: parse::<OutputFormat>("format", &args.format)? };
    for &m in &plan.methods {
        for &g in &plan.gammas {
            for &n in &plan.ns {
                RunConfig { method: m, gamma: g, n, ..plan.base }
                    .validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
    }
    Ok(plan)
}

fn single<T: Copy>(what: &str, values: &[T]) -> Result<T, CliError> {
    match values {
        [v] => Ok(*v),
        _ => Err(CliError::Config(format!("run takes exactly one --{what}"))),
    }
}

impl Command {
    fn args(&self) -> &CaseArgs {
        match self {
            Command::Run(a) | Command::SweepGamma(a) | Command::SweepH(a) => a,
        }
    }
}

fn execute(command: &Command) -> Result<(Vec<BenchRecord>, OutputFormat), CliError> {
    match command {
        Command::Run(args) => {
            let p = plan(args, &[1.0], &[16], &[Method::StrongAggregation])?;
            let config = RunConfig {
                method: single("method", &p.methods)?,
                gamma: single("gamma", &p.gammas)?,
                n: single("n", &p.ns)?,
                ..p.base
            };
            Ok((vec![run_case(&config)?], p.format))
        }
        Command::SweepGamma(args) => {
            let p = plan(args, &DEFAULT_GAMMAS, &[SWEEP_GAMMA_N], &Method::ALL)?;
            let n = single("n", &p.ns)?;
            let mut records = Vec::new();
            for &m in &p.methods {
                records.extend(sweep_gamma(&RunConfig { method: m, n, ..p.base }, &p.gammas)?);
            }
            Ok((records, p.format))
        }
        Command::SweepH(args) => {
            let p = plan(args, &DEFAULT_REFINEMENT_GAMMAS, &DEFAULT_REFINEMENT, &Method::ALL)?;
            if p.ns.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CliError::Config("--n must be strictly increasing".into()));
            }
            let mut records = Vec::new();
            for &m in &p.methods {
                records.extend(sweep_refinement(&RunConfig { method: m, ..p.base }, &p.ns, &p.gammas)?);
            }
            Ok((records, p.format))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = execute(&cli.command).and_then(|(records, format)| {
        match &cli.command.args().out {
            Some(path) => emit(&records, format, path)?,
            None => {
                let stdout = io::stdout();
                let mut lock = stdout.lock();
                write_records(&records, format, &mut lock)?;
                lock.flush().map_err(Error::from)?;
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => f.write_str(msg),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Run(Error::SolverFailure(_) | Error::InternalConsistency(_)) => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&CliError::Config("x".into())), 2);
        assert_eq!(exit_code(&CliError::Run(Error::InvalidArgument("x".into()))), 2);
        assert_eq!(exit_code(&CliError::Run(Error::SearchFailure("x".into()))), 2);
        assert_eq!(exit_code(&CliError::Run(Error::SolverFailure("x".into()))), 3);
    }
}
