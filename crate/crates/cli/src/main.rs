//! `sln`: saddlepoint Laplace transform and density estimates for sums of
//! dependent lognormals.

mod commands;
mod report;
mod tables;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use report::{write_atomic, Format, Report};
use sln_core::inversion::STABLE_TERMS;
use sln_core::LognormalModel;

#[derive(Debug, Parser)]
#[command(
    name = "sln",
    version,
    about = "Laplace transform of sums of dependent lognormals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Minimiser x* of the saddlepoint exponent at each theta.
    Minimise(#[command(flatten)] RunArgs),
    /// Asymptotic form (beta | c - mu) and D (beta | c - mu).
    Asymptotic(#[command(flatten)] RunArgs),
    /// Estimates of L(theta).
    Transform(#[command(flatten)] RunArgs),
    /// Density estimates by Gaver-Stehfest inversion or conditional MC.
    Density(#[command(flatten)] RunArgs),
    /// Quadrature reference values of L(theta) or f(x).
    Oracle(#[command(flatten)] RunArgs),
    /// Relative errors of the transform estimators against the oracle.
    Table1(#[command(flatten)] RunArgs),
    /// Relative errors of the density estimators against the oracle.
    Table2(#[command(flatten)] RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Tilde,
    Cmc,
    Is,
    Qmc,
    Cond,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Model file: {"mu": [...], "sigma": [[...], ...], "name": "..."}.
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated theta values, each >= 0.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_parser = parse_theta)]
    pub theta: Vec<f64>,
    /// Comma-separated x values, each > 0.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_parser = parse_x)]
    pub x: Vec<f64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Monte Carlo replications or Sobol points.
    #[arg(long, allow_negative_numbers = true, value_parser = parse_reps)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Even number of Gaver-Stehfest terms, 2 to 18.
    #[arg(long, default_value_t = 14, allow_negative_numbers = true, value_parser = parse_gs_terms)]
    pub gs_terms: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("'{s}' is not a number"))?;
    if !v.is_finite() {
        return Err(format!("'{s}' is not finite"));
    }
    Ok(v)
}

fn parse_theta(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v < 0.0 {
        return Err("theta must be >= 0".into());
    }
    Ok(v)
}

fn parse_x(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v <= 0.0 {
        return Err("x must be > 0".into());
    }
    Ok(v)
}

fn parse_reps(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(r) if r >= 1 => Ok(r),
        _ => Err("reps must be an integer >= 1".into()),
    }
}

fn parse_gs_terms(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(m) if (2..=18).contains(&m) && m % 2 == 0 => Ok(m),
        _ => Err("gs-terms must be an even integer from 2 to 18".into()),
    }
}

pub enum Failure {
    Usage(String),
    Compute(sln_core::Error),
    Io(String),
}

impl From<sln_core::Error> for Failure {
    fn from(e: sln_core::Error) -> Self {
        Failure::Compute(e)
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SLN_THREADS") else {
        return Ok(());
    };
    let threads = match raw.trim().parse::<usize>() {
        Ok(t) if t >= 1 => t,
        _ => {
            return Err(Failure::Usage(format!(
                "SLN_THREADS must be a positive integer, got '{raw}'"
            )))
        }
    };
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn load(args: &RunArgs) -> Result<LognormalModel, Failure> {
    let text = std::fs::read_to_string(&args.model)
        .map_err(|e| Failure::Io(format!("{}: {e}", args.model.display())))?;
    Ok(LognormalModel::from_json(&text)?)
}

type Runner = fn(&RunArgs, &LognormalModel) -> Result<Report, Failure>;

fn execute(command: Command) -> Result<(RunArgs, Report), Failure> {
    configure_threads()?;
    let (args, run): (RunArgs, Runner) = match command {
        Command::Minimise(a) => (a, commands::minimise),
        Command::Asymptotic(a) => (a, commands::asymptotic),
        Command::Transform(a) => (a, commands::transform),
        Command::Density(a) => (a, commands::density),
        Command::Oracle(a) => (a, commands::oracle),
        Command::Table1(a) => (a, tables::table1),
        Command::Table2(a) => (a, tables::table2),
    };
    if args.gs_terms > STABLE_TERMS {
        eprintln!(
            "warning: --gs-terms {} exceeds {STABLE_TERMS}; cancellation in double precision may dominate",
            args.gs_terms
        );
    }
    let model = load(&args)?;
    let report = run(&args, &model)?;
    Ok((args, report))
}

pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!(
                "{}",
                text.lines().next().unwrap_or("error: invalid arguments")
            );
            return 2;
        }
    };
    let outcome = execute(cli.command).and_then(|(args, report)| {
        let text = report.render(args.format);
        match &args.output {
            Some(path) => write_atomic(path, &text)
                .map_err(|e| Failure::Io(format!("{}: {e}", path.display()))),
            None => std::io::stdout()
                .lock()
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Io(e.to_string())),
        }
    });
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {}: {e}", e.name());
            1
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: IoError: {msg}");
            1
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
