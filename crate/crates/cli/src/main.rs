//! `mollikit` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
//! 3 too many failed replications.

mod commands;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mollikit::{ErrorDist, LossSpec, MollifierKernel, SolverOptions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Quality(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Quality(_) => 3,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<mollikit::Error> for CliError {
    fn from(e: mollikit::Error) -> Self {
        match e {
            mollikit::Error::TooManyFailures { .. } => CliError::Quality(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::io("csv output", e.into())
    }
}

#[derive(Parser, Debug)]
#[command(name = "mollikit", version, about = "Mollifier-smoothed losses and smoothed M-estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate ρ and ρₘ over a grid.
    Curve(CurveArgs),
    /// Sup-norm approximation error for each m.
    Rate(RateArgs),
    /// RMSE experiment from a JSON config.
    Simulate(ExperimentArgs),
    /// MAD experiment (median regression) from a JSON config.
    Mad(ExperimentArgs),
    /// Quadratic-approximation and minimiser gaps against n.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    /// abs | check:<tau> | huber:<c> | relu
    #[arg(long, value_parser = parse_loss)]
    pub loss: LossSpec,
    /// gaussian | bump
    #[arg(long, value_parser = parse_kernel)]
    pub kernel: MollifierKernel,
    /// Comma-separated scales.
    #[arg(long = "m", value_delimiter = ',', required = true, num_args = 1..)]
    pub m: Vec<f64>,
    /// lo:hi:step
    #[arg(long, allow_hyphen_values = true, value_parser = parse_grid)]
    pub grid: Grid,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RateArgs {
    #[arg(long, value_parser = parse_loss)]
    pub loss: LossSpec,
    #[arg(long, value_parser = parse_kernel)]
    pub kernel: MollifierKernel,
    #[arg(long = "m", value_delimiter = ',', required = true, num_args = 1..)]
    pub m: Vec<f64>,
    /// lo:hi:step; defaults to -3:3:0.001.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_grid)]
    pub grid: Option<Grid>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct SolverFlags {
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub ridge: Option<f64>,
}

impl SolverFlags {
    pub fn apply(&self, base: SolverOptions) -> SolverOptions {
        SolverOptions {
            max_iter: self.max_iter.unwrap_or(base.max_iter),
            grad_tol: self.grad_tol.unwrap_or(base.grad_tol),
            ridge: self.ridge.unwrap_or(base.ridge),
        }
    }
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// JSON config: one object or an array of objects.
    #[arg(long)]
    pub config: PathBuf,
    /// JSON results path.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV table path; defaults to the results path with a .csv extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DistArg {
    Normal,
    T4,
}

impl From<DistArg> for ErrorDist {
    fn from(d: DistArg) -> Self {
        match d {
            DistArg::Normal => ErrorDist::Normal01,
            DistArg::T4 => ErrorDist::StudentT4,
        }
    }
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long, value_enum, default_value = "normal")]
    pub dist: DistArg,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long = "n", value_delimiter = ',', default_value = "100,400,1600,6400")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Scales for the minimiser gap.
    #[arg(long = "m", value_delimiter = ',', default_value = "5,10,15")]
    pub m: Vec<f64>,
    #[arg(long, default_value = "bump", value_parser = parse_kernel)]
    pub kernel: MollifierKernel,
    /// Probe-ball radius for the approximation gap.
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
    #[arg(long, default_value_t = mollikit::quadratic::DEFAULT_PROBES)]
    pub probes: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        mollikit::mollify::uniform_grid(self.lo, self.hi, self.step)
    }
}

fn parse_loss(s: &str) -> Result<LossSpec, String> {
    s.parse().map_err(|e: mollikit::Error| e.to_string())
}

fn parse_kernel(s: &str) -> Result<MollifierKernel, String> {
    s.parse().map_err(|e: mollikit::Error| e.to_string())
}

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts[..] else {
        return Err(format!("grid `{s}` is not lo:hi:step"));
    };
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| format!("grid `{s}`: `{t}` is not a number"))
    };
    let g = Grid {
        lo: num(lo)?,
        hi: num(hi)?,
        step: num(step)?,
    };
    if !(g.lo.is_finite() && g.hi.is_finite() && g.step.is_finite()) || g.step <= 0.0 || g.hi < g.lo {
        return Err(format!("grid `{s}` needs finite lo <= hi and step > 0"));
    }
    Ok(g)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Curve(a) => commands::curve(&a),
        Command::Rate(a) => commands::rate(&a),
        Command::Simulate(a) => commands::experiment(&a, mollikit::montecarlo::ExperimentKind::Rmse),
        Command::Mad(a) => commands::experiment(&a, mollikit::montecarlo::ExperimentKind::Mad),
        Command::Diagnose(a) => commands::diagnose(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mollikit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("-2:2:0.5").unwrap();
        assert_eq!(g.points().len(), 9);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("a:1:0.1").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
