//! `popgame` command-line front end.
//!
//! Exit status: 0 on success, 1 on input errors, 2 when a verification
//! check fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{DesignMode, McCheck, SolverChoice};

#[derive(Parser, Debug)]
#[command(name = "popgame", version, about = "Large-population linear best-response games on weighted grids")]
pub struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (directory for reproduce-all). Printed to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Eigenvalues, numerical range and (R1)/(R2) of a payoff structure.
    Spectral(GameArgs),
    /// Solve a linear equilibrium under Gaussian information.
    Equilibrium(EquilibriumArgs),
    /// Feasibility checks for an equilibrium moment.
    Moments(MomentsArgs),
    /// Optimal information disclosure.
    Design(DesignArgs),
    /// Monte Carlo verification.
    Mc(McArgs),
    /// Run every acceptance check and write a manifest.
    ReproduceAll(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Constant,
    OffdiagonalConstant,
    Unidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InfoKind {
    NoInfo,
    FullInfo,
    Public,
    PrivateIid,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GameArgs {
    /// Number of grid nodes (uniform grid).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelKind>,
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub state_mean: Option<f64>,
    #[arg(long)]
    pub state_var: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct EquilibriumArgs {
    #[command(flatten)]
    pub game: GameArgs,
    #[arg(long, value_enum)]
    pub info: Option<InfoKind>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverChoice>,
}

#[derive(Args, Debug, Clone)]
pub struct ObjectiveArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub u: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub v: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub w: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct MomentsArgs {
    /// Moment JSON (`grid`, `xi`, `zeta`, `state_var`). Without it the
    /// moment of the solved equilibrium is checked.
    #[arg(long)]
    pub moment: Option<PathBuf>,
    #[command(flatten)]
    pub equilibrium: EquilibriumArgs,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    /// Also build the canonical signal structure and solve it back.
    #[arg(long)]
    pub construct: bool,
}

#[derive(Args, Debug, Clone)]
pub struct DesignArgs {
    #[arg(long, value_enum)]
    pub mode: Option<DesignMode>,
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    /// Informed mass for the symmetric mode.
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Grid size for audit samples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct McArgs {
    #[arg(long, value_enum)]
    pub check: Option<McCheck>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    /// Extra parameters as `key=value,key=value`.
    #[arg(long)]
    pub params: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct ReproduceArgs {
    /// Smaller sample sizes for a fast smoke run.
    #[arg(long)]
    pub quick: bool,
    /// Shift one equilibrium loading in the best-response fixture so that
    /// its audit must fail.
    #[arg(long)]
    pub inject_perturbation: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(commands::Status::Pass) => ExitCode::SUCCESS,
        Ok(commands::Status::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
