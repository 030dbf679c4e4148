use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod table;

#[derive(Parser, Debug)]
#[command(name = "iwpairs", version, about = "Boundary classification, Itô–Watanabe pairs and measure changes for 1-d diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the CSV table here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override the solver tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Override the Monte Carlo seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the parsed configuration and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify both endpoints relative to a measure.
    Classify,
    /// Solve for ψ_A, φ_A or a single monotone solution.
    Solve,
    /// Choquet decomposition of a subharmonic function.
    Decompose,
    /// Build the measure-changed diffusion of an Itô–Watanabe pair.
    Transform,
    /// Run a Monte Carlo scenario.
    Verify,
    /// List built-in examples, or print a configuration for one.
    Catalog {
        name: Option<String>,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let task = match &cli.command {
        Command::Classify => commands::Task::Classify,
        Command::Solve => commands::Task::Solve,
        Command::Decompose => commands::Task::Decompose,
        Command::Transform => commands::Task::Transform,
        Command::Verify => commands::Task::Verify,
        Command::Catalog { name, delta } => commands::Task::Catalog { name: name.clone(), delta: *delta },
    };
    match commands::run(task, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_inconclusive() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
