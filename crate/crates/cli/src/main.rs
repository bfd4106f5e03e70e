mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use cpls_core::{BasisFamily, ModelId, YType};

use crate::error::CliError;

/// Drift estimation for diffusions driven by an explanatory process.
#[derive(Debug, Parser)]
#[command(name = "cpls", version)]
pub struct Cli {
    /// `key = value` file; flags take precedence over its entries.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (default: $CPLS_OUT_DIR, else ./cpls-out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one sample and fit it with adaptive dimension selection.
    Fit(FitArgs),
    /// Monte-Carlo experiment for one model, explanatory process and N.
    Experiment(ExperimentArgs),
    /// Full grid: three models, two explanatory processes, two sample sizes.
    Table1(Table1Args),
    /// Orthonormality residual of a basis family.
    BasesCheck(BasesCheckArgs),
}

#[derive(Debug, Args, Default)]
pub struct SelectionArgs {
    /// Penalty constant.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub max_m1: Option<usize>,
    #[arg(long)]
    pub max_m2: Option<usize>,
    /// Constant of the stability cutoff `(m1 + m2) |Psi^-1| <= c N / log N`.
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long, value_name = "BASIS")]
    pub basis_phi: Option<BasisFamily>,
    #[arg(long, value_name = "BASIS")]
    pub basis_psi: Option<BasisFamily>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: Option<ModelId>,
    #[arg(long)]
    pub y: Option<YType>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also select by the oracle criterion on the first path's quantile box.
    #[arg(long)]
    pub oracle: bool,
    /// Write the Gram matrix, Z and d of the selected dimensions as CSV.
    #[arg(long)]
    pub dump_matrices: bool,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub model: Option<ModelId>,
    #[arg(long)]
    pub y: Option<YType>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write beam CSVs with this many estimated curves per function.
    #[arg(long, value_name = "K")]
    pub beam: Option<usize>,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

#[derive(Debug, Args)]
pub struct BasesCheckArgs {
    #[arg(long)]
    pub basis: Option<BasisFamily>,
    #[arg(long)]
    pub m: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            if !rendered.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::Usage(msg) => {
                    eprintln!("error: {msg}\n");
                    eprintln!("{}", Cli::command().render_usage());
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
