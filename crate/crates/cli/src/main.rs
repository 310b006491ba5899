//! `mbi`: fit, simulate, impute and diagnose from the command line.
//!
//! Exit codes: 0 success, 1 I/O failure while writing output, 2 parse or
//! usage error, 3 missing-pattern violation, 4 fit failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "mbi", version, about = "Variable selection for block-wise missing multi-source data")]
struct Cli {
    /// Flat key=value file mirroring the long flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the penalized model over a lambda path and select by BIC.
    Fit(FitArgs),
    /// Run simulation replications and write per-method means.
    Simulate(SimulateArgs),
    /// Write the multiple block-wise imputations, one CSV per (group, donor).
    Impute(ImputeArgs),
    /// Fit, then report the covariance estimate and the efficiency gap.
    Diagnose(FitArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// CSV with a header row; missing cells are NA.
    #[arg(long)]
    pub data: PathBuf,

    /// Name of the response column.
    #[arg(long)]
    pub response: String,

    /// Source spans over the covariate columns, 1-based and inclusive,
    /// e.g. "1-12,13-24,25-40". Default: one source.
    #[arg(long)]
    pub sources: Option<String>,

    /// Groups smaller than this contribute no moments of their own.
    #[arg(long, default_value_t = 5)]
    pub min_group_size: usize,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// "auto" or a comma-separated list.
    #[arg(long, default_value = "auto")]
    pub lambda: String,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    /// Also write the imputed views under OUT_DIR/imputations.
    #[arg(long)]
    pub dump_imputations: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CovarianceArg {
    Exchangeable,
    Unstructured,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// Preset 1 to 6.
    #[arg(long)]
    pub setting: usize,

    /// Exchangeable correlation; default is the preset's.
    #[arg(long)]
    pub rho: Option<f64>,

    #[arg(long, default_value_t = 50)]
    pub reps: usize,

    /// Output CSV; default OUT_DIR/results.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    /// Comma-separated: proposed, cc, si.
    #[arg(long, default_value = "proposed,cc,si")]
    pub methods: String,

    #[arg(long, value_enum, default_value_t = CovarianceArg::Exchangeable)]
    pub covariance: CovarianceArg,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set thread count: {e}")))?;
    }
    match cli.command {
        Command::Fit(args) => commands::fit(&args, cli.seed),
        Command::Simulate(args) => commands::simulate(&args, cli.seed),
        Command::Impute(args) => commands::impute(&args, cli.seed),
        Command::Diagnose(args) => commands::diagnose(&args, cli.seed),
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
