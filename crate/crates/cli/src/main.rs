//! `arbands` command-line tool.

mod commands;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::input::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "arbands",
    version,
    about = "Autoregressive order selection and simultaneous confidence bands"
)]
struct Cli {
    /// Print machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a sample path of an AR model.
    Simulate(SimulateArgs),
    /// Yule-Walker fits for all orders up to d_n.
    Fit(FitArgs),
    /// Run every order estimator on one series.
    Select(SelectArgs),
    /// Simultaneous confidence band for the order-d_n coefficients.
    Bands(BandsArgs),
    /// Test H0: q <= q0 against q > q0.
    TestOrder(TestOrderArgs),
    /// Run a Monte Carlo experiment and print its frequency tables.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Innovation {
    Gaussian,
    StudentT,
    Uniform,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model order; must match the number of coefficients when given.
    #[arg(long)]
    pub order: Option<usize>,
    /// Coefficients theta_1,..,theta_q, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = arbands::ar_model::DEFAULT_BURN_IN)]
    pub burn_in: usize,
    #[arg(long, value_enum, default_value_t = Innovation::Gaussian)]
    pub innovation: Innovation,
    /// Degrees of freedom for student-t innovations.
    #[arg(long, default_value_t = 5.0)]
    pub df: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Default)]
pub enum Bn {
    #[default]
    Berman,
    Log4pi,
    Verbatim,
}

impl From<Bn> for arbands::BnVariant {
    fn from(b: Bn) -> Self {
        match b {
            Bn::Berman => arbands::BnVariant::Berman,
            Bn::Log4pi => arbands::BnVariant::Log4Pi,
            Bn::Verbatim => arbands::BnVariant::Verbatim,
        }
    }
}

#[derive(Debug, Args)]
pub struct SeriesArgs {
    /// Single-column CSV file with an optional `value` header.
    #[arg(long)]
    pub input: PathBuf,
    /// Maximal lag d_n; defaults to ceil(2 log n).
    #[arg(long)]
    pub dn: Option<usize>,
    /// Subtract the sample mean before the analysis.
    #[arg(long)]
    pub center: bool,
    /// Constant in the centring sequence b_n.
    #[arg(long, value_enum, default_value_t = Bn::Berman)]
    pub bn_variant: Bn,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    /// Raw band threshold y used by the threshold estimators and the starred
    /// criteria; defaults to the reference schedule for the sample size.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Smaller raw threshold x; defaults to the reference schedule.
    #[arg(long)]
    pub threshold_x: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub hqc_c: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Gumbel,
    IidExact,
    McCorrelated,
}

#[derive(Debug, Args)]
pub struct BandsArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = Mode::IidExact)]
    pub mode: Mode,
    #[arg(long, default_value_t = 100_000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TestOrderArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    #[arg(long)]
    pub q0: usize,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Markdown,
    Json,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment configuration (JSON); the reference AR(6) study when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the number of repetitions.
    #[arg(long)]
    pub reps: Option<u64>,
    /// Override the index of the first repetition.
    #[arg(long)]
    pub first_rep: Option<u64>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Table format; inferred from the --out extension, else csv.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Merge previously written JSON reports instead of running.
    #[arg(long, num_args = 1.., conflicts_with_all = ["config", "reps", "first_rep", "seed"])]
    pub merge: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let json = cli.json;
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a, json),
        Command::Select(a) => commands::select(&a, json),
        Command::Bands(a) => commands::bands(&a, json),
        Command::TestOrder(a) => commands::test_order(&a, json),
        Command::Experiment(a) => commands::experiment(&a, json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if json {
                let doc = serde_json::json!({
                    "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() }
                });
                println!("{doc}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
