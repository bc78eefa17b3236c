mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

/// Offline RL with uncertainty-guided expert sampling on tabular tasks.
///
/// Log verbosity is read from UGES_LOG (error, warn, info, debug); default warn.
#[derive(Debug, Parser)]
#[command(name = "uges", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out a behaviour policy until N successful episodes are collected.
    GenData(GenDataArgs),
    /// Train an ensemble critic from SOA and human buffers.
    Train(TrainArgs),
    /// Evaluate a checkpoint or tabular policy by seeded rollouts.
    Eval(EvalArgs),
    /// Exact concentrability of a behaviour policy against the optimal one.
    Analyze(AnalyzeArgs),
    /// Mean and interquartile learning curves from eval logs.
    Plot(PlotArgs),
    /// Train once per candidate threshold and rank the results.
    SweepEpsilon(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Environment shorthand (monolith5, chain6, bandit2) or spec file.
    #[arg(long)]
    pub env: String,
    /// optimal | uniform | noised:EPS | soa[:FRACTION]
    #[arg(long)]
    pub policy: String,
    /// Successful trajectories to collect.
    #[arg(long)]
    pub successful: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Buffer label; defaults to soa for soa policies and human otherwise.
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
    /// Dataset path; stats go next to it as <stem>.stats.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Soa,
    Human,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Trainer config (key = value lines). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub soa: Option<PathBuf>,
    #[arg(long)]
    pub human: Option<PathBuf>,
    /// Environment for evaluation; defaults to the datasets' env id.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Pre-composed mixed buffer for naive sampling.
    #[arg(long)]
    pub mixed: Option<PathBuf>,
    /// Skip the per-evaluation checkpoints (final weights are always saved).
    #[arg(long)]
    pub no_checkpoints: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ensemble checkpoint; the greedy policy of its mean Q is evaluated.
    #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
    pub checkpoint: Option<PathBuf>,
    /// Actor weights to evaluate instead of the greedy ensemble policy.
    #[arg(long, requires = "checkpoint")]
    pub actor: Option<PathBuf>,
    /// Tabular policy: optimal | uniform | noised:EPS | soa[:FRACTION]
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub env: String,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub env: String,
    /// Behaviour policy: optimal | uniform | noised:EPS | soa[:FRACTION]
    #[arg(long)]
    pub mu: String,
    /// Second behaviour policy; adds the check that `mu` has the smaller coefficient.
    #[arg(long)]
    pub against: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Metric {
    /// Monte Carlo mean over the evaluation episodes.
    MeanReturn,
    /// Exact expected return of the evaluated policy.
    ExactReturn,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Eval logs (evals.csv from train).
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "mean-return")]
    pub metric: Metric,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Candidate thresholds, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub eps: Vec<f64>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(uges::Error),
}

impl From<uges::Error> for CliError {
    fn from(e: uges::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use uges::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::InvalidArgument(_) | E::Parse { .. }) => 2,
            CliError::Core(E::NonFiniteLoss { .. } | E::NonFiniteGradient) => 4,
            CliError::Core(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UGES_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Command::GenData(a) = &cli.command {
        if a.successful == 0 {
            let mut cmd = Cli::command();
            cmd.build();
            let sub = cmd.find_subcommand_mut("gen-data").expect("subcommand exists");
            sub.error(ErrorKind::ValueValidation, "--successful must be at least 1").exit();
        }
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Plot(a) => commands::plot(a),
        Command::SweepEpsilon(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
