mod io;
mod report;
mod tools;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ssrs", version, about = "Semi-supervised reward shaping experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config source shared by every subcommand that builds a run.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// Config file in `key = value` form.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override applied after the file, e.g. `--set beta=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Clone, Debug)]
pub struct OutArgs {
    /// Output location. Defaults to `$SSRS_OUT`.
    #[arg(long, env = "SSRS_OUT")]
    pub out: PathBuf,
    /// Allow overwriting existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one process per seed and aggregate the best-score curves.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Seeds as a list and/or ranges: `0,1,2` or `0-4`.
        #[arg(long)]
        seed: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Child process for one seed (used by `train`).
    #[command(hide = true)]
    TrainSeed {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of a trained seed directory.
    Eval {
        /// Seed directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare backprop gradients of the smoothed losses with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        networks: usize,
        #[arg(long, default_value = "0")]
        seed: u64,
    },
    /// Apply one augmentation to a trajectory file and check its invariants.
    AugmentCheck {
        /// Trajectory CSV written by `rollout`.
        #[arg(long)]
        input: PathBuf,
        /// gaussian, cutout, smooth, scale, translate, flip or double_entropy.
        #[arg(long)]
        kind: String,
        /// Transform parameter, e.g. `--param n=8`. Repeatable.
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
        #[arg(long, default_value = "0")]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Record one episode as a trajectory CSV.
    Rollout {
        #[command(flatten)]
        config: ConfigArgs,
        /// Act greedily with this seed directory's Q table instead of uniformly at random.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value = "0")]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Consensus matrix over trajectories stored in a seed directory's buffer.
    Consensus {
        #[arg(long)]
        run: PathBuf,
        /// Mixture components; defaults to the run's `n_z`.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Use the most recent trajectories only.
        #[arg(long, default_value_t = 50)]
        max_trajectories: usize,
        #[arg(long, default_value = "0")]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Shaped-reward histograms from a seed directory's buffer snapshots.
    Dist {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Final best score (mean and std over seeds) for two or more train outputs.
    Compare {
        /// Directories written by `train`.
        dirs: Vec<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => train::run_seeds(&config, &seed, &out),
        Command::TrainSeed { config, seed, out } => train::train_seed(&config, seed, &out),
        Command::Eval { run, episodes, out } => tools::eval(&run, episodes, &out),
        Command::Gradcheck { networks, seed } => tools::gradcheck(networks, seed),
        Command::AugmentCheck { input, kind, params, seed, out } => tools::augment_check(&input, &kind, &params, seed, &out),
        Command::Rollout { config, run, seed, out } => tools::rollout(&config, run.as_deref(), seed, &out),
        Command::Consensus { run, k, runs, max_trajectories, seed, out } => {
            report::consensus(&run, k, runs, max_trajectories, seed, &out)
        }
        Command::Dist { run, bins, out } => report::dist(&run, bins, &out),
        Command::Compare { dirs, out } => report::compare(&dirs, &out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
