use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lmvp::cli::{self, load_config, Overrides};
use lmvp::training::TrainMode;

#[derive(Parser)]
#[command(name = "lmvp", version, about = "Video prediction with leaked motion guidance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test bouncing-sprite videos.
    GenData(Common),
    /// Pretrain, then run the alternating training loop.
    Train(Common),
    /// Per-step metrics against the last-frame baseline.
    Eval(Common),
    /// Write PGM grids of predictions for the first test videos.
    Predict(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Ablation,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 is fully deterministic.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

fn run(cmd: Command) -> lmvp::Result<()> {
    let (Command::GenData(c) | Command::Train(c) | Command::Eval(c) | Command::Predict(c)) = &cmd;
    if let Some(n) = c.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let overrides = Overrides {
        seed: c.seed,
        mode: c.mode.map(|m| match m {
            Mode::Full => TrainMode::Full,
            Mode::Ablation => TrainMode::Ablation,
        }),
    };
    let cfg = load_config(c.config.as_deref(), &overrides)?;
    match &cmd {
        Command::GenData(_) => cli::cmd_gen_data(&cfg, &c.out).map(drop),
        Command::Train(_) => cli::cmd_train(&cfg, &c.out).map(drop),
        Command::Eval(_) => cli::cmd_eval(&cfg, &c.out).map(drop),
        Command::Predict(_) => cli::cmd_predict(&cfg, &c.out).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
