//! `vio` — synthetic sequences, pretraining, online continual
//! adaptation (synchronous or asynchronous), and evaluation.
//!
//! Every subcommand accepts `--config <toml>` (defaults apply when
//! omitted) and `--seed`. Errors exit nonzero with a single
//! machine-parsable JSON line on stderr.

mod commands;
mod config;
mod svg;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "vio", version, about = "Online continual learning for visual-inertial odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-domain dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline training on a source sequence.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Sequence directory.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synchronous online adaptation over one or more sequences.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated sequence directories, adapted in order.
        #[arg(long, value_delimiter = ',', required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override adapter.replay_n from the config.
        #[arg(long)]
        replay_n: Option<usize>,
        /// Override adapter.cycles from the config.
        #[arg(long)]
        cycles: Option<usize>,
        /// Persist replay-buffer contents here (resumes if non-empty).
        #[arg(long)]
        buffer_dir: Option<PathBuf>,
    },
    /// Asynchronous adaptation (predictor/learner split).
    AdaptAsync {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Sequence directory, or a file/pipe of
        /// `frame-path,speed,timestamp` lines.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `sim` (virtual clock, deterministic) or `wall` (threads).
        #[arg(long, default_value = "sim")]
        mode: String,
        /// Simulated learner cost in frame periods (sim mode).
        #[arg(long, default_value_t = 3.0)]
        cost_periods: f64,
    },
    /// Evaluate checkpoints on sequences: error matrix and summary.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated checkpoints, in adaptation order.
        #[arg(long, value_delimiter = ',', required = true)]
        ckpts: Vec<PathBuf>,
        /// Comma-separated sequence directories.
        #[arg(long, value_delimiter = ',', required = true)]
        seqs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON protocol file enabling the AQ/RQ summary.
        #[arg(long)]
        protocol: Option<PathBuf>,
    },
    /// SVG plots from pose files or step logs.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Ground-truth pose file (trajectory plot).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Estimated pose file (trajectory plot).
        #[arg(long)]
        est: Option<PathBuf>,
        /// Step log (loss-trace plot).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { common, out } => commands::gen::run(&common, &out),
        Command::Pretrain { common, data, out } => commands::pretrain::run(&common, &data, &out),
        Command::Adapt {
            common,
            ckpt,
            data,
            out,
            replay_n,
            cycles,
            buffer_dir,
        } => commands::adapt::run(&common, &ckpt, &data, &out, replay_n, cycles, buffer_dir),
        Command::AdaptAsync {
            common,
            ckpt,
            data,
            out,
            mode,
            cost_periods,
        } => commands::adapt_async::run(&common, &ckpt, &data, &out, &mode, cost_periods),
        Command::Eval {
            common,
            ckpts,
            seqs,
            out,
            protocol,
        } => commands::eval::run(&common, &ckpts, &seqs, &out, protocol.as_deref()),
        Command::Plot {
            common,
            gt,
            est,
            log,
            out,
        } => commands::plot::run(&common, gt.as_deref(), est.as_deref(), log.as_deref(), &out),
    };
    if let Err(e) = result {
        eprintln!(
            "{}",
            serde_json::json!({ "error": format!("{e:#}") })
        );
        std::process::exit(1);
    }
}

impl Common {
    fn load_config(&self) -> anyhow::Result<config::RunConfig> {
        match &self.config {
            Some(path) => config::RunConfig::load(path),
            None => Ok(config::RunConfig::default()),
        }
    }
}
