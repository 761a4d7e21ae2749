//! Command-line front end: data generation, pre-training, fine-tuning,
//! evaluation, accounting, benchmarking and attention dumps.

mod commands;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nanohtnet",
    version,
    about = "Lightweight 2D-to-3D pose lifting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON config file; missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory (per subcommand).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Preset {
    Desk,
    Flagship,
    Large,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset (PSEQ1).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Contrastive pre-training; writes an encoder checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Dataset to pre-train on.
        #[arg(long)]
        data: PathBuf,
    },
    /// Supervised training; writes checkpoints, a JSON-lines log and a report
    /// into the output directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training dataset (overrides the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out dataset (overrides the config).
        #[arg(long)]
        eval_data: Option<PathBuf>,
        /// Encoder or model checkpoint to start from.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// MPJPE / P-MPJPE of a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Frames between evaluation windows.
        #[arg(long, default_value_t = 27)]
        stride: usize,
    },
    /// Analytic parameter and FLOP counts.
    Flops {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Preset::Flagship)]
        preset: Preset,
    },
    /// Forward-pass latency on this host.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Benchmark a trained checkpoint instead of a fresh model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Flagship)]
        preset: Preset,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Also time an attention stack over per-(frame, joint) tokens.
        #[arg(long)]
        dtst: bool,
    },
    /// Attention maps of one window as JSON.
    DumpAttn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        sequence: usize,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// First frame of the window.
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
}

/// 2 for configuration errors, 3 for corrupt files, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<nanohtnet::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

/// Context messages down to the first library error; its own sources are
/// already part of its message.
fn describe(err: &anyhow::Error) -> String {
    let mut parts = Vec::new();
    for e in err.chain() {
        parts.push(e.to_string());
        if e.is::<nanohtnet::Error>() {
            break;
        }
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::Pretrain { common, data } => commands::pretrain(&common, &data),
        Command::Train {
            common,
            data,
            eval_data,
            pretrained,
            epochs,
        } => commands::train(&common, data, eval_data, pretrained, epochs),
        Command::Eval {
            common,
            checkpoint,
            data,
            stride,
        } => commands::eval(&common, &checkpoint, &data, stride),
        Command::Flops { common, preset } => commands::flops(&common, preset),
        Command::Bench {
            common,
            checkpoint,
            preset,
            batch,
            iterations,
            warmup,
            dtst,
        } => commands::bench(
            &common,
            checkpoint.as_deref(),
            preset,
            batch,
            iterations,
            warmup,
            dtst,
        ),
        Command::DumpAttn {
            common,
            checkpoint,
            data,
            sequence,
            view,
            start,
        } => commands::dump_attn(&common, &checkpoint, &data, sequence, view, start),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
