//! `gspt` command-line entry point.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gspt::GsptError;

#[derive(Debug, Parser)]
#[command(name = "gspt", version, about = "Graph sequence pretraining on random-walk contexts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Rayon worker threads; all cores when omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Class-node initialization for in-context evaluation; both when omitted.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Fraction of partitions used for pretraining.
    #[arg(long, global = true)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Void,
    Desc,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Partition a dataset graph into blocks of about `partition_size` nodes.
    Partition(Common),
    /// Masked-reconstruction pretraining of the node-track model.
    Pretrain(Common),
    /// In-context few-shot node classification with a pretrained checkpoint.
    IclEval(Common),
    /// Masked pretraining of the link-track model.
    LinkPretrain(Common),
    /// Fine-tune a link model (or a fresh one) on a dataset's edge split.
    LinkFinetune(Common),
    /// Re-evaluate a fine-tuned link model on its saved split.
    LinkEval(Common),
    /// Generate a synthetic stochastic-block-model dataset.
    Synth(Common),
    /// Negative-sampling ablation on the synthetic family.
    Ablation(Common),
    /// Pretraining-fraction scaling report on the synthetic family.
    ScalingReport(Common),
}

fn exit_code(e: &GsptError) -> u8 {
    match e {
        GsptError::Config(_) => 2,
        GsptError::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Partition(c) => ("partition", c),
        Command::Pretrain(c) => ("pretrain", c),
        Command::IclEval(c) => ("icl-eval", c),
        Command::LinkPretrain(c) => ("link-pretrain", c),
        Command::LinkFinetune(c) => ("link-finetune", c),
        Command::LinkEval(c) => ("link-eval", c),
        Command::Synth(c) => ("synth", c),
        Command::Ablation(c) => ("ablation", c),
        Command::ScalingReport(c) => ("scaling-report", c),
    };
    match commands::run(name, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
