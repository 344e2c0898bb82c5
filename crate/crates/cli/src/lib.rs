//! Command line front end: run configuration, experiment records and the
//! five pipeline commands.

pub mod commands;
pub mod config;
pub mod record;

use clap::{Parser, Subcommand};
use haoi_core::Result;

use commands::{EvaluateArgs, GenDataArgs, RunTaskArgs, TrainLmArgs, TrainVqvaeArgs};

#[derive(Debug, Parser)]
#[command(name = "haoi", version, about = "Hand/articulated-object interaction pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic interaction dataset with train/val/test splits
    GenData(GenDataArgs),
    /// Train the multi-stage VQ-VAE grasp tokenizer on the train split
    TrainVqvae(TrainVqvaeArgs),
    /// Train the manipulation language model (stage 1 or 2)
    TrainLm(TrainLmArgs),
    /// Run generation, prediction or interpolation over a dataset split
    RunTask(RunTaskArgs),
    /// Score generated sequences against real ones
    Evaluate(EvaluateArgs),
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::TrainVqvae(a) => commands::train_vqvae_cmd(a),
        Command::TrainLm(a) => commands::train_lm_cmd(a),
        Command::RunTask(a) => commands::run_task_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
    }
}
