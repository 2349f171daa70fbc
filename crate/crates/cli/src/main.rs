//! `segword` — whole-word segmental recognition from the command line.
//!
//! Single binary, five pipeline stages plus a kernel benchmark:
//! `gen → pretrain → train → decode → eval`, with `bench` standing alone.
//! Commands never mutate their inputs; exit codes are fixed per failure
//! class (see `commands`).

use clap::{Parser, Subcommand};

use segword_cli::commands::{
    cmd_bench, cmd_decode, cmd_eval, cmd_gen, cmd_pretrain, cmd_train, BenchArgs, DecodeArgs,
    EvalArgs, GenArgs, PretrainArgs, TrainArgs,
};

// Gives `bench` real numbers for its allocation probe.
#[global_allocator]
static ALLOC: segword::CountingAllocator = segword::CountingAllocator;

#[derive(Parser)]
#[command(name = "segword", version, about = "Whole-word segmental sequence prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic whole-word dataset.
    Gen(GenArgs),
    /// Pre-train the acoustic/written word embedder.
    Pretrain(PretrainArgs),
    /// Train the segmental recognizer.
    Train(TrainArgs),
    /// Decode a dataset with a trained model.
    Decode(DecodeArgs),
    /// Score hypothesis transcripts against references.
    Eval(EvalArgs),
    /// Time the DP kernels over an input-length grid.
    Bench(BenchArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Train(args) => cmd_train(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(e) = result {
        eprintln!("segword: {}", e.message);
        std::process::exit(e.code);
    }
}
