// SPDX-License-Identifier: Apache-2.0

//! `oblivinfer` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oblivinfer::attack::LayerSelector;
use oblivinfer::channel::Granularity;
use oblivinfer::ExecMode;

#[derive(Parser, Debug)]
#[command(name = "oblivinfer", version, about = "Access-pattern leakage of neural-network inference, and its defence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a target model and save its manifest and weight blob.
    Train(TrainArgs),
    /// Record one access trace per input.
    Trace(TraceArgs),
    /// Cross-validate the branch-feature classifier on recorded traces.
    Attack(AttackArgs),
    /// Check trace equivalence of oblivious execution and leakage of leaky execution.
    Verify(VerifyArgs),
    /// Time leaky, oblivious and traced inference.
    Bench(BenchArgs),
    /// Print the kernel manifest of a model.
    Manifest(ManifestArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Built-in model name (mlp, mlp-small, lenet, mixed) or a manifest JSON path.
    #[arg(long)]
    model: String,
    /// Weight blob; defaults to the manifest path with a `.bin` extension.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed for all randomness, including built-in model initialisation.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Give each kernel variant a single code page.
    #[arg(long)]
    compact_layout: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Architecture: `mlp` or `lenet`.
    #[arg(long)]
    model: String,
    /// Dataset root holding MNIST IDX or CIFAR-10 binary files.
    #[arg(long, env = "OBLIVINFER_DATA")]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// MLP layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    arch: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f32,
    #[arg(long, default_value_t = 0.9)]
    momentum: f32,
    /// Use only the first N training examples.
    #[arg(long)]
    limit: Option<usize>,
    /// Centre MNIST digits in 32x32 frames.
    #[arg(long)]
    pad32: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Replace existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, env = "OBLIVINFER_DATA")]
    dataset: Option<PathBuf>,
    /// Trace seeded uniform random inputs instead of dataset images.
    #[arg(long)]
    random: bool,
    /// Dataset split to draw inputs from (train or test).
    #[arg(long, default_value = "test")]
    split: String,
    /// Number of inputs.
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Index of the first dataset example.
    #[arg(long, default_value_t = 0)]
    offset: usize,
    #[arg(long, default_value = "leaky")]
    mode: ExecMode,
    #[arg(long, default_value = "page")]
    granularity: Granularity,
    #[arg(long)]
    pad32: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write a CSV rendering next to every trace.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Directory written by `trace` (profiling traces).
    #[arg(long)]
    traces: PathBuf,
    /// Directory of victim traces to score a classifier trained on all profiling traces.
    #[arg(long)]
    victims: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "last")]
    selector: Vec<LayerSelector>,
    /// Training-set sizes; defaults to all traces.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 9)]
    folds: usize,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG chart of accuracy against training size.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of random inputs.
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, hide = true)]
    inject_leaky_layer: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ManifestArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Trace(a) => commands::trace(a),
        Command::Attack(a) => commands::attack(a),
        Command::Verify(a) => commands::verify(a),
        Command::Bench(a) => commands::bench(a),
        Command::Manifest(a) => commands::manifest(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
