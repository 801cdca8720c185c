use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use groupcl_cli::{schema, CliError, Overrides, Pipeline, RunConfig, Stage};

#[derive(Parser)]
#[command(
    name = "groupcl",
    version,
    about = "Group-wise contrastive learning for dialogue generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set train.max_epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate the corpus and build the vocabulary.
    Prepare(RunArgs),
    /// Build BM25 indexes over contexts and responses.
    BuildIndex(RunArgs),
    /// Mine contrastive groups for the train and valid splits.
    Sample(RunArgs),
    /// MLE pretraining; the result is also the frozen reference.
    Pretrain(RunArgs),
    /// Contrastive fine-tuning from the pretrained checkpoint.
    Train(RunArgs),
    /// Decode the test split with the pretrained and fine-tuned models.
    Generate(RunArgs),
    /// Score generated responses.
    Evaluate(RunArgs),
    /// Fine-tune and score the full objective and its six ablations.
    Ablate(RunArgs),
    /// Run prepare through evaluate.
    All(RunArgs),
    /// Print the resolved configuration.
    ShowConfig(RunArgs),
    /// Print every configuration key with its default.
    Schema,
}

fn pipeline(args: &RunArgs) -> Result<Pipeline, CliError> {
    let overrides = Overrides {
        set: args.set.clone(),
        seed: args.seed,
        workers: args.workers,
    };
    Ok(Pipeline::new(RunConfig::load(&args.config, &overrides)?))
}

fn run(command: Command) -> Result<(), CliError> {
    let (stage, args) = match command {
        Command::Schema => {
            print!("{}", schema());
            return Ok(());
        }
        Command::ShowConfig(args) => {
            let p = pipeline(&args)?;
            print!("{}", p.config().to_toml());
            return Ok(());
        }
        Command::All(args) => return pipeline(&args)?.run_all(),
        Command::Prepare(a) => (Stage::Prepare, a),
        Command::BuildIndex(a) => (Stage::BuildIndex, a),
        Command::Sample(a) => (Stage::Sample, a),
        Command::Pretrain(a) => (Stage::Pretrain, a),
        Command::Train(a) => (Stage::Train, a),
        Command::Generate(a) => (Stage::Generate, a),
        Command::Evaluate(a) => (Stage::Evaluate, a),
        Command::Ablate(a) => (Stage::Ablate, a),
    };
    pipeline(&args)?.run(stage)
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
