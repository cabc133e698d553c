use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use shield_cli::commands::{dispatch, Command, SplitChoice};
use shield_cli::config::{load_config, API_KEY_ENV};

#[derive(Parser)]
#[command(
    name = "shield",
    about = "Rationale-augmented hate speech classification pipeline",
    version
)]
struct Cli {
    /// TOML config file driving every command.
    #[arg(long, global = true, default_value = "shield.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Print per-dataset corpus statistics.
    Stats {
        /// Restrict to one configured dataset.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Extract rationale features for a dataset (cached).
    Extract {
        #[arg(long)]
        dataset: String,
    },
    /// Train the fused classifier and write a checkpoint.
    Train {
        #[arg(long)]
        dataset: String,
        /// Use a previously extracted features file instead of the client.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write an accuracy summary.
    Eval {
        #[arg(long)]
        dataset: String,
        /// Checkpoint directory (defaults to the train output location).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which part of the split to score.
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Score rationale alignment against human annotations.
    Align {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Run the one-shot LLM classification baseline.
    Baseline {
        #[arg(long)]
        dataset: String,
    },
    /// Render the HTML rationale-overlap report.
    Report {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output path (defaults into the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl From<SplitArg> for SplitChoice {
    fn from(arg: SplitArg) -> Self {
        match arg {
            SplitArg::Train => SplitChoice::Train,
            SplitArg::Val => SplitChoice::Val,
            SplitArg::Test => SplitChoice::Test,
            SplitArg::All => SplitChoice::All,
        }
    }
}

impl From<CliCommand> for Command {
    fn from(cli: CliCommand) -> Self {
        match cli {
            CliCommand::Stats { dataset } => Command::Stats { dataset },
            CliCommand::Extract { dataset } => Command::Extract { dataset },
            CliCommand::Train { dataset, features } => Command::Train { dataset, features },
            CliCommand::Eval {
                dataset,
                checkpoint,
                split,
                features,
            } => Command::Eval {
                dataset,
                checkpoint,
                split: split.into(),
                features,
            },
            CliCommand::Align { dataset, features } => Command::Align { dataset, features },
            CliCommand::Baseline { dataset } => Command::Baseline { dataset },
            CliCommand::Report {
                dataset,
                features,
                out,
            } => Command::Report {
                dataset,
                features,
                out,
            },
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let api_key = std::env::var(API_KEY_ENV).ok();
    let command: Command = cli.command.into();
    let outcome = load_config(&cli.config, api_key).and_then(|config| dispatch(&command, &config));
    if let Err(error) = outcome {
        eprintln!("{}", error.render_line());
        std::process::exit(error.exit_code());
    }
}
