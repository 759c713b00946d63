use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use con2::commands::{self, ScoreOptions};
use con2::config::{preset, presets};
use con2::{CliError, CliResult};
use con2_core::image::ContextAugmentation;
use con2_core::scoring::ScoreVariant;

#[derive(Parser)]
#[command(name = "con2", version, about = "Context-contrastive anomaly detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the checkpoint and loss history.
    Train {
        config: PathBuf,
        /// Run directory (default: $CON2_ARTIFACT_ROOT/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Fit score models on the train split and score the test split.
    Score {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// nnd or lh; every configured variant when omitted.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<ScoreVariant>,
        /// Number of test-time augmentations (even).
        #[arg(long = "A", short = 'A')]
        test_time_augmentations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// AUROC per score file plus the context silhouette.
    Eval {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score files; the run's configured variants when omitted.
        #[arg(long = "scores")]
        scores: Vec<PathBuf>,
    },
    /// Check distinctiveness and alignment of a context augmentation.
    ValidateContext {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// invert, vflip or equalize; the training augmentation when omitted.
        #[arg(long, value_parser = parse_augmentation)]
        augmentation: Option<ContextAugmentation>,
        #[arg(long, default_value_t = 128)]
        samples: usize,
    },
    /// Time per-query scoring against training-set size.
    BenchScores {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-component PCA of test (and some train) samples in both contexts.
    ExportEmbeddings {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a shipped preset as TOML, or list them.
    Preset { name: Option<String> },
}

fn parse_variant(s: &str) -> Result<ScoreVariant, String> {
    ScoreVariant::parse(s).map_err(|e| e.to_string())
}

fn parse_augmentation(s: &str) -> Result<ContextAugmentation, String> {
    ContextAugmentation::parse(s).ok_or_else(|| format!("unknown augmentation `{s}` (expected invert, vflip or equalize)"))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, out, quiet } => commands::cmd_train(&config, out.as_deref(), quiet).map(drop),
        Command::Score { config, out, variant, test_time_augmentations, seed } => {
            let options = ScoreOptions { variant, test_time_augmentations, seed };
            commands::cmd_score(&config, out.as_deref(), &options).map(drop)
        }
        Command::Eval { config, out, scores } => commands::cmd_eval(&config, out.as_deref(), &scores).map(drop),
        Command::ValidateContext { config, out, augmentation, samples } => {
            commands::cmd_validate_context(&config, out.as_deref(), augmentation, samples).map(drop)
        }
        Command::BenchScores { config, out } => commands::cmd_bench_scores(&config, out.as_deref()).map(drop),
        Command::ExportEmbeddings { config, out } => commands::cmd_export_embeddings(&config, out.as_deref()).map(drop),
        Command::Preset { name: None } => {
            presets().iter().for_each(|p| println!("{}", p.name));
            Ok(())
        }
        Command::Preset { name: Some(name) } => {
            let p = preset(&name).ok_or_else(|| CliError::Config(format!("no preset named `{name}`")))?;
            print!("{}", p.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
