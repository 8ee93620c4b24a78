use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use specmae::commands::{
    cmd_ablate, cmd_eval, cmd_group, cmd_ingest, cmd_mask_preview, cmd_report, cmd_synth,
    cmd_train, Ctx,
};
use specmae::config::RunConfig;
use specmae::exit_code;
use specmae_core::Result;

#[derive(Parser)]
#[command(
    name = "specmae",
    version,
    about = "Grouped masked-autoencoder pipeline for hyperspectral cubes"
)]
struct Cli {
    /// JSON run configuration; built-in defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override train.seed for this invocation
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory holding the dataset and all artifacts
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic planted-group dataset
    Synth,
    /// Sanitize, tile, and index the scene files listed in data.paths
    Ingest,
    /// Compute channel grouping(s) and the silhouette comparison table
    Group,
    /// Sample one mask plan and save it without training
    MaskPreview,
    /// Train the grouped masked autoencoder
    Train {
        /// Continue from the run directory's checkpoint
        #[arg(long)]
        resume: bool,
        /// Stop at this epoch boundary while schedules still span
        /// train.epochs (emulates interruption; finish later with --resume)
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Score a trained checkpoint on the held-out split
    Eval,
    /// Train/evaluate along one axis and emit its comparison table
    Ablate {
        /// One of: mask_ratio, num_groups, grouping_strategy, loss_combo
        #[arg(long)]
        axis: String,
    },
    /// Summarize the run directory's artifacts into report.json
    Report,
}

fn run(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    std::fs::create_dir_all(&cli.out)?;
    let ctx = Ctx::new(config, cli.out.clone(), cli.seed);
    match &cli.cmd {
        Cmd::Synth => cmd_synth(&ctx),
        Cmd::Ingest => cmd_ingest(&ctx),
        Cmd::Group => cmd_group(&ctx),
        Cmd::MaskPreview => cmd_mask_preview(&ctx),
        Cmd::Train { resume, stop_after } => cmd_train(&ctx, *resume, *stop_after),
        Cmd::Eval => cmd_eval(&ctx),
        Cmd::Ablate { axis } => cmd_ablate(&ctx, axis),
        Cmd::Report => cmd_report(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
