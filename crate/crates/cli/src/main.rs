mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rds_core::error::Error;

/// Saliency pipeline: objectness data preparation, deep-supervision
/// training, prediction, evaluation, and topology comparison.
#[derive(Parser)]
#[command(name = "rds", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CoordConvention {
    /// [x0, x1) x [y0, y1), 0-based (the native convention).
    ZeroHalfOpen,
    /// 1-based inclusive corners, normalized at ingestion.
    OneInclusive,
}

#[derive(Subcommand)]
enum Command {
    /// Derive box-union ground truths, compute the foreground fraction,
    /// and keep records strictly below the threshold.
    PrepareObjectness {
        #[arg(long)]
        manifest_in: PathBuf,
        #[arg(long)]
        manifest_out: PathBuf,
        /// Directory for derived ground-truth PGMs (default: "gt" next
        /// to the output manifest).
        #[arg(long)]
        gt_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0.8)]
        alpha_threshold: f64,
        #[arg(long, value_enum, default_value_t = CoordConvention::ZeroHalfOpen)]
        coords: CoordConvention,
        /// Open each image and skip records whose raster is unreadable
        /// or disagrees with the manifest extents.
        #[arg(long)]
        check_images: bool,
    },
    /// Rewrite multi-valued ground truths keeping only the most salient
    /// object (the highest pixel level).
    ConvertPascalSod {
        #[arg(long)]
        manifest_in: PathBuf,
        #[arg(long)]
        manifest_out: PathBuf,
        #[arg(long)]
        gt_dir: Option<PathBuf>,
    },
    /// Train (optionally objectness-pretrained) and write checkpoints
    /// plus loss traces.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pixel-annotated training manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Box-derived manifest; when given, one pre-training epoch runs
        /// first at the fixed objectness rate.
        #[arg(long)]
        objectness_manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override config values, e.g. --set train.epochs=2
        #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
        overrides: Vec<String>,
    },
    /// Write one 8-bit PGM saliency map per manifest image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Refine each map with the dense CRF before writing.
        #[arg(long)]
        crf: bool,
        #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
        overrides: Vec<String>,
    },
    /// Score predictions against ground truths and write report CSVs.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Manifest naming images and their ground truths.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of predicted maps named <image-stem>.pgm.
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Dataset name for the summary row (default: manifest stem).
        #[arg(long)]
        dataset: Option<String>,
        /// Also write the report under the other aggregation.
        #[arg(long)]
        verbose: bool,
        #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
        overrides: Vec<String>,
    },
    /// Print neighbor-only and dense connection-parameter tables for a
    /// given level count and channel width.
    CompareTopology {
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[arg(long, default_value_t = 32)]
        k: usize,
        /// Emit JSON summaries instead of tables.
        #[arg(long)]
        json: bool,
    },
    /// Render report CSVs as an SVG precision/recall chart.
    PlotPr {
        /// Report CSV (repeatable).
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
        /// Legend label per report (defaults to the file stem).
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "precision / recall")]
        title: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::PrepareObjectness {
            manifest_in,
            manifest_out,
            gt_dir,
            alpha_threshold,
            coords,
            check_images,
        } => commands::prepare::run(
            &manifest_in,
            &manifest_out,
            gt_dir.as_deref(),
            alpha_threshold,
            coords,
            check_images,
        ),
        Command::ConvertPascalSod {
            manifest_in,
            manifest_out,
            gt_dir,
        } => commands::convert::run(&manifest_in, &manifest_out, gt_dir.as_deref()),
        Command::Train {
            config,
            manifest,
            objectness_manifest,
            out_dir,
            overrides,
        } => commands::train_cmd::run(
            config.as_deref(),
            &manifest,
            objectness_manifest.as_deref(),
            &out_dir,
            &overrides,
        ),
        Command::Predict {
            checkpoint,
            manifest,
            out_dir,
            crf,
            overrides,
        } => commands::predict::run(&checkpoint, &manifest, &out_dir, crf, &overrides),
        Command::Eval {
            config,
            manifest,
            pred_dir,
            out_dir,
            dataset,
            verbose,
            overrides,
        } => commands::eval_cmd::run(
            config.as_deref(),
            &manifest,
            &pred_dir,
            &out_dir,
            dataset.as_deref(),
            verbose,
            &overrides,
        ),
        Command::CompareTopology { levels, k, json } => commands::topology::run(levels, k, json),
        Command::PlotPr {
            reports,
            labels,
            out,
            title,
        } => commands::plot::run(&reports, &labels, &out, &title),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error: {kind}: {e}");
            ExitCode::from(code)
        }
    }
}

/// Exit codes: 2 usage, 3 data, 4 numeric failure.
fn classify(e: &Error) -> (&'static str, u8) {
    if e.is_numeric() {
        return ("numeric", 4);
    }
    match e {
        Error::InvalidArgument(_) => ("usage", 2),
        _ => ("data", 3),
    }
}
