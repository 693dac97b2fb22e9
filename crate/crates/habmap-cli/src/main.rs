//! `habmap` — habitat classification from multi-channel rasters with
//! sparse point annotations. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numerical failure.

use std::path::PathBuf;

use clap::{error::ErrorKind, Parser, Subcommand, ValueEnum};

use habmap_cli::commands;
use habmap_cli::config::{
    apply_model_row, model_row, row_names, ModelRow, Pretraining, RunConfig, ENV_CONFIG,
};
use habmap_cli::error::{CliError, EXIT_USAGE};

#[derive(Parser)]
#[command(
    name = "habmap",
    version,
    about = "Habitat classification and mapping from multi-channel rasters \
             with sparse pixel annotations",
    after_help = "Configuration comes from a key = value file (--config, or the \
                  HABMAP_CONFIG environment variable), overridden by --set KEY=VALUE. \
                  Stage outputs are append-only; pass --force to overwrite."
)]
struct Cli {
    /// Config file path (default: $HABMAP_CONFIG if set).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set epochs=20 (repeatable).
    #[arg(long, global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (config key `output_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base random seed (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overwrite existing stage artifacts.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PretrainMode {
    /// Unsupervised clustering pretraining on unlabeled patches.
    Iic,
    /// Supervised pretraining on coarse labels.
    Coarse,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark dataset (raster + annotations).
    Synth,
    /// Standardize the raster and extract labeled patches.
    Ingest,
    /// Write the holdout split and the cross-validation folds.
    Split,
    /// Train the center-pixel random forest baseline.
    TrainRf,
    /// Pretrain the convolution stack.
    Pretrain {
        #[arg(long, value_enum)]
        mode: PretrainMode,
    },
    /// Train the center-pixel network on the train split.
    TrainCnn {
        /// Freeze the pretrained convolution stack (train the head only).
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        freeze_conv: Option<bool>,
        /// Random center-crop augmentation during training.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        crop_augment: Option<bool>,
    },
    /// Distill the trained network into a student with pseudo-labels.
    Distill,
    /// Evaluate trained models on the test split (or per fold with --cv).
    Evaluate {
        /// Test-time augmentation rounds (1 = none).
        #[arg(long)]
        tta: Option<usize>,
        /// Forest weight in the ensemble, in [0, 1].
        #[arg(long)]
        ensemble_alpha: Option<f64>,
        /// Retrain and evaluate per cross-validation fold.
        #[arg(long)]
        cv: bool,
    },
    /// Classify the whole raster into class/probability/confidence maps.
    PredictMap,
    /// Run the full stage chain for one named model-grid row.
    Pipeline {
        /// Row name, e.g. base, pt, pt-crop, ns, upt, or rf.
        #[arg(long, value_name = "ROW")]
        attributes: String,
    },
    /// Render PR/ROC curves and the confusion matrix of a metrics report.
    Plot {
        /// Metrics JSON to render (default: newest standard report).
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(ENV_CONFIG).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| {
                CliError::data(format!("cannot read config {}: {e}", p.display()))
            })?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        cfg.apply(key.trim(), value.trim())?;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = resolve_config(&cli)?;
    let force = cli.force;
    match cli.command {
        Command::Synth => {
            cfg.validate()?;
            commands::cmd_synth(&cfg, force)
        }
        Command::Ingest => {
            cfg.validate()?;
            commands::cmd_ingest(&cfg, force)
        }
        Command::Split => {
            cfg.validate()?;
            commands::cmd_split(&cfg, force)
        }
        Command::TrainRf => {
            cfg.validate()?;
            commands::cmd_train_rf(&cfg, force)
        }
        Command::Pretrain { mode } => {
            cfg.pretraining = match mode {
                PretrainMode::Iic => Pretraining::Unsupervised,
                PretrainMode::Coarse => Pretraining::Coarse,
            };
            cfg.validate()?;
            commands::cmd_pretrain(&cfg, force)
        }
        Command::TrainCnn { freeze_conv, crop_augment } => {
            if let Some(v) = freeze_conv {
                cfg.freeze_conv = v;
            }
            if let Some(v) = crop_augment {
                cfg.crop_augment = v;
            }
            cfg.validate()?;
            commands::cmd_train_cnn(&cfg, force)
        }
        Command::Distill => {
            cfg.validate()?;
            commands::cmd_distill(&cfg, force)
        }
        Command::Evaluate { tta, ensemble_alpha, cv } => {
            if let Some(t) = tta {
                cfg.tta_rounds = t;
            }
            if let Some(a) = ensemble_alpha {
                cfg.alpha = a;
            }
            cfg.validate()?;
            commands::cmd_evaluate(&cfg, force, cv)
        }
        Command::PredictMap => {
            cfg.validate()?;
            commands::cmd_predict_map(&cfg, force)
        }
        Command::Pipeline { attributes } => {
            let row = model_row(&attributes).ok_or_else(|| {
                CliError::usage(format!(
                    "unknown model row {attributes:?}; expected one of: {}",
                    row_names().join(", ")
                ))
            })?;
            apply_model_row(&mut cfg, row);
            cfg.validate()?;
            match row {
                ModelRow::Rf => commands::cmd_pipeline_rf(&cfg, force),
                ModelRow::Cnn { .. } => commands::cmd_pipeline(&cfg, force),
            }
        }
        Command::Plot { report } => {
            cfg.validate()?;
            commands::cmd_plot(&cfg, report, force)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit 2; keep 1 for usage problems, 0 for --help.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
