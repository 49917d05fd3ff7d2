//! `panoact`: the pipeline from synthetic data to the debrief service.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panoact::annotate::TrackMethod;

use commands::{PredSource, SplitSel, TrackArgs};
use config::Config;
use error::{invalid, CliResult};

#[derive(Parser)]
#[command(name = "panoact", version, about = "Panoramic action detection pipeline")]
struct Cli {
    /// JSON configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set detector.epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N --set detector.seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detector on the training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prune, calibrate and quantize a trained detector.
    Optimize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Quantize without pruning.
        #[arg(long)]
        no_prune: bool,
    },
    /// Run a (float or quantized) detector and write inference JSON per video.
    Detect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitSel,
    },
    /// Frame and video mAP of a model or of stored predictions.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        model: Option<PathBuf>,
        /// Inference JSON files, store directories or annotation CSVs.
        #[arg(long, num_args = 1..)]
        predictions: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitSel,
        /// With --predictions: ignore ground truth before this frame (use
        /// clip_len - 1 for detector output).
        #[arg(long, default_value_t = 0)]
        first_frame: usize,
        /// Directory for report.json, actions.csv and conditions.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Annotation tools.
    #[command(subcommand)]
    Annotate(AnnotateCmd),
    /// Add inference JSON or annotation CSV files to a detection store.
    Ingest {
        #[arg(long)]
        store: PathBuf,
        /// Frame rate given to CSV input.
        #[arg(long, default_value_t = 10.0)]
        fps: f64,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Serve a detection store over HTTP.
    Serve {
        #[arg(long)]
        store: PathBuf,
        /// Dataset directory whose frames are served for overlays.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides debrief.bind.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Baseline / +NTC / +NTCQ / +NTCQP comparison on the test split.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as JSON.
    PrintConfig,
}

#[derive(Subcommand)]
enum AnnotateCmd {
    /// Propagate a box between two manually boxed frames and append it to a CSV.
    Track {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        video: String,
        #[arg(long)]
        action: String,
        /// FRAME:x1,y1,x2,y2 in normalised coordinates.
        #[arg(long, value_parser = commands::parse_keyed_box)]
        start: (usize, panoact::bbox::BBox),
        #[arg(long, value_parser = commands::parse_keyed_box)]
        end: (usize, panoact::bbox::BBox),
        /// interp or ncc; overrides annotate.method.
        #[arg(long)]
        method: Option<TrackMethod>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check annotations against the dataset's classes.
    Validate {
        #[arg(long)]
        data: PathBuf,
        /// CSV to check instead of the dataset's own annotations.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Inter-annotator agreement of two CSV files.
    Agree {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.extend([format!("seed={s}"), format!("detector.seed={s}")]);
    }
    let cfg = Config::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Gen { out } => commands::gen(&cfg, &out),
        Command::Train { data, out } => commands::train(&cfg, &data, &out),
        Command::Optimize {
            data,
            model,
            out,
            no_prune,
        } => commands::optimize(&cfg, &data, &model, &out, no_prune),
        Command::Detect { data, model, store, split } => commands::detect(&cfg, &data, &model, &store, split),
        Command::Evaluate {
            data,
            model,
            predictions,
            split,
            first_frame,
            out,
        } => {
            let source = match model {
                Some(m) => PredSource::Model(m),
                None => PredSource::Files(predictions),
            };
            commands::evaluate(&cfg, &data, &source, split, first_frame, out.as_deref())
        }
        Command::Annotate(AnnotateCmd::Track {
            data,
            video,
            action,
            start,
            end,
            method,
            out,
        }) => commands::annotate_track(
            &cfg,
            &data,
            TrackArgs {
                video: &video,
                action: &action,
                start,
                end,
                method,
                out: &out,
            },
        ),
        Command::Annotate(AnnotateCmd::Validate { data, csv }) => commands::annotate_validate(&data, csv.as_deref()),
        Command::Annotate(AnnotateCmd::Agree { a, b }) => commands::annotate_agree(&a, &b),
        Command::Ingest { store, fps, files } => {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(invalid(format!("fps {fps} must be positive")));
            }
            commands::ingest(&store, fps, &files)
        }
        Command::Serve { store, data, bind } => commands::serve(&cfg, &store, data.as_deref(), bind.as_deref()),
        Command::Bench { data, model, out } => commands::bench(&cfg, &data, &model, out.as_deref()),
        Command::PrintConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serialises"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", invalid(e.to_string().trim_end()).to_json());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
