use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pavecond::pipeline::{self, PipelineConfig};
use pavecond::synth;
use tracing_subscriber::EnvFilter;

/// Pavement condition classification pipeline.
#[derive(Debug, Parser)]
#[command(name = "pavecond", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Pipeline config (JSON). Relative paths inside it resolve against its
    /// directory. Without it, defaults are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the working directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Log as JSON lines on stderr.
    #[arg(long, global = true)]
    json_logs: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Crop section images out of the raster tiles.
    Extract,
    /// Compute condition scores and classes into labels.csv.
    Score,
    /// Join, split and oversample into manifest.json.
    Build,
    /// Train one model.
    Train {
        #[arg(long)]
        model_id: String,
    },
    /// Write class probabilities of a trained model for a split.
    Predict {
        #[arg(long)]
        model_id: String,
        /// train, validation, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Average model probabilities from interchange files.
    Ensemble {
        /// Output file [default: <workdir>/predictions/ensemble.test.csv]
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Confusion matrix, metrics summary and learning curves.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// [default: <workdir>/manifest.json]
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Training history files [default: every history under <workdir>/models]
        #[arg(long)]
        history: Vec<PathBuf>,
    },
    /// GeoJSON map of labeled and predicted section conditions.
    Report {
        #[arg(long)]
        predictions: PathBuf,
        /// [default: <workdir>/manifest.json]
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Textured section images plus labels.csv, ready for `build`.
    Textures {
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Raster tiles, centerlines, sections, PMIS records and pipeline.json
    /// in the given directory.
    Scenario {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 15)]
        sections_per_route: usize,
    },
}

fn init_logging(json: bool) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    if json {
        builder.json().init();
    } else {
        builder.init();
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &g.workdir {
        cfg.workdir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let manifest_or_default = |m: Option<PathBuf>| m.unwrap_or_else(|| cfg.manifest_path());
    match cli.command {
        Command::Extract => {
            let r = pipeline::cmd_extract(&cfg)?;
            println!("extracted {} section(s), {} failure(s)", r.written.len(), r.failures.len());
        }
        Command::Score => {
            let labels = pipeline::cmd_score(&cfg)?;
            println!("scored {} section(s)", labels.len());
        }
        Command::Build => {
            let m = pipeline::cmd_build(&cfg)?;
            println!(
                "manifest: {} train, {} test, {} validation, {} balanced fit",
                m.train.len(),
                m.test.len(),
                m.validation.len(),
                m.train_balanced.len()
            );
        }
        Command::Train { model_id } => {
            let h = pipeline::cmd_train(&cfg, &model_id)?;
            if let Some(last) = h.epochs.last() {
                println!(
                    "{model_id}: {} epoch(s), train loss {:.4}, train accuracy {:.4}",
                    h.len(),
                    last.train_loss,
                    last.train_acc
                );
            }
        }
        Command::Predict { model_id, split } => {
            let p = pipeline::cmd_predict(&cfg, &model_id, &split)?;
            println!("{}", cfg.prediction_path(&model_id, &split).display());
            println!("{} sample(s)", p.len());
        }
        Command::Ensemble { out, inputs } => {
            let out = out.unwrap_or_else(|| cfg.prediction_path("ensemble", "test"));
            let e = pipeline::cmd_ensemble(&cfg, &inputs, &out)?;
            println!("{}: {} model(s), {} sample(s)", out.display(), e.model_ids.len(), e.sample_ids.len());
        }
        Command::Evaluate {
            predictions,
            manifest,
            history,
        } => {
            let e = pipeline::cmd_evaluate(&cfg, &predictions, &manifest_or_default(manifest), &history)?;
            println!(
                "{}: accuracy {:.4}, weighted F1 {:.4}, macro F1 {:.4} ({})",
                e.model_id,
                e.summary.accuracy,
                e.summary.weighted_avg.f1,
                e.summary.macro_avg.f1,
                e.out_dir.display()
            );
        }
        Command::Report {
            predictions,
            manifest,
        } => {
            pipeline::cmd_report(&cfg, &predictions, &manifest_or_default(manifest))?;
            println!("{}", cfg.path(pipeline::REPORT_FILE).display());
        }
        Command::Synth(SynthCommand::Textures { samples, size }) => {
            if samples == 0 || size == 0 {
                bail!("samples and size must be positive");
            }
            let ds = synth::TextureDataset {
                samples,
                size,
                seed: cfg.seed,
            };
            let labels = synth::write_texture_dataset(&cfg.workdir, &ds)?;
            println!("wrote {} textured section(s) to {}", labels.len(), cfg.workdir.display());
        }
        Command::Synth(SynthCommand::Scenario {
            out,
            sections_per_route,
        }) => {
            let sc = synth::GeoScenario {
                sections_per_route,
                seed: cfg.seed,
                ..Default::default()
            };
            let files = synth::write_geo_scenario(&out, &sc)?;
            println!("{}", files.config.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_logging(cli.global.json_logs);
    run(cli)
}
