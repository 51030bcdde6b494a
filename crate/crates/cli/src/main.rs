//! `drought`: prepare, train, evaluate and explain a drought-stress classifier.
//!
//! Every subcommand reads the same config file and writes its artifacts under
//! the configured output directory. Failures print a single line
//! `error: kind=<Kind> message=<text>` to stderr and exit with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drought_core::config::RunConfig;
use drought_core::error::{Error, Result};
use drought_core::ingest::Partition;
use drought_core::pipeline;
use drought_core::synth::{generate_dataset, SynthSpec};
use drought_core::Label;

#[derive(Parser, Debug)]
#[command(
    name = "drought",
    version,
    about = "Drought stress classification of aerial crop patches"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Run configuration (`section.key = value` lines). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; overrides `out` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for splitting, shuffling, augmentation and initialization.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut annotated boxes into patches and write the train/val/test manifest.
    Prepare,
    /// Train the classifier on the prepared manifest.
    Train,
    /// Score the test partition and write metrics and the comparison table.
    Evaluate {
        /// Model checkpoint; defaults to `<out>/checkpoints/best.ntar`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Score a stored prediction log instead of running the model.
        #[arg(long, value_name = "PATH", conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
    },
    /// Write a saliency map, overlay and heatmap for one image.
    Explain {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Image to explain; defaults to the first test patch.
        #[arg(long, value_name = "PATH")]
        image: Option<PathBuf>,
    },
    /// Rebuild the comparison table and charts from `<out>/report.txt`.
    Compare,
    /// Generate a synthetic annotated corpus (scenes, XML, CSV) into DIR.
    Synthesize {
        dir: PathBuf,
        #[arg(long, default_value_t = SynthSpec::default().n_per_class)]
        n_per_class: usize,
        #[arg(long, default_value_t = SynthSpec::default().patch_size)]
        patch_size: usize,
        #[arg(long, default_value_t = SynthSpec::default().boxes_per_scene)]
        boxes_per_scene: usize,
    },
}

fn absolute(p: &Path) -> PathBuf {
    let joined = std::env::current_dir()
        .map(|cwd| cwd.join(p))
        .unwrap_or_else(|_| p.to_path_buf());
    drought_core::ingest::normalize_path(&joined)
}

fn load_config(args: &GlobalArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::parse("", &absolute(Path::new(".")))?,
    };
    if let Some(out) = &args.out {
        config.out = absolute(out);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synthesize {
        dir,
        n_per_class,
        patch_size,
        boxes_per_scene,
    } = &cli.command
    {
        let defaults = SynthSpec::default();
        let spec = SynthSpec {
            n_per_class: *n_per_class,
            patch_size: *patch_size,
            boxes_per_scene: *boxes_per_scene,
            seed: cli.global.seed.unwrap_or(defaults.seed),
            ..defaults
        };
        let scenes = generate_dataset(&spec, dir)?;
        let boxes: usize = scenes.iter().map(|s| s.boxes.len()).sum();
        println!("scenes={} boxes={} dir={}", scenes.len(), boxes, dir.display());
        return Ok(());
    }

    let config = load_config(&cli.global)?;
    match cli.command {
        Command::Prepare => {
            let summary = pipeline::cmd_prepare(&config)?;
            for partition in [Partition::Train, Partition::Val, Partition::Test] {
                for label in Label::ALL {
                    println!(
                        "{}\t{}\t{}",
                        partition.as_str(),
                        label,
                        summary.counts.get(partition, label)
                    );
                }
            }
            if summary.skipped_degenerate > 0 {
                println!("skipped_degenerate\t{}", summary.skipped_degenerate);
            }
        }
        Command::Train => {
            let summary = pipeline::cmd_train(&config)?;
            let best = &summary.history.records[summary.history.best_epoch];
            println!(
                "trainable_params={} best_epoch={} val_loss={:.6} val_acc={:.6} checkpoint={}",
                summary.trainable_params,
                summary.history.best_epoch,
                best.val_loss,
                best.val_acc,
                summary.checkpoint.display()
            );
        }
        Command::Evaluate {
            checkpoint,
            predictions,
        } => {
            let summary = pipeline::cmd_evaluate(&config, checkpoint.as_deref(), predictions.as_deref())?;
            if let Some(p) = summary.partition {
                println!("partition = {}", p.as_str());
            }
            print!("{}", summary.report.to_text());
        }
        Command::Explain { checkpoint, image } => {
            let summary = pipeline::cmd_explain(&config, checkpoint.as_deref(), image.as_deref())?;
            println!(
                "image={} probability={:.6} saliency={} overlay={} gradcam={}",
                summary.image.display(),
                summary.probability,
                summary.composite.display(),
                summary.overlay.display(),
                summary.gradcam.display()
            );
            if summary.constant_map {
                println!("warning: saliency map is constant");
            }
        }
        Command::Compare => {
            pipeline::cmd_compare(&config)?;
            println!("{}", config.out.join("comparison.tsv").display());
        }
        Command::Synthesize { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn error_line(e: &Error) -> String {
    let message = e.to_string().replace(['\n', '\r'], " ");
    format!("error: kind={} message={message}", e.kind())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
