use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uvnet_pipeline::commands::{self, StainTarget};
use uvnet_pipeline::{
    InferConfig, PipelineConfig, PipelineError, Precision, StainReference, OUTPUT_DIR_ENV,
};

/// Mitosis detection with UV-Net on image patches.
#[derive(Parser)]
#[command(name = "uvnet", version)]
struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Numeric precision for training and inference.
    #[arg(long, global = true, value_enum)]
    precision: Option<Precision>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic patch dataset with box annotations.
    Synth {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_mitoses: Option<usize>,
        #[arg(long)]
        max_hard_negatives: Option<usize>,
        #[arg(long)]
        min_separation: Option<f64>,
    },
    /// Macenko-normalize every patch of a manifest into a new dataset.
    StainNormalize {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
        /// Reference stain JSON (6-number column-major array, or an object
        /// with `stain_matrix` and `max_concentrations`).
        #[arg(long, conflicts_with = "target_image")]
        reference: Option<PathBuf>,
        /// Use this image's estimated stains as the target instead.
        #[arg(long)]
        target_image: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        i0: Option<f64>,
    },
    /// Validate a manifest and write Gaussian heatmap targets.
    MakeTargets {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        truncation_radius: Option<f64>,
    },
    /// Split a target set and train a model.
    Train {
        /// `targets.json` written by make-targets.
        #[arg(long)]
        targets: PathBuf,
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Run a checkpoint over a manifest, detect, and evaluate.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
        #[command(flatten)]
        post: PostFlags,
        /// Skip heatmap and overlay PNGs.
        #[arg(long)]
        no_images: bool,
    },
    /// Evaluate an existing detections.json against a manifest.
    Evaluate {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Summarize a run directory into report.txt.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    huber_delta: Option<f64>,
    #[arg(long)]
    no_hflip: bool,
    #[arg(long)]
    no_vflip: bool,
    #[arg(long)]
    scale_min: Option<f64>,
    #[arg(long)]
    scale_max: Option<f64>,
    /// Seed for shuffling and augmentation.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    base_f: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Seed for weight initialization.
    #[arg(long)]
    model_seed: Option<u64>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args)]
struct PostFlags {
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    otsu_bins: Option<usize>,
    #[arg(long)]
    median_window: Option<usize>,
    #[arg(long)]
    min_area: Option<usize>,
    /// Watershed marker separation; defaults to the checkpoint's Gaussian σ.
    #[arg(long)]
    min_separation: Option<f64>,
    /// Lower bound on the Otsu threshold.
    #[arg(long)]
    min_threshold: Option<f64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_train_flags(cfg: &mut PipelineConfig, f: TrainFlags) {
    let t = &mut cfg.train;
    set(&mut t.epochs, f.epochs);
    set(&mut t.batch_size, f.batch_size);
    set(&mut t.adam.learning_rate, f.lr);
    set(&mut t.adam.beta1, f.beta1);
    set(&mut t.adam.beta2, f.beta2);
    set(&mut t.adam.epsilon, f.epsilon);
    set(&mut t.huber.delta, f.huber_delta);
    t.augmentation.hflip &= !f.no_hflip;
    t.augmentation.vflip &= !f.no_vflip;
    set(&mut t.augmentation.scale_range.0, f.scale_min);
    set(&mut t.augmentation.scale_range.1, f.scale_max);
    set(&mut t.seed, f.seed);
    set(&mut cfg.model.base_f, f.base_f);
    set(&mut cfg.model.depth, f.depth);
    set(&mut cfg.model.seed, f.model_seed);
    set(&mut cfg.split.train, f.train_frac);
    set(&mut cfg.split.val, f.val_frac);
    set(&mut cfg.split.test, f.test_frac);
    set(&mut cfg.split.seed, f.split_seed);
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).unwrap_or_default());
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = PipelineConfig::load_or_default(cli.config.as_deref())?;
    set(&mut cfg.precision, cli.precision);
    match cli.command {
        Command::Synth {
            out,
            count,
            size,
            seed,
            max_mitoses,
            max_hard_negatives,
            min_separation,
        } => {
            let s = &mut cfg.synth;
            set(&mut s.count, count);
            set(&mut s.size, size);
            set(&mut s.seed, seed);
            set(&mut s.max_mitoses, max_mitoses);
            set(&mut s.max_hard_negatives, max_hard_negatives);
            set(&mut s.min_separation, min_separation);
            let m = commands::synth(&cfg, &out.out)?;
            eprintln!("wrote {} patches to {}", m.len(), out.out.display());
        }
        Command::StainNormalize {
            manifest,
            out,
            reference,
            target_image,
            alpha,
            beta,
            i0,
        } => {
            set(&mut cfg.stain.alpha, alpha);
            set(&mut cfg.stain.beta, beta);
            set(&mut cfg.stain.i0, i0);
            let target = match (&reference, &target_image) {
                (_, Some(img)) => StainTarget::Image(img),
                (Some(r), None) => StainTarget::Reference(StainReference::load(r)?),
                (None, None) => StainTarget::Reference(StainReference::default()),
            };
            let s = commands::stain_normalize(&manifest, target, &cfg.stain, &out.out)?;
            eprintln!(
                "normalized {} patches, {} copied unchanged (see stain_report.json)",
                s.normalized,
                s.skipped.len()
            );
        }
        Command::MakeTargets {
            manifest,
            out,
            sigma,
            truncation_radius,
        } => {
            if let Some(s) = sigma {
                cfg.gaussian.sigma = s;
                cfg.gaussian.truncation_radius = 3.0 * s;
            }
            set(&mut cfg.gaussian.truncation_radius, truncation_radius);
            let set = commands::make_targets(&manifest, &cfg.gaussian, &out.out)?;
            eprintln!("wrote targets for {} patches", set.manifest.len());
        }
        Command::Train {
            targets,
            out,
            flags,
        } => {
            apply_train_flags(&mut cfg, flags);
            let summary = commands::train(&targets, &cfg, &out.out, |r| match r.val_loss {
                Some(v) => eprintln!(
                    "epoch {:>4}  train {:.6}  val {:.6}",
                    r.epoch, r.train_loss, v
                ),
                None => eprintln!("epoch {:>4}  train {:.6}", r.epoch, r.train_loss),
            })?;
            print_json(&summary);
        }
        Command::Infer {
            checkpoint,
            manifest,
            out,
            post,
            no_images,
        } => {
            let mut ic = InferConfig {
                postprocess: cfg.postprocess,
                radius: cfg.radius,
                images: !no_images,
            };
            set(&mut ic.radius, post.radius);
            set(&mut ic.postprocess.otsu_bins, post.otsu_bins);
            set(&mut ic.postprocess.median_window, post.median_window);
            set(&mut ic.postprocess.min_area, post.min_area);
            set(&mut ic.postprocess.min_threshold, post.min_threshold);
            match post.min_separation {
                Some(v) => ic.postprocess.min_separation = v,
                None => {
                    let ck = uvnet_core::Checkpoint::load(&checkpoint)?;
                    set(
                        &mut ic.postprocess.min_separation,
                        commands::checkpoint_sigma(&ck),
                    );
                }
            }
            let report = commands::infer(&checkpoint, &manifest, &ic, cfg.precision, &out.out)?;
            print!("{}", uvnet_pipeline::infer::format_table(&report));
        }
        Command::Evaluate {
            detections,
            manifest,
            out,
            radius,
        } => {
            let report = commands::evaluate(
                &detections,
                &manifest,
                radius.unwrap_or(cfg.radius),
                &out.out,
            )?;
            print!("{}", uvnet_pipeline::infer::format_table(&report));
        }
        Command::Report { run } => {
            print!("{}", commands::report(Path::new(&run))?);
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
