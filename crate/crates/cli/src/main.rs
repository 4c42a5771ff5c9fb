//! `cowdet`: dataset generation, splitting, augmentation, training,
//! evaluation, prediction, and the annotation bootstrap, end to end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error. All
//! errors go to stderr prefixed with `error:`.

mod run_config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cowdet_core::augment::{augment_dataset, AugmentSpec};
use cowdet_core::dataset::synthetic::{gen_synthetic, GenOptions};
use cowdet_core::dataset::{
    annotate_candidates, load_manifest, merge_corrections, save_manifest, split, Split,
    SplitRatios,
};
use cowdet_core::detector::predict;
use cowdet_core::error::Error as CoreError;
use cowdet_core::eval::{emit_pr, evaluate, EvalReport, PRCurve};
use cowdet_core::geometry::abs_to_norm;
use cowdet_core::imagebuf::ImageBuf;
use cowdet_core::train::{load_checkpoint, save_checkpoint, train, OptimizerKind, TrainOptions};

use run_config::RunConfig;

#[derive(Parser)]
#[command(name = "cowdet", version, about = "Anchor-free cow detector pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct WorkerArgs {
    /// Worker threads for data-parallel stages; every value produces
    /// identical outputs. Defaults to $COWDET_WORKERS, then 1.
    #[arg(long)]
    workers: Option<usize>,
}

impl WorkerArgs {
    fn resolve(&self) -> usize {
        self.workers
            .or_else(|| {
                std::env::var("COWDET_WORKERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            })
            .unwrap_or(1)
            .max(1)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (images, labels, provenance, manifest).
    GenSynthetic {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        clutter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 128)]
        size: u32,
        #[arg(long)]
        force: bool,
    },
    /// Assign train/val/test splits in place (or to --out).
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated train,val,test fractions summing to 1.
        #[arg(long, default_value = "0.7,0.2,0.1")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Expand the train split with augmented copies.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 2)]
        copies: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        workers: WorkerArgs,
    },
    /// Train a detector on the manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Optional run-config JSON; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training log JSON path (default: <out>.log.json).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        workers: WorkerArgs,
    },
    /// Evaluate a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        per_camera: bool,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        workers: WorkerArgs,
    },
    /// Run the detector on one image and write a candidate label file.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_labels: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generate candidate label files (with confidences) for a directory of
    /// images.
    Annotate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        conf: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        workers: WorkerArgs,
    },
    /// Merge human corrections over model candidates into final labels.
    MergeLabels {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        corrections: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        accept_thresh: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Re-emit the PR curves stored in an evaluation report as CSV and SVG.
    PlotPr {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        svg: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

enum CliError {
    Usage(String),
    Data(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn refuse_overwrite(path: &Path, force: bool) -> CliResult<()> {
    if !force && path.exists() {
        return Err(CliError::Data(format!(
            "refusing to overwrite {} (pass --force)",
            path.display()
        )));
    }
    Ok(())
}

fn refuse_nonempty_dir(path: &Path, force: bool) -> CliResult<()> {
    if !force && path.is_dir() {
        let occupied = std::fs::read_dir(path)
            .map(|mut it| it.next().is_some())
            .unwrap_or(false);
        if occupied {
            return Err(CliError::Data(format!(
                "refusing to write into non-empty {} (pass --force)",
                path.display()
            )));
        }
    }
    Ok(())
}

fn parse_ratios(s: &str) -> CliResult<SplitRatios> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return usage(format!("--ratios expects three comma-separated values, got {s:?}"));
    }
    let mut vals = [0.0f64; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid ratio {p:?}")))?;
    }
    SplitRatios::new(vals[0], vals[1], vals[2]).map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult<String> {
    match command {
        Command::GenSynthetic {
            n,
            clutter,
            seed,
            out,
            size,
            force,
        } => {
            if n == 0 {
                return usage("--n must be at least 1");
            }
            if !(0.0..=1.0).contains(&clutter) {
                return usage(format!("--clutter {clutter} outside [0, 1]"));
            }
            refuse_overwrite(&out.join("manifest.json"), force)?;
            let opts = GenOptions {
                n,
                clutter,
                seed,
                size,
            };
            let manifest = gen_synthetic(&opts, &out)?;
            save_manifest(&manifest, &out.join("manifest.json"))?;
            Ok(format!(
                "gen-synthetic: wrote {n} images (clutter {clutter}, seed {seed}) under {}",
                out.display()
            ))
        }
        Command::Split {
            manifest,
            ratios,
            seed,
            out,
            force,
        } => {
            let r = parse_ratios(&ratios)?;
            let m = load_manifest(&manifest)?;
            let assigned = split(&m, r, seed)?;
            let target = out.unwrap_or_else(|| manifest.clone());
            if target != manifest {
                refuse_overwrite(&target, force)?;
            }
            save_manifest(&assigned, &target)?;
            let count = |s: Split| assigned.images.iter().filter(|i| i.split == s).count();
            Ok(format!(
                "split: {} images -> train {} / val {} / test {} (seed {seed})",
                assigned.images.len(),
                count(Split::Train),
                count(Split::Val),
                count(Split::Test)
            ))
        }
        Command::Augment {
            manifest,
            copies,
            seed,
            force,
            workers,
        } => {
            let m = load_manifest(&manifest)?;
            let spec = AugmentSpec {
                copies_per_image: copies,
                seed,
                ..AugmentSpec::default()
            };
            if !force {
                for rec in m.images.iter().filter(|r| r.split == Split::Train) {
                    for copy in 0..copies {
                        let path = match rec.path.rsplit_once('.') {
                            Some((stem, ext)) => format!("{stem}_aug{copy}.{ext}"),
                            None => format!("{}_aug{copy}", rec.path),
                        };
                        let abs = manifest
                            .parent()
                            .unwrap_or(Path::new("."))
                            .join(&path);
                        refuse_overwrite(&abs, false)?;
                    }
                }
            }
            let before = m.images.len();
            let expanded = augment_dataset(&m, &manifest, &spec, workers.resolve())?;
            save_manifest(&expanded, &manifest)?;
            Ok(format!(
                "augment: {} images -> {} ({copies} copies per train image, seed {seed})",
                before,
                expanded.images.len()
            ))
        }
        Command::Train {
            manifest,
            config,
            optimizer,
            epochs,
            batch_size,
            seed,
            out,
            log,
            force,
            workers,
        } => {
            let mut rc = match config {
                Some(path) => RunConfig::load(&path).map_err(CliError::Data)?,
                None => RunConfig {
                    detector: cowdet_core::detector::DetectorConfig::desk(),
                    batch_size: 8,
                    ..RunConfig::default()
                },
            };
            if let Some(o) = optimizer {
                rc.optimizer = OptimizerKind::parse(&o).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            if let Some(e) = epochs {
                rc.epochs = e;
            }
            if let Some(b) = batch_size {
                if b == 0 {
                    return usage("--batch-size must be at least 1");
                }
                rc.batch_size = b;
            }
            if let Some(s) = seed {
                rc.seed = s;
            }
            let ckpt_path = rc
                .paths
                .checkpoint
                .clone()
                .map(PathBuf::from)
                .unwrap_or(out);
            let log_path = log
                .or_else(|| rc.paths.log.clone().map(PathBuf::from))
                .unwrap_or_else(|| ckpt_path.with_extension("log.json"));
            refuse_overwrite(&ckpt_path, force)?;
            refuse_overwrite(&log_path, force)?;

            let m = load_manifest(&manifest)?;
            let opts = TrainOptions {
                optimizer: rc.optimizer,
                epochs: rc.epochs,
                batch_size: rc.batch_size,
                seed: rc.seed,
                lr_initial: rc.lr_initial,
                lr_final: rc.lr_final,
                workers: workers.resolve(),
            };
            let (weights, train_log) = train(&m, &manifest, &rc.detector, &opts)?;
            save_checkpoint(&weights, &rc.detector, &ckpt_path)?;
            let mut log_json = serde_json::to_string_pretty(&train_log)
                .map_err(|e| CliError::Data(e.to_string()))?;
            log_json.push('\n');
            std::fs::write(&log_path, log_json).map_err(|e| CliError::Data(e.to_string()))?;
            let last = train_log.epochs.last();
            Ok(format!(
                "train: {} epochs ({:?}, seed {}), final loss {} -> {}",
                rc.epochs,
                rc.optimizer,
                rc.seed,
                last.map(|l| format!("{:.4}", l.loss)).unwrap_or_else(|| "n/a".into()),
                ckpt_path.display()
            ))
        }
        Command::Eval {
            manifest,
            ckpt,
            split,
            per_camera,
            report,
            force,
            workers,
        } => {
            let split = Split::parse(&split).map_err(|e| CliError::Usage(e.to_string()))?;
            refuse_overwrite(&report, force)?;
            let m = load_manifest(&manifest)?;
            let (weights, config) = load_checkpoint(&ckpt)?;
            let r = evaluate(
                &m,
                &manifest,
                split,
                &weights,
                &config,
                per_camera,
                workers.resolve(),
            )?;
            let mut json =
                serde_json::to_string_pretty(&r).map_err(|e| CliError::Data(e.to_string()))?;
            json.push('\n');
            std::fs::write(&report, json).map_err(|e| CliError::Data(e.to_string()))?;
            Ok(format!(
                "eval: {split} split, {} images: P {:.3} R {:.3} F1 {:.3} AP50 {:.3} mAP50:95 {:.3} -> {}",
                r.counts.images,
                r.overall.precision,
                r.overall.recall,
                r.overall.f1,
                r.overall.ap50,
                r.overall.map50_95,
                report.display()
            ))
        }
        Command::Predict {
            ckpt,
            image,
            out_labels,
            force,
        } => {
            refuse_overwrite(&out_labels, force)?;
            let (weights, config) = load_checkpoint(&ckpt)?;
            let img = ImageBuf::load(&image)?;
            let dets = predict(&img, &weights, &config)?;
            let id = out_labels
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let entries = dets
                .iter()
                .map(|d| {
                    Ok(cowdet_core::dataset::LabelEntry {
                        category_id: d.category_id,
                        bbox: abs_to_norm(&d.bbox, img.width(), img.height())?,
                        confidence: Some(d.score),
                    })
                })
                .collect::<Result<Vec<_>, CoreError>>()?;
            let n = entries.len();
            cowdet_core::dataset::write_label_file(
                &cowdet_core::dataset::LabelSet {
                    image_id: id,
                    entries,
                },
                &out_labels,
                true,
            )?;
            Ok(format!(
                "predict: {n} detections on {} -> {}",
                image.display(),
                out_labels.display()
            ))
        }
        Command::Annotate {
            ckpt,
            images,
            conf,
            out,
            force,
            workers,
        } => {
            if !(0.0 < conf && conf < 1.0) {
                return usage(format!("--conf {conf} outside (0, 1)"));
            }
            refuse_nonempty_dir(&out, force)?;
            let (weights, config) = load_checkpoint(&ckpt)?;
            let summary =
                annotate_candidates(&weights, &config, &images, conf, &out, workers.resolve())?;
            Ok(format!(
                "annotate: {} images, {} candidate boxes, {} skipped -> {}",
                summary.images,
                summary.boxes,
                summary.skipped.len(),
                out.display()
            ))
        }
        Command::MergeLabels {
            candidates,
            corrections,
            accept_thresh,
            out,
            force,
        } => {
            if !(0.0..=1.0).contains(&accept_thresh) {
                return usage(format!("--accept-thresh {accept_thresh} outside [0, 1]"));
            }
            refuse_nonempty_dir(&out, force)?;
            let written = merge_corrections(&candidates, &corrections, accept_thresh, &out)?;
            Ok(format!(
                "merge-labels: wrote {written} final label files -> {}",
                out.display()
            ))
        }
        Command::PlotPr {
            report,
            csv,
            svg,
            force,
        } => {
            refuse_overwrite(&csv, force)?;
            refuse_overwrite(&svg, force)?;
            let text = std::fs::read_to_string(&report).map_err(|e| CliError::Data(e.to_string()))?;
            let parsed: EvalReport =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("invalid report: {e}")))?;
            if parsed.pr_curves.is_empty() {
                return Err(CliError::Data("report contains no PR curves".into()));
            }
            let curves: Vec<(String, PRCurve)> = parsed
                .pr_curves
                .iter()
                .map(|(label, points)| {
                    (
                        label.clone(),
                        PRCurve {
                            points: points.clone(),
                            iou_thresh: cowdet_core::eval::OPERATING_IOU,
                        },
                    )
                })
                .collect();
            emit_pr(&curves, &csv, &svg)?;
            Ok(format!(
                "plot-pr: {} curves -> {} and {}",
                curves.len(),
                csv.display(),
                svg.display()
            ))
        }
    }
}
