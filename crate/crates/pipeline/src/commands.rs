//! The end-to-end steps behind each CLI subcommand, operating on directories.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use uvnet_core::{Checkpoint, GaussianSpec, Real, StainParams};

use crate::config::{PipelineConfig, Precision};
use crate::dataset::{load_samples, TargetSet};
use crate::error::{PipelineError, Result};
use crate::infer::{format_table, EvalReport, ImageDetections, InferConfig};
use crate::manifest::{ingest, DatasetManifest};
use crate::normalize::{NormalizeSummary, StainReference};
use crate::train::EpochRecord;
use crate::train::{history_csv, TrainOutcome};
use crate::{fsutil, imageio, normalize, split, synth};

pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<DatasetManifest> {
    synth::write_dataset(&cfg.synth, out)
}

pub enum StainTarget<'a> {
    Reference(StainReference),
    Image(&'a Path),
}

pub fn stain_normalize(
    manifest_path: &Path,
    target: StainTarget<'_>,
    params: &StainParams,
    out: &Path,
) -> Result<NormalizeSummary> {
    let manifest = ingest(manifest_path)?;
    let reference = match target {
        StainTarget::Reference(r) => r,
        StainTarget::Image(p) => StainReference::from_image(&imageio::load_rgb(p)?, params)?,
    };
    reference.save(&out.join("reference_stain.json"))?;
    normalize::normalize_dataset(&manifest, &reference, params, out)
}

pub fn make_targets(manifest_path: &Path, spec: &GaussianSpec, out: &Path) -> Result<TargetSet> {
    crate::dataset::make_targets(&ingest(manifest_path)?, spec, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub precision: Precision,
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub final_train_loss: f64,
    pub initial_train_loss: f64,
}

/// Splits the target set, trains, and writes `splits/{train,val,test}.json`,
/// `checkpoint.json` (best validation epoch), `loss_history.csv` and
/// `train_summary.json`.
pub fn train(
    targets_path: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    log: impl FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let set = TargetSet::load(targets_path)?;
    let parts = split::split(&set.manifest, &cfg.split)?;
    for (name, m) in [
        ("train", &parts.train),
        ("val", &parts.val),
        ("test", &parts.test),
    ] {
        m.save(&out.join("splits").join(format!("{name}.json")))?;
    }
    match cfg.precision {
        Precision::F32 => train_with::<f32>(&set.gaussian, &parts, cfg, out, log),
        Precision::F64 => train_with::<f64>(&set.gaussian, &parts, cfg, out, log),
    }
}

fn train_with<T: Real>(
    gaussian: &GaussianSpec,
    parts: &split::Splits,
    cfg: &PipelineConfig,
    out: &Path,
    log: impl FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    let train_set = load_samples::<T>(&parts.train, gaussian)?;
    let val_set = load_samples::<T>(&parts.val, gaussian)?;
    let TrainOutcome {
        best,
        best_epoch,
        best_loss,
        history,
    } = crate::train::train(&train_set, &val_set, cfg.model, &cfg.train, log)?;
    let meta = json!({
        "gaussian": gaussian,
        "train": cfg.train,
        "precision": cfg.precision,
        "patch_height": parts.train.metadata.patch_height,
        "patch_width": parts.train.metadata.patch_width,
        "best_epoch": best_epoch,
        "best_loss": best_loss,
    });
    Checkpoint::from_model(&best, meta).save(out.join("checkpoint.json"))?;
    fsutil::write_text(&out.join("loss_history.csv"), &history_csv(&history))?;
    let summary = TrainSummary {
        precision: cfg.precision,
        train_images: parts.train.len(),
        val_images: parts.val.len(),
        test_images: parts.test.len(),
        best_epoch,
        best_loss,
        initial_train_loss: history[0].train_loss,
        final_train_loss: history[history.len() - 1].train_loss,
    };
    fsutil::write_json(&out.join("train_summary.json"), &summary)?;
    Ok(summary)
}

/// Gaussian σ recorded in a checkpoint's metadata, if any.
pub fn checkpoint_sigma(ck: &Checkpoint) -> Option<f64> {
    ck.metadata.get("gaussian")?.get("sigma")?.as_f64()
}

pub fn infer(
    checkpoint_path: &Path,
    manifest_path: &Path,
    cfg: &InferConfig,
    precision: Precision,
    out: &Path,
) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint_path)?;
    let manifest = ingest(manifest_path)?;
    let report = match precision {
        Precision::F32 => {
            crate::infer::infer(&ck.to_model::<f32>()?, &manifest, cfg, Some(out))?.report
        }
        Precision::F64 => {
            crate::infer::infer(&ck.to_model::<f64>()?, &manifest, cfg, Some(out))?.report
        }
    };
    Ok(report)
}

pub fn evaluate(
    detections_path: &Path,
    manifest_path: &Path,
    radius: f64,
    out: &Path,
) -> Result<EvalReport> {
    let detections: Vec<ImageDetections> = fsutil::read_json(detections_path)?;
    let manifest: DatasetManifest = {
        let mut m: DatasetManifest = fsutil::read_json(manifest_path)?;
        m.root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        m.validate_annotations()?;
        m
    };
    let report = crate::infer::evaluate(&manifest, &detections, radius)?;
    crate::infer::write_report(out, &report)?;
    Ok(report)
}

/// Summarizes a run directory (any of `train_summary.json`, `loss_history.csv`,
/// `metrics.json`) into `report.txt` and returns the text.
pub fn report(run_dir: &Path) -> Result<String> {
    let mut text = String::new();
    let mut found = false;
    let summary_path = run_dir.join("train_summary.json");
    if summary_path.exists() {
        let s: TrainSummary = fsutil::read_json(&summary_path)?;
        text.push_str(&format!(
            "training ({:?}): {} train / {} val / {} test images\n  loss {:.6} -> {:.6}, best epoch {} (loss {:.6})\n",
            s.precision,
            s.train_images,
            s.val_images,
            s.test_images,
            s.initial_train_loss,
            s.final_train_loss,
            s.best_epoch,
            s.best_loss
        ));
        found = true;
    }
    let history_path = run_dir.join("loss_history.csv");
    if history_path.exists() {
        let mut rdr = csv::Reader::from_path(&history_path)?;
        let epochs = rdr.records().count();
        text.push_str(&format!(
            "loss history: {epochs} epochs ({})\n",
            history_path.display()
        ));
        found = true;
    }
    let metrics_path = run_dir.join("metrics.json");
    if metrics_path.exists() {
        let r: EvalReport = fsutil::read_json(&metrics_path)?;
        text.push_str(&format_table(&r));
        found = true;
    }
    if !found {
        return Err(PipelineError::Config(format!(
            "{} has no train_summary.json, loss_history.csv or metrics.json",
            run_dir.display()
        )));
    }
    fsutil::write_text(&run_dir.join("report.txt"), &text)?;
    Ok(text)
}
