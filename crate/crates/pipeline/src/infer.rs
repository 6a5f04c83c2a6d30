//! Inference, detection, evaluation against ground truth, and report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uvnet_core::eval::{compute_macro_metrics, MacroReport};
use uvnet_core::postprocess::detect;
use uvnet_core::{
    compute_metrics, match_detections, Detection, Label, MatchResult, MetricsReport,
    PostprocessConfig, Real, RgbImage, UVNet,
};

use crate::error::{PipelineError, Result};
use crate::manifest::DatasetManifest;
use crate::{fsutil, imageio};

/// Detections for one image, in the `detections.json` layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image: String,
    pub detections: Vec<Detection>,
}

impl ImageDetections {
    pub fn centroids_of(&self, label: Label) -> Vec<(f64, f64)> {
        self.detections
            .iter()
            .filter(|d| d.label == label)
            .map(|d| (d.x, d.y))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub micro: MetricsReport,
    #[serde(rename = "macro")]
    pub macro_: MacroReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageCounts {
    pub image: String,
    pub predictions: usize,
    pub truths: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub radius: f64,
    pub images: usize,
    /// Headline metrics.
    pub mitosis: ChannelReport,
    pub hard_negative: ChannelReport,
    pub per_image: Vec<ImageCounts>,
    #[serde(skip)]
    pub hard_negative_per_image: Vec<ImageCounts>,
}

fn channel_eval(
    manifest: &DatasetManifest,
    detections: &[ImageDetections],
    label: Label,
    radius: f64,
) -> (ChannelReport, Vec<ImageCounts>) {
    let mut matches: Vec<MatchResult> = Vec::with_capacity(detections.len());
    let mut rows = Vec::with_capacity(detections.len());
    for (entry, det) in manifest.entries.iter().zip(detections) {
        let preds = det.centroids_of(label);
        let truths = entry.centroids_of(label);
        let m = match_detections(&preds, &truths, radius);
        rows.push(ImageCounts {
            image: det.image.clone(),
            predictions: preds.len(),
            truths: truths.len(),
            tp: m.tp(),
            fp: m.fp(),
            fn_: m.fn_(),
        });
        matches.push(m);
    }
    (
        ChannelReport {
            micro: compute_metrics(&matches),
            macro_: compute_macro_metrics(&matches),
        },
        rows,
    )
}

/// Matches detections to the manifest's boxes; records are keyed by `image`,
/// which must equal the entry's `image_path`.
pub fn evaluate(
    manifest: &DatasetManifest,
    detections: &[ImageDetections],
    radius: f64,
) -> Result<EvalReport> {
    if !(radius > 0.0) {
        return Err(PipelineError::Config(format!(
            "match radius {radius} must be > 0"
        )));
    }
    let by_image: std::collections::HashMap<&str, &ImageDetections> =
        detections.iter().map(|d| (d.image.as_str(), d)).collect();
    let ordered = manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            by_image
                .get(e.image_path.as_str())
                .map(|d| (*d).clone())
                .ok_or(PipelineError::Manifest {
                    entry: i,
                    reason: format!("no detection record for {}", e.image_path),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mitosis, per_image) = channel_eval(manifest, &ordered, Label::Mitosis, radius);
    let (hard_negative, hn_rows) = channel_eval(manifest, &ordered, Label::HardNegative, radius);
    Ok(EvalReport {
        radius,
        images: manifest.len(),
        mitosis,
        hard_negative,
        per_image,
        hard_negative_per_image: hn_rows,
    })
}

/// Plain-text metrics table.
pub fn format_table(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "images: {}   match radius: {} px", r.images, r.radius);
    let _ = writeln!(
        s,
        "{:<14} {:<6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
        "channel", "mode", "tp", "fp", "fn", "precision", "recall", "f1"
    );
    for (name, c) in [("mitosis", &r.mitosis), ("hard_negative", &r.hard_negative)] {
        let m = &c.micro;
        let _ = writeln!(
            s,
            "{:<14} {:<6} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
            name, "micro", m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1
        );
        let a = &c.macro_;
        let _ = writeln!(
            s,
            "{:<14} {:<6} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}",
            name, "macro", "", "", "", a.precision, a.recall, a.f1
        );
    }
    s
}

fn write_counts_csv(path: &Path, rows: &[ImageCounts]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fsutil::create_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image", "tp", "fp", "fn"])?;
    for r in rows {
        w.write_record([
            r.image.clone(),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

/// `metrics.json`, `metrics.txt`, `per_image.csv` (mitosis) and
/// `per_image_hard_negative.csv`.
pub fn write_report(dir: &Path, r: &EvalReport) -> Result<()> {
    fsutil::write_json(&dir.join("metrics.json"), r)?;
    fsutil::write_text(&dir.join("metrics.txt"), &format_table(r))?;
    write_counts_csv(&dir.join("per_image.csv"), &r.per_image)?;
    write_counts_csv(
        &dir.join("per_image_hard_negative.csv"),
        &r.hard_negative_per_image,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub postprocess: PostprocessConfig,
    pub radius: f64,
    /// Write heatmap and overlay PNGs.
    pub images: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            postprocess: PostprocessConfig::default(),
            radius: 30.0,
            images: true,
        }
    }
}

pub struct InferOutput {
    pub detections: Vec<ImageDetections>,
    pub report: EvalReport,
}

fn draw_cross(img: &mut RgbImage, x: f64, y: f64, color: [u8; 3]) {
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    for d in -3isize..=3 {
        for (px, py) in [(cx + d, cy), (cx, cy + d)] {
            if px >= 0 && py >= 0 && (px as usize) < img.width && (py as usize) < img.height {
                img.set(py as usize, px as usize, color);
            }
        }
    }
}

fn draw_box(img: &mut RgbImage, b: &uvnet_core::BoxAnnotation, color: [u8; 3]) {
    let clampx = |v: f64| (v.round().max(0.0) as usize).min(img.width - 1);
    let clampy = |v: f64| (v.round().max(0.0) as usize).min(img.height - 1);
    let (x0, x1, y0, y1) = (
        clampx(b.x_min),
        clampx(b.x_max),
        clampy(b.y_min),
        clampy(b.y_max),
    );
    for x in x0..=x1 {
        img.set(y0, x, color);
        img.set(y1, x, color);
    }
    for y in y0..=y1 {
        img.set(y, x0, color);
        img.set(y, x1, color);
    }
}

/// Runs the model and post-processing on every entry, evaluates, and (when
/// `out_dir` is given) writes `detections.json`, the report files,
/// `predictions/<stem>_<label>.png` and `overlays/<stem>.png`.
pub fn infer<T: Real>(
    net: &UVNet<T>,
    manifest: &DatasetManifest,
    cfg: &InferConfig,
    out_dir: Option<&Path>,
) -> Result<InferOutput> {
    let (h, w) = (
        manifest.metadata.patch_height,
        manifest.metadata.patch_width,
    );
    net.config()
        .check_spatial(h, w)
        .map_err(|e| PipelineError::Mismatch(e.to_string()))?;
    if net.config().in_channels != 3 || net.config().out_channels != 2 {
        return Err(PipelineError::Mismatch(format!(
            "model maps {} -> {} channels; RGB in, 2 heatmaps out required",
            net.config().in_channels,
            net.config().out_channels
        )));
    }
    let mut detections = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let img = imageio::load_rgb(&manifest.resolve(entry))?;
        let pred = net.predict(&imageio::to_tensor::<T>(&img))?;
        let [mit, neg] = detect(&pred, &cfg.postprocess)?;
        let stem = entry.stem();
        if let (Some(dir), true) = (out_dir, cfg.images) {
            for label in Label::ALL {
                let path = dir
                    .join("predictions")
                    .join(format!("{stem}_{}.png", label.as_str()));
                imageio::save_plane(&path, pred.plane(0, label.channel()), h, w)?;
            }
            let mut overlay = img.clone();
            for b in &entry.annotations {
                let color = match b.label {
                    Label::Mitosis => [255, 0, 0],
                    Label::HardNegative => [255, 160, 0],
                };
                draw_box(&mut overlay, b, color);
            }
            for d in &mit {
                draw_cross(&mut overlay, d.x, d.y, [0, 220, 0]);
            }
            for d in &neg {
                draw_cross(&mut overlay, d.x, d.y, [0, 120, 255]);
            }
            imageio::save_rgb(&dir.join("overlays").join(format!("{stem}.png")), &overlay)?;
        }
        detections.push(ImageDetections {
            image: entry.image_path.clone(),
            detections: mit.into_iter().chain(neg).collect(),
        });
    }
    let report = evaluate(manifest, &detections, cfg.radius)?;
    if let Some(dir) = out_dir {
        fsutil::write_json(&dir.join("detections.json"), &detections)?;
        write_report(dir, &report)?;
    }
    Ok(InferOutput { detections, report })
}
