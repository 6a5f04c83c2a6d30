//! Synthetic H&E-like patches: a textured eosin background with dark,
//! elongated mitosis blobs and paler, rounder hard-negative blobs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uvnet_core::stain::od_to_rgb;
use uvnet_core::{BoxAnnotation, Label, OdImage, RgbImage, StainMatrix, StainParams};

use crate::error::{PipelineError, Result};
use crate::imageio;
use crate::manifest::{DatasetManifest, ManifestEntry, ManifestMetadata};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub max_mitoses: usize,
    pub max_hard_negatives: usize,
    /// Minimum distance between blob centers, in pixels.
    pub min_separation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 64,
            size: 64,
            seed: 0,
            max_mitoses: 2,
            max_hard_negatives: 2,
            min_separation: 16.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(PipelineError::Config("synth count must be >= 1".into()));
        }
        if self.size < 32 {
            return Err(PipelineError::Config(format!(
                "synth size {} must be >= 32",
                self.size
            )));
        }
        if !(self.min_separation >= 0.0) {
            return Err(PipelineError::Config("min_separation must be >= 0".into()));
        }
        Ok(())
    }
}

/// An elliptical blob: semi-axes `a` (along `angle`) and `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
    pub label: Label,
}

impl Blob {
    /// Normalized elliptical radius; the blob covers `radius <= 1`.
    pub fn radius(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }

    /// Half-widths of the axis-aligned bounding box of the ellipse.
    pub fn extent(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (
            ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt(),
            ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt(),
        )
    }

    /// Bounding box on a quarter-pixel grid, so that COCO's `[x, y, w, h]`
    /// form converts back exactly.
    pub fn bbox(&self, size: usize) -> BoxAnnotation {
        let (ex, ey) = self.extent();
        let lo = |v: f64| ((v * 4.0).floor() / 4.0).max(0.0);
        let hi = |v: f64| ((v * 4.0).ceil() / 4.0).min(size as f64);
        BoxAnnotation {
            x_min: lo(self.cx - ex),
            y_min: lo(self.cy - ey),
            x_max: hi(self.cx + ex),
            y_max: hi(self.cy + ey),
            label: self.label,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPatch {
    pub image: RgbImage,
    pub blobs: Vec<Blob>,
}

fn place_blobs(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Blob> {
    let n_mit = rng.gen_range(0..=cfg.max_mitoses);
    let n_neg = rng.gen_range(0..=cfg.max_hard_negatives);
    let margin = 8.0;
    let hi = cfg.size as f64 - 1.0 - margin;
    let mut blobs: Vec<Blob> = Vec::new();
    let labels = std::iter::repeat(Label::Mitosis)
        .take(n_mit)
        .chain(std::iter::repeat(Label::HardNegative).take(n_neg));
    for label in labels {
        for _attempt in 0..100 {
            let (cx, cy) = (rng.gen_range(margin..hi), rng.gen_range(margin..hi));
            let far = blobs
                .iter()
                .all(|b| ((b.cx - cx).powi(2) + (b.cy - cy).powi(2)).sqrt() >= cfg.min_separation);
            if !far {
                continue;
            }
            let (a, b) = match label {
                Label::Mitosis => (rng.gen_range(4.0..6.0), rng.gen_range(2.5..3.5)),
                Label::HardNegative => {
                    let r = rng.gen_range(4.0..5.5);
                    (r, r * rng.gen_range(0.85..1.0))
                }
            };
            blobs.push(Blob {
                cx,
                cy,
                a,
                b,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
                label,
            });
            break;
        }
    }
    blobs
}

/// Renders one patch.
pub fn render_patch(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> SynthPatch {
    let n = cfg.size;
    let blobs = place_blobs(cfg, rng);
    let stains = StainMatrix::REFERENCE;
    // low-frequency background modulation
    let (fx, fy, ph) = (
        rng.gen_range(0.05..0.2),
        rng.gen_range(0.05..0.2),
        rng.gen_range(0.0..std::f64::consts::TAU),
    );
    let mut od = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let wave = 0.5 + 0.5 * (fx * x as f64 + fy * y as f64 + ph).sin();
            let mut ch = 0.08 + 0.05 * wave + rng.gen_range(-0.03..0.03);
            let mut ce = 0.30 + 0.10 * wave + rng.gen_range(-0.05..0.05);
            for b in &blobs {
                let r = b.radius(x as f64, y as f64);
                if r > 1.0 {
                    continue;
                }
                let edge = 1.0 - r.powi(4);
                match b.label {
                    Label::Mitosis => {
                        ch = ch.max(1.5 * edge * rng.gen_range(0.85..1.15));
                        ce = ce.max(0.4 * edge);
                    }
                    Label::HardNegative => {
                        ch = ch.max(0.55 * edge * rng.gen_range(0.9..1.1));
                        ce = ce.max(0.45 * edge);
                    }
                }
            }
            od.push(stains.mix([ch.max(0.0), ce.max(0.0)]));
        }
    }
    let image = od_to_rgb(
        &OdImage {
            height: n,
            width: n,
            od,
        },
        &StainParams::default(),
    );
    SynthPatch { image, blobs }
}

/// Renders `cfg.count` patches.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthPatch>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.count)
        .map(|_| render_patch(cfg, &mut rng))
        .collect())
}

/// Writes `images/NNNN.png` and `manifest.json` under `out_dir`.
pub fn write_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let patches = generate(cfg)?;
    let mut entries = Vec::with_capacity(patches.len());
    for (i, p) in patches.iter().enumerate() {
        let rel = format!("images/{i:04}.png");
        imageio::save_rgb(&out_dir.join(&rel), &p.image)?;
        entries.push(ManifestEntry {
            image_path: rel,
            annotations: p.blobs.iter().map(|b| b.bbox(cfg.size)).collect(),
        });
    }
    let manifest = DatasetManifest::new(
        ManifestMetadata {
            patch_height: cfg.size,
            patch_width: cfg.size,
            source: format!("synth(seed={})", cfg.seed),
        },
        entries,
        out_dir,
    );
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
