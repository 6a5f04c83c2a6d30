//! Heatmap target sets and in-memory training samples.

use std::path::Path;

use serde::{Deserialize, Serialize};
use uvnet_core::targets::render_heatmap;
use uvnet_core::{GaussianSpec, Label, Real, Tensor};

use crate::error::{PipelineError, Result};
use crate::manifest::{DatasetManifest, ManifestEntry, ManifestMetadata};
use crate::{fsutil, imageio};

/// A manifest paired with the Gaussian used to encode its targets.
///
/// Serialized as `{ "gaussian": {...}, "metadata": {...}, "entries": [...] }`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    pub gaussian: GaussianSpec,
    pub manifest: DatasetManifest,
}

#[derive(Serialize, Deserialize)]
struct TargetSetFile {
    gaussian: GaussianSpec,
    metadata: ManifestMetadata,
    entries: Vec<ManifestEntry>,
}

impl TargetSet {
    pub fn load(path: &Path) -> Result<Self> {
        let f: TargetSetFile = fsutil::read_json(path)?;
        f.gaussian.validate()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = DatasetManifest::new(f.metadata, f.entries, root);
        manifest.validate_annotations()?;
        manifest.validate_images()?;
        Ok(TargetSet {
            gaussian: f.gaussian,
            manifest,
        })
    }

    /// Writes the set with paths relative to `path`'s directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("manifest.tmp");
        self.manifest.save(&tmp)?;
        let relocated: DatasetManifest = fsutil::read_json(&tmp)?;
        std::fs::remove_file(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
        fsutil::write_json(
            path,
            &TargetSetFile {
                gaussian: self.gaussian,
                metadata: relocated.metadata,
                entries: relocated.entries,
            },
        )
    }
}

pub fn heatmap<T: Real>(
    entry: &ManifestEntry,
    spec: &GaussianSpec,
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    Ok(render_heatmap(&entry.centroids(), spec, height, width)?)
}

/// Validates the manifest, then writes `targets.json` and per-channel heatmap
/// previews (`targets/<stem>_<label>.png`) under `out_dir`.
pub fn make_targets(
    manifest: &DatasetManifest,
    spec: &GaussianSpec,
    out_dir: &Path,
) -> Result<TargetSet> {
    spec.validate()?;
    manifest.validate_annotations()?;
    manifest.validate_images()?;
    let (h, w) = (
        manifest.metadata.patch_height,
        manifest.metadata.patch_width,
    );
    for (i, entry) in manifest.entries.iter().enumerate() {
        let t: Tensor<f64> = heatmap(entry, spec, h, w).map_err(|e| PipelineError::Manifest {
            entry: i,
            reason: e.to_string(),
        })?;
        for label in Label::ALL {
            let path =
                out_dir
                    .join("targets")
                    .join(format!("{}_{}.png", entry.stem(), label.as_str()));
            imageio::save_plane(&path, t.plane(0, label.channel()), h, w)?;
        }
    }
    let set = TargetSet {
        gaussian: *spec,
        manifest: manifest.clone(),
    };
    set.save(&out_dir.join("targets.json"))?;
    Ok(set)
}

#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub name: String,
    /// `(1, 3, H, W)` in `[0, 1]`
    pub image: Tensor<T>,
    /// `(1, 2, H, W)` heatmap
    pub target: Tensor<T>,
}

pub fn load_samples<T: Real>(
    manifest: &DatasetManifest,
    spec: &GaussianSpec,
) -> Result<Vec<Sample<T>>> {
    let (h, w) = (
        manifest.metadata.patch_height,
        manifest.metadata.patch_width,
    );
    manifest
        .entries
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let img = imageio::load_rgb(&manifest.resolve(entry))?;
            if (img.height, img.width) != (h, w) {
                return Err(PipelineError::Manifest {
                    entry: i,
                    reason: format!(
                        "image is {}x{}, manifest declares {w}x{h}",
                        img.width, img.height
                    ),
                });
            }
            Ok(Sample {
                name: entry.stem(),
                image: imageio::to_tensor(&img),
                target: heatmap(entry, spec, h, w)?,
            })
        })
        .collect()
}
