//! Dataset-level stain normalization pass.

use std::path::Path;

use serde::{Deserialize, Serialize};
use uvnet_core::stain::{
    compute_concentrations, estimate_stain_matrix, normalize_to_target, percentile, rgb_to_od,
};
use uvnet_core::{Error as CoreError, RgbImage, StainMatrix, StainParams};

use crate::error::{PipelineError, Result};
use crate::manifest::{DatasetManifest, ManifestEntry};
use crate::{fsutil, imageio};

/// Target stain basis and the 99th-percentile concentrations paired with it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StainReference {
    pub matrix: StainMatrix,
    pub max_concentrations: [f64; 2],
}

impl Default for StainReference {
    fn default() -> Self {
        StainReference {
            matrix: StainMatrix::REFERENCE,
            max_concentrations: StainMatrix::REFERENCE_MAX_CONCENTRATIONS,
        }
    }
}

/// Accepted file layouts: a bare 6-number column-major array (paired with the
/// default concentrations) or an object with both fields.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ReferenceFile {
    Matrix(StainMatrix),
    Full {
        stain_matrix: StainMatrix,
        max_concentrations: [f64; 2],
    },
}

impl StainReference {
    pub fn load(path: &Path) -> Result<Self> {
        let r = match fsutil::read_json::<ReferenceFile>(path)? {
            ReferenceFile::Matrix(matrix) => StainReference {
                matrix,
                ..StainReference::default()
            },
            ReferenceFile::Full {
                stain_matrix,
                max_concentrations,
            } => StainReference {
                matrix: stain_matrix,
                max_concentrations,
            },
        };
        if r.max_concentrations.iter().any(|c| !(*c > 0.0)) {
            return Err(PipelineError::Config(format!(
                "{}: max_concentrations {:?} must be positive",
                path.display(),
                r.max_concentrations
            )));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(
            path,
            &ReferenceFile::Full {
                stain_matrix: self.matrix,
                max_concentrations: self.max_concentrations,
            },
        )
    }

    /// Uses `image` as the target: its estimated basis and concentration percentiles.
    pub fn from_image(image: &RgbImage, params: &StainParams) -> Result<Self> {
        let od = rgb_to_od(image, params);
        let matrix = estimate_stain_matrix(&od, params)?;
        let conc = compute_concentrations(&od, &matrix)?;
        let mut max_concentrations = [0.0; 2];
        for (k, m) in max_concentrations.iter_mut().enumerate() {
            let ch: Vec<f64> = conc.iter().map(|c| c[k]).collect();
            *m = percentile(&ch, 99.0);
            if !(*m > 0.0) {
                return Err(CoreError::DegenerateStain(format!(
                    "target image has no stain {k} signal"
                ))
                .into());
            }
        }
        Ok(StainReference {
            matrix,
            max_concentrations,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub image: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizeSummary {
    pub manifest: DatasetManifest,
    pub normalized: usize,
    /// Patches whose stains could not be estimated (e.g. blank background);
    /// they are copied unchanged.
    pub skipped: Vec<SkippedImage>,
}

/// Normalizes every patch independently into `out_dir/images/`, writing
/// `out_dir/manifest.json` and `out_dir/stain_report.json`.
pub fn normalize_dataset(
    manifest: &DatasetManifest,
    reference: &StainReference,
    params: &StainParams,
    out_dir: &Path,
) -> Result<NormalizeSummary> {
    params.validate()?;
    let mut entries = Vec::with_capacity(manifest.len());
    let mut skipped = Vec::new();
    for (i, entry) in manifest.entries.iter().enumerate() {
        let img = imageio::load_rgb(&manifest.resolve(entry))?;
        let out = match normalize_to_target(
            &img,
            &reference.matrix,
            reference.max_concentrations,
            params,
        ) {
            Ok(out) => out,
            Err(e @ CoreError::DegenerateStain(_)) => {
                skipped.push(SkippedImage {
                    image: entry.image_path.clone(),
                    reason: e.to_string(),
                });
                img
            }
            Err(e) => {
                return Err(PipelineError::Manifest {
                    entry: i,
                    reason: e.to_string(),
                })
            }
        };
        let rel = format!("images/{}.png", entry.stem());
        imageio::save_rgb(&out_dir.join(&rel), &out)?;
        entries.push(ManifestEntry {
            image_path: rel,
            annotations: entry.annotations.clone(),
        });
    }
    let mut normalized = DatasetManifest::new(manifest.metadata.clone(), entries, out_dir);
    normalized.metadata.source = format!("{} + stain-normalized", manifest.metadata.source);
    normalized.save(&out_dir.join("manifest.json"))?;
    fsutil::write_json(&out_dir.join("stain_report.json"), &skipped)?;
    Ok(NormalizeSummary {
        normalized: manifest.len() - skipped.len(),
        manifest: normalized,
        skipped,
    })
}
