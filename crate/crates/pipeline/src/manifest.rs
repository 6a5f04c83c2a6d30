//! Dataset manifests: a JSON list of patch images with their box annotations.
//!
//! ```json
//! {
//!   "metadata": { "patch_height": 64, "patch_width": 64, "source": "synth" },
//!   "entries": [
//!     { "image_path": "images/0000.png",
//!       "annotations": [ { "x_min": 10, "y_min": 12, "x_max": 20, "y_max": 19, "label": "mitosis" } ] }
//!   ]
//! }
//! ```
//!
//! Relative image paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uvnet_core::{BoxAnnotation, Centroid, Label};

use crate::error::{PipelineError, Result};
use crate::fsutil;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub patch_height: usize,
    pub patch_width: usize,
    #[serde(default)]
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    #[serde(default)]
    pub annotations: Vec<BoxAnnotation>,
}

impl ManifestEntry {
    pub fn centroids(&self) -> Vec<Centroid> {
        self.annotations
            .iter()
            .map(|b| Centroid {
                x: (b.x_min + b.x_max) / 2.0,
                y: (b.y_min + b.y_max) / 2.0,
                label: b.label,
            })
            .collect()
    }

    pub fn centroids_of(&self, label: Label) -> Vec<(f64, f64)> {
        self.centroids()
            .into_iter()
            .filter(|c| c.label == label)
            .map(|c| (c.x, c.y))
            .collect()
    }

    /// File name without directories, used to key per-image outputs.
    pub fn stem(&self) -> String {
        Path::new(&self.image_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image_path.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub metadata: ManifestMetadata,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(
        metadata: ManifestMetadata,
        entries: Vec<ManifestEntry>,
        root: impl Into<PathBuf>,
    ) -> Self {
        DatasetManifest {
            metadata,
            entries,
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Same metadata and root, different entries.
    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        DatasetManifest {
            metadata: self.metadata.clone(),
            entries,
            root: self.root.clone(),
        }
    }

    /// Checks every box against the patch bounds, reporting the first bad entry.
    pub fn validate_annotations(&self) -> Result<()> {
        let bounds = (self.metadata.patch_width, self.metadata.patch_height);
        if bounds.0 == 0 || bounds.1 == 0 {
            return Err(PipelineError::Config(format!(
                "patch size {}x{} must be positive",
                bounds.0, bounds.1
            )));
        }
        for (i, entry) in self.entries.iter().enumerate() {
            for (k, b) in entry.annotations.iter().enumerate() {
                b.validate(Some(bounds))
                    .map_err(|e| PipelineError::Manifest {
                        entry: i,
                        reason: format!("annotation {k}: {e}"),
                    })?;
            }
        }
        Ok(())
    }

    /// Checks that every image exists and has the declared patch size.
    pub fn validate_images(&self) -> Result<()> {
        for (i, entry) in self.entries.iter().enumerate() {
            let path = self.resolve(entry);
            let (w, h) = image::image_dimensions(&path).map_err(|e| PipelineError::Manifest {
                entry: i,
                reason: format!("{}: {e}", path.display()),
            })?;
            if (h as usize, w as usize) != (self.metadata.patch_height, self.metadata.patch_width) {
                return Err(PipelineError::Manifest {
                    entry: i,
                    reason: format!(
                        "{} is {w}x{h}, manifest declares {}x{}",
                        path.display(),
                        self.metadata.patch_width,
                        self.metadata.patch_height
                    ),
                });
            }
        }
        Ok(())
    }

    /// Writes the manifest with image paths relative to `path`'s directory
    /// where possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let abs = self.resolve(e);
                let rel = relative_to(&abs, dir).unwrap_or(abs);
                ManifestEntry {
                    image_path: rel.to_string_lossy().into_owned(),
                    annotations: e.annotations.clone(),
                }
            })
            .collect();
        fsutil::write_json(path, &self.with_entries(entries))
    }
}

fn relative_to(path: &Path, base: &Path) -> Option<PathBuf> {
    let abs = |p: &Path| -> Option<PathBuf> {
        if p.is_absolute() {
            Some(p.to_path_buf())
        } else {
            std::env::current_dir().ok().map(|d| d.join(p))
        }
    };
    let (path, base) = (normalize(&abs(path)?), normalize(&abs(base)?));
    let mut p = path.components().peekable();
    let mut b = base.components().peekable();
    while let (Some(x), Some(y)) = (p.peek(), b.peek()) {
        if x != y {
            break;
        }
        p.next();
        b.next();
    }
    let mut out = PathBuf::new();
    for _ in b {
        out.push("..");
    }
    out.extend(p);
    Some(out)
}

fn normalize(p: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// Loads and validates a manifest: schema, box bounds, image presence and size.
pub fn ingest(path: &Path) -> Result<DatasetManifest> {
    let mut m: DatasetManifest = fsutil::read_json(path)?;
    m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate_annotations()?;
    m.validate_images()?;
    Ok(m)
}

/// COCO-style detection dataset (the subset used for box annotations).
pub mod coco {
    use super::*;

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct CocoImage {
        pub id: u64,
        pub file_name: String,
        pub width: usize,
        pub height: usize,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct CocoAnnotation {
        pub id: u64,
        pub image_id: u64,
        /// `[x, y, width, height]`
        pub bbox: [f64; 4],
        pub category_id: u64,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct CocoCategory {
        pub id: u64,
        pub name: String,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct CocoDataset {
        pub images: Vec<CocoImage>,
        pub annotations: Vec<CocoAnnotation>,
        pub categories: Vec<CocoCategory>,
    }

    fn label_for(name: &str) -> Option<Label> {
        match name.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "mitosis" | "mitotic_figure" => Some(Label::Mitosis),
            "hard_negative" | "non_mitotic_figure" | "imposter" => Some(Label::HardNegative),
            _ => None,
        }
    }

    pub fn to_coco(m: &DatasetManifest) -> CocoDataset {
        let categories = Label::ALL
            .iter()
            .map(|l| CocoCategory {
                id: l.channel() as u64 + 1,
                name: l.as_str().to_string(),
            })
            .collect();
        let mut annotations = Vec::new();
        let images = m
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                for b in &e.annotations {
                    annotations.push(CocoAnnotation {
                        id: annotations.len() as u64 + 1,
                        image_id: i as u64 + 1,
                        bbox: [b.x_min, b.y_min, b.x_max - b.x_min, b.y_max - b.y_min],
                        category_id: b.label.channel() as u64 + 1,
                    });
                }
                CocoImage {
                    id: i as u64 + 1,
                    file_name: e.image_path.clone(),
                    width: m.metadata.patch_width,
                    height: m.metadata.patch_height,
                }
            })
            .collect();
        CocoDataset {
            images,
            annotations,
            categories,
        }
    }

    /// Builds a manifest from a COCO dataset; image order and annotation order
    /// within an image are preserved. All images must share one size.
    pub fn from_coco(
        c: &CocoDataset,
        source: &str,
        root: impl Into<PathBuf>,
    ) -> Result<DatasetManifest> {
        let first = c
            .images
            .first()
            .ok_or(PipelineError::EmptyDataset("COCO image"))?;
        let (ph, pw) = (first.height, first.width);
        let mut entries = Vec::with_capacity(c.images.len());
        let mut index = std::collections::HashMap::new();
        for (i, img) in c.images.iter().enumerate() {
            if (img.height, img.width) != (ph, pw) {
                return Err(PipelineError::Manifest {
                    entry: i,
                    reason: format!(
                        "image {} is {}x{}, expected {pw}x{ph}",
                        img.file_name, img.width, img.height
                    ),
                });
            }
            index.insert(img.id, i);
            entries.push(ManifestEntry {
                image_path: img.file_name.clone(),
                annotations: Vec::new(),
            });
        }
        let cats: std::collections::HashMap<u64, &str> = c
            .categories
            .iter()
            .map(|k| (k.id, k.name.as_str()))
            .collect();
        for a in &c.annotations {
            let &i = index.get(&a.image_id).ok_or_else(|| {
                PipelineError::Config(format!(
                    "annotation {} refers to unknown image {}",
                    a.id, a.image_id
                ))
            })?;
            let name = cats.get(&a.category_id).copied().unwrap_or("");
            let label = label_for(name).ok_or_else(|| PipelineError::Manifest {
                entry: i,
                reason: format!("annotation {}: unknown category {:?}", a.id, name),
            })?;
            let [x, y, w, h] = a.bbox;
            entries[i].annotations.push(BoxAnnotation {
                x_min: x,
                y_min: y,
                x_max: x + w,
                y_max: y + h,
                label,
            });
        }
        let m = DatasetManifest::new(
            ManifestMetadata {
                patch_height: ph,
                patch_width: pw,
                source: source.to_string(),
            },
            entries,
            root,
        );
        m.validate_annotations()?;
        Ok(m)
    }
}
