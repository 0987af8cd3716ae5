//! On-disk dataset layout: `<root>/<class>/<id>.pgm` (or `.f32`) with
//! `<id>.labels.pgm` alongside, plus an optional `manifest.json` at the root.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::imaging::{
    load_image, load_labels, save_image, save_labels, AmplitudeImage, ImageFormat, ImagingError, RegionLabelMap,
};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("sample {id}: image is {image:?} but labels are {labels:?}")]
    LabelShape { id: String, image: (usize, usize), labels: (usize, usize) },
    #[error("sample {0} has no label map")]
    MissingLabels(String),
    #[error("dataset at {0} contains no samples")]
    Empty(PathBuf),
}

pub const MANIFEST_FILE: &str = "manifest.json";
const LABEL_SUFFIX: &str = ".labels.pgm";

/// One labelled image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Unique across the dataset, `<class>/<stem>`.
    pub id: String,
    pub class_index: usize,
    pub image: AmplitudeImage,
    pub labels: RegionLabelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    /// Sorted by `(class_index, id)`.
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(classes: Vec<String>, mut samples: Vec<Sample>) -> Self {
        samples.sort_by(|a, b| (a.class_index, &a.id).cmp(&(b.class_index, &b.id)));
        Dataset { classes, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub classes: Vec<String>,
    #[serde(default)]
    pub samples: Vec<ManifestEntry>,
    /// Free-form generator settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

pub fn read_manifest(root: &Path) -> Result<Option<Manifest>, DatasetError> {
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| DatasetError::Manifest { path, reason: e.to_string() })
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    out.sort();
    Ok(out)
}

/// Loads every sample under `root`. Class order comes from the manifest when
/// present, otherwise from the sorted class directory names.
pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let manifest = read_manifest(root)?;
    let classes: Vec<String> = match &manifest {
        Some(m) => m.classes.clone(),
        None => sorted_dir(root)?
            .into_iter()
            .filter(|p| p.is_dir())
            .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
            .collect(),
    };

    let mut samples = Vec::new();
    for (class_index, class) in classes.iter().enumerate() {
        let dir = root.join(class);
        if !dir.is_dir() {
            continue;
        }
        for path in sorted_dir(&dir)? {
            let name = match path.file_name().and_then(|n| n.to_str()) {
                Some(n) => n.to_owned(),
                None => continue,
            };
            if name.ends_with(LABEL_SUFFIX) {
                continue;
            }
            let Some(format) = ImageFormat::from_path(&path) else { continue };
            let stem = name.rsplit_once('.').map_or(name.as_str(), |(s, _)| s).to_owned();
            let id = format!("{class}/{stem}");
            let label_path = dir.join(format!("{stem}{LABEL_SUFFIX}"));
            if !label_path.exists() {
                return Err(DatasetError::MissingLabels(id));
            }
            let image = load_image(&path, format)?;
            let labels = load_labels(&label_path)?;
            if image.shape() != labels.shape() {
                return Err(DatasetError::LabelShape { id, image: image.shape(), labels: labels.shape() });
            }
            samples.push(Sample { id, class_index, image, labels });
        }
    }
    if samples.is_empty() {
        return Err(DatasetError::Empty(root.to_path_buf()));
    }
    Ok(Dataset::new(classes, samples))
}

/// Writes `dataset` in the standard layout. `extra` supplies per-sample
/// manifest fields (SCR draw, seed) by sample id.
pub fn write_dataset(
    root: &Path,
    dataset: &Dataset,
    format: ImageFormat,
    extra: impl Fn(&Sample) -> (Option<f64>, Option<u64>),
    generator: Option<serde_json::Value>,
) -> Result<(), DatasetError> {
    let mut entries = Vec::with_capacity(dataset.len());
    for sample in &dataset.samples {
        let class = &dataset.classes[sample.class_index];
        let stem = sample.id.rsplit('/').next().unwrap_or(&sample.id);
        let dir = root.join(class);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        save_image(&dir.join(format!("{stem}.{}", format.extension())), &sample.image, format)?;
        save_labels(&dir.join(format!("{stem}{LABEL_SUFFIX}")), &sample.labels)?;
        let (scr_db, seed) = extra(sample);
        entries.push(ManifestEntry { id: sample.id.clone(), class: class.clone(), scr_db, seed });
    }
    let manifest = Manifest { schema: 1, classes: dataset.classes.clone(), samples: entries, generator };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(io_err(&path))
}
