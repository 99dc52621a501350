//! Image codecs, COCO annotations, dataset directories and run reports.

mod codec;
mod coco;
mod report;

use std::path::{Path, PathBuf};

pub use codec::{
    decode_mask_png, decode_png, encode_mask_png, encode_png, is_supported_image, read_image,
    write_image, WriteOptions,
};
pub use coco::{
    load_annotations, CocoAnnotation, CocoAnnotations, CocoCategory, CocoImage, Rle, RleCounts,
    Segmentation,
};
pub use report::{
    comparison_grid, emit_report, metrics_csv, write_comparison_grid, MetricRow, RunCounts,
    RunSummary, METRICS_HEADER,
};

use crate::error::{Error, Result};

/// Input side of a dataset run: a directory (or single file) of images and
/// an optional annotation file.
#[derive(Clone, Debug)]
pub struct DatasetSource {
    pub images: PathBuf,
    pub annotations: Option<PathBuf>,
}

/// One input image: identifier (file stem) plus path.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct DatasetEntry {
    pub id: String,
    pub file_name: String,
    pub path: PathBuf,
}

impl DatasetSource {
    pub fn new(images: impl Into<PathBuf>) -> Self {
        Self {
            images: images.into(),
            annotations: None,
        }
    }

    pub fn with_annotations(mut self, path: impl Into<PathBuf>) -> Self {
        self.annotations = Some(path.into());
        self
    }

    /// Supported image files, sorted by file name.
    pub fn entries(&self) -> Result<Vec<DatasetEntry>> {
        list_images(&self.images)
    }
}

pub fn list_images(path: &Path) -> Result<Vec<DatasetEntry>> {
    let entry = |p: PathBuf| DatasetEntry {
        id: p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        file_name: p
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        path: p,
    };
    if path.is_file() {
        return Ok(vec![entry(path.to_path_buf())]);
    }
    if !path.is_dir() {
        return Err(Error::NotFound(path.display().to_string()));
    }
    let mut out = Vec::new();
    for dirent in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = dirent.map_err(|e| Error::io(path, e))?.path();
        if is_supported_image(&p) {
            out.push(entry(p));
        }
    }
    out.sort();
    Ok(out)
}

/// Output side of a dataset run.
#[derive(Clone, Debug)]
pub struct DatasetSink {
    pub dir: PathBuf,
    pub resume: bool,
}

impl DatasetSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            resume: false,
        }
    }

    pub fn resume(mut self, resume: bool) -> Self {
        self.resume = resume;
        self
    }

    /// Outputs are always PNG, named after the input identifier.
    pub fn output_path(&self, entry: &DatasetEntry) -> PathBuf {
        self.dir.join(format!("{}.png", entry.id))
    }

    pub fn marker_dir(&self) -> PathBuf {
        self.dir.join(".fadm-done")
    }
}
