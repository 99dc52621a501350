//! Person detection behind a pluggable backend, plus the annotation-driven
//! oracle used for offline and deterministic runs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{CocoAnnotations, Rle, RleCounts, Segmentation};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, BoundingBox, RasterImage};

pub const PERSON: &str = "person";

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceDetection {
    pub class_label: String,
    pub confidence: f64,
    /// Tight bound of `mask`.
    pub bbox: BoundingBox,
    /// Full-image coordinates.
    pub mask: BinaryMask,
    pub instance_index: usize,
}

impl InstanceDetection {
    /// Build a detection whose box is the tight bound of `mask`. Returns
    /// `None` for an empty mask.
    pub fn from_mask(class_label: impl Into<String>, confidence: f64, mask: BinaryMask) -> Option<Self> {
        let bbox = mask.bounding_box()?;
        Some(Self {
            class_label: class_label.into(),
            confidence,
            bbox,
            mask,
            instance_index: 0,
        })
    }

    pub fn coverage(&self) -> usize {
        self.mask.count_ones()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub confidence_threshold: f64,
    pub class_filter: BTreeSet<String>,
    pub min_coverage: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.4,
            class_filter: BTreeSet::from([PERSON.to_string()]),
            min_coverage: 16,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config(format!(
                "confidence_threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        if self.min_coverage < 1 {
            return Err(Error::Config("min_coverage must be at least 1".into()));
        }
        Ok(())
    }
}

/// Anything that can produce raw instance detections for an image.
///
/// `image_id` identifies the image for backends that work from stored
/// annotations; pixel-based backends may ignore it.
pub trait DetectorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn detect_raw(&self, image_id: &str, image: &RasterImage) -> Result<Vec<InstanceDetection>>;
}

/// Run a backend and apply the configured filters. Survivors are
/// re-indexed contiguously from 0 in backend order.
pub fn detect(
    image_id: &str,
    image: &RasterImage,
    config: &DetectorConfig,
    backend: &dyn DetectorBackend,
) -> Result<Vec<InstanceDetection>> {
    if image.is_empty() {
        return Err(Error::invalid("cannot run detection on an empty image"));
    }
    config.validate()?;
    let raw = backend.detect_raw(image_id, image)?;
    let mut out = Vec::with_capacity(raw.len());
    for mut det in raw {
        if det.mask.dims() != image.dims() {
            return Err(Error::Protocol(format!(
                "{} returned a {}x{} mask for a {}x{} image",
                backend.name(),
                det.mask.width(),
                det.mask.height(),
                image.width(),
                image.height()
            )));
        }
        if !config.class_filter.contains(&det.class_label)
            || det.confidence < config.confidence_threshold
            || det.coverage() < config.min_coverage
        {
            continue;
        }
        // Boxes are always rebuilt from the mask.
        det.bbox = det.mask.bounding_box().expect("coverage >= 1");
        det.instance_index = out.len();
        out.push(det);
    }
    Ok(out)
}

/// Pixel-center, even-odd rasterization of one or more polygons given as
/// flat `[x0, y0, x1, y1, ...]` lists. Parts are unioned.
pub fn rasterize_polygons(polygons: &[Vec<f64>], width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    let mut crossings = Vec::new();
    for poly in polygons {
        let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        if pts.len() < 3 {
            continue;
        }
        for y in 0..height {
            let cy = y as f64 + 0.5;
            crossings.clear();
            for i in 0..pts.len() {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % pts.len()];
                // Half-open in y so shared vertices count once.
                if (y0 <= cy) != (y1 <= cy) {
                    crossings.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            crossings.sort_by(|a, b| a.total_cmp(b));
            for span in crossings.chunks_exact(2) {
                // Centers strictly inside [span[0], span[1]).
                let start = (span[0] - 0.5).ceil().max(0.0) as usize;
                let end_f = (span[1] - 0.5).ceil();
                if end_f <= 0.0 {
                    continue;
                }
                let end = (end_f as usize).min(width);
                for x in start..end {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}

/// Expand uncompressed COCO run lengths (alternating zeros/ones starting
/// with zeros, column-major).
pub fn decode_rle(rle: &Rle, width: usize, height: usize) -> Result<BinaryMask> {
    let [rh, rw] = rle.size;
    if (rw, rh) != (width, height) {
        return Err(Error::invalid(format!(
            "RLE size {rw}x{rh} does not match image {width}x{height}"
        )));
    }
    let counts = match &rle.counts {
        RleCounts::Uncompressed(c) => c,
        RleCounts::Compressed(_) => {
            return Err(Error::UnsupportedFormat(
                "compressed RLE segmentation is not supported; convert to polygons or uncompressed RLE".into(),
            ))
        }
    };
    let total = width * height;
    let mut mask = BinaryMask::new(width, height);
    let mut pos = 0usize;
    for (i, &run) in counts.iter().enumerate() {
        let run = run as usize;
        if pos + run > total {
            return Err(Error::invalid(format!(
                "RLE runs cover more than {total} pixels"
            )));
        }
        if i % 2 == 1 {
            for k in pos..pos + run {
                mask.set(k / height, k % height, true);
            }
        }
        pos += run;
    }
    Ok(mask)
}

fn rasterize_segmentation(seg: &Segmentation, width: usize, height: usize) -> Result<BinaryMask> {
    match seg {
        Segmentation::Polygons(polys) => Ok(rasterize_polygons(polys, width, height)),
        Segmentation::Rle(rle) => decode_rle(rle, width, height),
    }
}

fn annotated_instances(
    annotations: &CocoAnnotations,
    image_id: u64,
    keep: impl Fn(&str) -> bool,
) -> Result<Vec<InstanceDetection>> {
    let image = annotations
        .image(image_id)
        .ok_or_else(|| Error::NotFound(format!("image id {image_id} not in annotations")))?;
    let names = annotations.category_names();
    let mut out = Vec::new();
    for ann in annotations.annotations_for(image_id) {
        let label = names.get(&ann.category_id).copied().unwrap_or("unknown");
        if !keep(label) {
            continue;
        }
        let mask = rasterize_segmentation(&ann.segmentation, image.width, image.height)?;
        match InstanceDetection::from_mask(label, 1.0, mask) {
            Some(mut det) => {
                det.instance_index = out.len();
                out.push(det);
            }
            None => log::debug!("annotation {} rasterizes to an empty mask, skipped", ann.id),
        }
    }
    Ok(out)
}

/// Ground-truth person detections for one annotated image, confidence 1.0.
pub fn oracle_detect(annotations: &CocoAnnotations, image_id: u64) -> Result<Vec<InstanceDetection>> {
    annotated_instances(annotations, image_id, |label| label == PERSON)
}

/// Detector backend that answers from ground-truth annotations. Images are
/// resolved by numeric id, file name or file stem. All categories are
/// returned; filtering happens in [`detect`].
#[derive(Clone, Debug)]
pub struct OracleDetector {
    annotations: CocoAnnotations,
}

impl OracleDetector {
    pub fn new(annotations: CocoAnnotations) -> Self {
        Self { annotations }
    }

    pub fn annotations(&self) -> &CocoAnnotations {
        &self.annotations
    }
}

impl DetectorBackend for OracleDetector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn detect_raw(&self, image_id: &str, image: &RasterImage) -> Result<Vec<InstanceDetection>> {
        let entry = self
            .annotations
            .resolve_image(image_id)
            .ok_or_else(|| Error::NotFound(format!("image {image_id:?} not in annotations")))?;
        if (entry.width, entry.height) != image.dims() {
            return Err(Error::invalid(format!(
                "annotated size {}x{} for {image_id:?} differs from pixels {}x{}",
                entry.width,
                entry.height,
                image.width(),
                image.height()
            )));
        }
        annotated_instances(&self.annotations, entry.id, |_| true)
    }
}

/// Backend that never finds anything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullDetector;

impl DetectorBackend for NullDetector {
    fn name(&self) -> &str {
        "null"
    }

    fn detect_raw(&self, _: &str, _: &RasterImage) -> Result<Vec<InstanceDetection>> {
        Ok(Vec::new())
    }
}
