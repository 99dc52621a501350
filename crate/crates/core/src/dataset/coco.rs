//! COCO-style instance annotations.
//!
//! Only the subset of the public schema that the pipeline needs is modelled;
//! unknown top-level and per-record keys (`info`, `licenses`, `area`,
//! `iscrowd`, ...) are ignored so real COCO exports load unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

/// Run-length counts: a list of integers (uncompressed) or the LEB-style
/// string encoding (compressed, not decoded here).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Uncompressed(Vec<u64>),
    Compressed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rle {
    pub counts: RleCounts,
    /// `[height, width]`, as in COCO.
    pub size: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle(Rle),
}

impl Segmentation {
    pub fn encoding_name(&self) -> &'static str {
        match self {
            Segmentation::Polygons(_) => "polygon",
            Segmentation::Rle(Rle {
                counts: RleCounts::Uncompressed(_),
                ..
            }) => "uncompressed RLE",
            Segmentation::Rle(Rle {
                counts: RleCounts::Compressed(_),
                ..
            }) => "compressed RLE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: Segmentation,
    #[serde(default)]
    pub bbox: Option<[f64; 4]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotations {
    pub images: Vec<CocoImage>,
    #[serde(default)]
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

impl CocoAnnotations {
    /// Parse and validate a COCO JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let parsed: CocoAnnotations =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation types always serialize")
    }

    /// Referential integrity plus polygon shape checks.
    pub fn validate(&self) -> Result<()> {
        let image_ids: BTreeSet<u64> = self.images.iter().map(|i| i.id).collect();
        let category_ids: BTreeSet<u64> = self.categories.iter().map(|c| c.id).collect();

        let missing_images: Vec<u64> = self
            .annotations
            .iter()
            .filter(|a| !image_ids.contains(&a.image_id))
            .map(|a| a.image_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !missing_images.is_empty() {
            return Err(Error::Integrity {
                message: "annotations reference missing image ids".into(),
                ids: missing_images,
            });
        }
        let missing_categories: Vec<u64> = self
            .annotations
            .iter()
            .filter(|a| !category_ids.contains(&a.category_id))
            .map(|a| a.category_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if !missing_categories.is_empty() {
            return Err(Error::Integrity {
                message: "annotations reference missing category ids".into(),
                ids: missing_categories,
            });
        }

        for (i, ann) in self.annotations.iter().enumerate() {
            if let Segmentation::Polygons(polys) = &ann.segmentation {
                for (j, poly) in polys.iter().enumerate() {
                    if poly.len() < 6 || poly.len() % 2 != 0 {
                        return Err(Error::Parse {
                            path: format!("annotations[{i}].segmentation[{j}]"),
                            message: format!(
                                "polygon needs an even number of coordinates >= 6, got {}",
                                poly.len()
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn image(&self, image_id: u64) -> Option<&CocoImage> {
        self.images.iter().find(|i| i.id == image_id)
    }

    /// Look an image up by numeric id, file name, or file stem.
    pub fn resolve_image(&self, key: &str) -> Option<&CocoImage> {
        if let Ok(id) = key.parse::<u64>() {
            if let Some(img) = self.image(id) {
                return Some(img);
            }
        }
        self.images.iter().find(|img| {
            img.file_name == key
                || Path::new(&img.file_name)
                    .file_stem()
                    .is_some_and(|s| s.to_string_lossy() == key)
        })
    }

    pub fn category_names(&self) -> BTreeMap<u64, &str> {
        self.categories
            .iter()
            .map(|c| (c.id, c.name.as_str()))
            .collect()
    }

    pub fn annotations_for(&self, image_id: u64) -> impl Iterator<Item = &CocoAnnotation> {
        self.annotations
            .iter()
            .filter(move |a| a.image_id == image_id)
    }
}

/// Read and validate an annotation file.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<CocoAnnotations> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.display().to_string())
        } else {
            Error::io(path, e)
        }
    })?;
    CocoAnnotations::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4}],
        "annotations": [],
        "categories": [{"id": 1, "name": "person"}]
    }"#;

    #[test]
    fn minimal_file_parses() {
        let coco = CocoAnnotations::from_json(MINIMAL).unwrap();
        assert_eq!(coco.images.len(), 1);
        assert_eq!(coco.annotations_for(1).count(), 0);
    }

    #[test]
    fn dangling_image_reference_names_the_id() {
        let text = r#"{
            "images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4}],
            "annotations": [{"id": 9, "image_id": 77, "category_id": 1,
                             "segmentation": [[0,0,1,0,1,1]]}],
            "categories": [{"id": 1, "name": "person"}]
        }"#;
        match CocoAnnotations::from_json(text) {
            Err(Error::Integrity { ids, .. }) => assert_eq!(ids, vec![77]),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn schema_violation_reports_json_path() {
        let text = r#"{
            "images": [{"id": 1, "file_name": "a.png", "width": "wide", "height": 4}],
            "categories": []
        }"#;
        match CocoAnnotations::from_json(text) {
            Err(Error::Parse { path, .. }) => assert_eq!(path, "images[0].width"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_polygon_rejected() {
        let text = r#"{
            "images": [{"id": 1, "file_name": "a.png", "width": 4, "height": 4}],
            "annotations": [{"id": 2, "image_id": 1, "category_id": 1,
                             "segmentation": [[0,0,1,0]]}],
            "categories": [{"id": 1, "name": "person"}]
        }"#;
        assert!(matches!(
            CocoAnnotations::from_json(text),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn segmentation_variants_deserialize() {
        let poly: Segmentation = serde_json::from_str("[[0,0,4,0,4,4]]").unwrap();
        assert_eq!(poly.encoding_name(), "polygon");
        let rle: Segmentation =
            serde_json::from_str(r#"{"counts": [5,3,8], "size": [4,4]}"#).unwrap();
        assert_eq!(rle.encoding_name(), "uncompressed RLE");
        let compressed: Segmentation =
            serde_json::from_str(r#"{"counts": "52203", "size": [4,4]}"#).unwrap();
        assert_eq!(compressed.encoding_name(), "compressed RLE");
    }

    #[test]
    fn resolve_by_id_name_or_stem() {
        let coco = CocoAnnotations::from_json(MINIMAL).unwrap();
        assert_eq!(coco.resolve_image("1").unwrap().id, 1);
        assert_eq!(coco.resolve_image("a.png").unwrap().id, 1);
        assert_eq!(coco.resolve_image("a").unwrap().id, 1);
        assert!(coco.resolve_image("b").is_none());
    }
}
