//! Seeded synthetic street scenes with COCO annotations.
//!
//! Every image is already on the 8-bit grid, so it survives a PNG round
//! trip unchanged. People are random convex polygons painted in a flat
//! color over a textured background; masks come from the same polygons.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    write_image, CocoAnnotation, CocoAnnotations, CocoCategory, CocoImage, Segmentation,
    WriteOptions,
};
use crate::detection::rasterize_polygons;
use crate::error::{Error, Result};
use crate::image::{from_u8, RasterImage};

pub const PERSON_CATEGORY: u64 = 1;
pub const CAR_CATEGORY: u64 = 3;

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub min_people: usize,
    pub max_people: usize,
    /// Polygon radius range in pixels.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Chance of one extra non-person ("car") annotation per image.
    pub car_probability: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 48,
            min_people: 2,
            max_people: 5,
            min_radius: 4.0,
            max_radius: 14.0,
            car_probability: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub annotations: CocoAnnotations,
    /// `(identifier, pixels)`; the identifier is the file stem.
    pub images: Vec<(String, RasterImage)>,
}

fn random_polygon(rng: &mut impl Rng, spec: &SceneSpec) -> Vec<f64> {
    let n = rng.random_range(3..9);
    let r = rng.random_range(spec.min_radius..=spec.max_radius);
    // Taller than wide, like a standing person.
    let (rx, ry) = (r * rng.random_range(0.4..0.9), r);
    let cx = rng.random_range(0.0..spec.width as f64);
    let cy = rng.random_range(0.0..spec.height as f64);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    (0..n)
        .flat_map(|i| {
            let a = phase + i as f64 * std::f64::consts::TAU / n as f64;
            [
                (cx + rx * a.cos()).clamp(0.0, spec.width as f64),
                (cy + ry * a.sin()).clamp(0.0, spec.height as f64),
            ]
        })
        .map(|v| (v * 4.0).round() / 4.0)
        .collect()
}

fn background(rng: &mut impl Rng, w: usize, h: usize) -> RasterImage {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..200.0));
    let slope: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
    let mut bytes = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = base[c] + slope[c] * (x as f64 - y as f64 * 0.5) + rng.random_range(-12.0..12.0);
                bytes.push(v.clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage::from_rgb8(w, h, &bytes).expect("buffer sized to dims")
}

impl SyntheticDataset {
    /// `count` images, deterministic in `seed`.
    pub fn generate(spec: &SceneSpec, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut annotations = CocoAnnotations {
            images: Vec::new(),
            annotations: Vec::new(),
            categories: vec![
                CocoCategory {
                    id: PERSON_CATEGORY,
                    name: "person".into(),
                },
                CocoCategory {
                    id: CAR_CATEGORY,
                    name: "car".into(),
                },
            ],
        };
        let mut images = Vec::with_capacity(count);
        let mut next_ann = 1u64;
        for i in 0..count {
            let image_id = i as u64 + 1;
            let stem = format!("scene_{i:04}");
            let mut img = background(&mut rng, spec.width, spec.height);
            let people = rng.random_range(spec.min_people..=spec.max_people.max(spec.min_people));
            let extra_car = rng.random_bool(spec.car_probability.clamp(0.0, 1.0));
            let mut placed = 0;
            let mut attempts = 0;
            while placed < people + extra_car as usize && attempts < 100 {
                attempts += 1;
                let poly = random_polygon(&mut rng, spec);
                let mask = rasterize_polygons(std::slice::from_ref(&poly), spec.width, spec.height);
                if mask.count_ones() < 24 {
                    continue;
                }
                let color: [f32; 3] = std::array::from_fn(|_| from_u8(rng.random()));
                for y in 0..spec.height {
                    for x in 0..spec.width {
                        if mask.get(x, y) {
                            img.set_pixel(x, y, color);
                        }
                    }
                }
                let category_id = if placed < people { PERSON_CATEGORY } else { CAR_CATEGORY };
                annotations.annotations.push(CocoAnnotation {
                    id: next_ann,
                    image_id,
                    category_id,
                    segmentation: Segmentation::Polygons(vec![poly]),
                    bbox: None,
                });
                next_ann += 1;
                placed += 1;
            }
            annotations.images.push(CocoImage {
                id: image_id,
                file_name: format!("{stem}.png"),
                width: spec.width,
                height: spec.height,
            });
            images.push((stem, img));
        }
        Self {
            annotations,
            images,
        }
    }

    /// Write `images/*.png` and `annotations.json` under `root`. Returns
    /// `(image_dir, annotation_path)`.
    pub fn write_to(&self, root: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let root = root.as_ref();
        let image_dir = root.join("images");
        std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
        for (stem, img) in &self.images {
            write_image(img, image_dir.join(format!("{stem}.png")), WriteOptions::default())?;
        }
        let ann_path = root.join("annotations.json");
        std::fs::write(&ann_path, self.annotations.to_json()).map_err(|e| Error::io(&ann_path, e))?;
        Ok((image_dir, ann_path))
    }
}
