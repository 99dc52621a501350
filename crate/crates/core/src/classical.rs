//! Classical anonymizers: Gaussian blur, constant fill, pixelization.
//! Each writes only under the mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, RasterImage, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalMethod {
    Blur,
    MaskFill,
    Pixelize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalParams {
    pub blur_sigma: f64,
    pub fill_value: [f32; 3],
    pub block_size: usize,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        Self {
            blur_sigma: 8.0,
            fill_value: [0.5; 3],
            block_size: 16,
        }
    }
}

impl ClassicalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Config(format!("blur_sigma must be > 0, got {}", self.blur_sigma)));
        }
        if self.block_size < 1 {
            return Err(Error::Config("block_size must be at least 1".into()));
        }
        if self.fill_value.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("fill_value components must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn apply_classical(
    image: &RasterImage,
    mask: &BinaryMask,
    method: ClassicalMethod,
    params: &ClassicalParams,
) -> Result<RasterImage> {
    if mask.dims() != image.dims() {
        return Err(Error::invalid(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    params.validate()?;
    let Some(region) = mask.bounding_box() else {
        return Ok(image.clone());
    };
    let mut out = image.clone();
    match method {
        ClassicalMethod::MaskFill => {
            for y in region.y_min..region.y_max {
                for x in region.x_min..region.x_max {
                    if mask.get(x, y) {
                        out.set_pixel(x, y, params.fill_value);
                    }
                }
            }
        }
        ClassicalMethod::Pixelize => pixelize(image, mask, params.block_size, &mut out),
        ClassicalMethod::Blur => blur_under_mask(image, mask, params.blur_sigma, &mut out),
    }
    Ok(out)
}

/// Blocks anchored at (0, 0); each masked pixel takes the mean of the masked
/// pixels in its block.
fn pixelize(image: &RasterImage, mask: &BinaryMask, block: usize, out: &mut RasterImage) {
    let (w, h) = image.dims();
    for by in (0..h).step_by(block) {
        for bx in (0..w).step_by(block) {
            let (x_end, y_end) = ((bx + block).min(w), (by + block).min(h));
            // f64 sums of equal f32 values are exact, so a second pass over
            // an already-pixelized block reproduces it bit for bit.
            let mut sum = [0.0f64; 3];
            let mut n = 0usize;
            for y in by..y_end {
                for x in bx..x_end {
                    if mask.get(x, y) {
                        let p = image.pixel(x, y);
                        for c in 0..CHANNELS {
                            sum[c] += p[c] as f64;
                        }
                        n += 1;
                    }
                }
            }
            if n == 0 {
                continue;
            }
            let mean = sum.map(|s| (s / n as f64) as f32);
            for y in by..y_end {
                for x in bx..x_end {
                    if mask.get(x, y) {
                        out.set_pixel(x, y, mean);
                    }
                }
            }
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian with replicated borders. Equivalent to filtering the
/// whole image and masking the result in, but only the rows and columns
/// that can reach the mask are computed.
fn blur_under_mask(image: &RasterImage, mask: &BinaryMask, sigma: f64, out: &mut RasterImage) {
    let (w, h) = image.dims();
    let kernel = gaussian_kernel(sigma);
    let r = kernel.len() / 2;
    let region = mask.bounding_box().expect("caller checked non-empty");
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    // Horizontal pass for every row the vertical pass will read.
    let row_lo = region.y_min.saturating_sub(r);
    let row_hi = (region.y_max + r).min(h);
    let cols = region.x_min..region.x_max;
    let cw = cols.len();
    let mut horiz = vec![[0.0f64; 3]; (row_hi - row_lo) * cw];
    for y in row_lo..row_hi {
        for x in cols.clone() {
            let mut acc = [0.0f64; 3];
            for (k, wgt) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - r as isize, w);
                let p = image.pixel(sx, y);
                for c in 0..CHANNELS {
                    acc[c] += wgt * p[c] as f64;
                }
            }
            horiz[(y - row_lo) * cw + (x - region.x_min)] = acc;
        }
    }
    for y in region.y_min..region.y_max {
        for x in cols.clone() {
            if !mask.get(x, y) {
                continue;
            }
            let mut acc = [0.0f64; 3];
            for (k, wgt) in kernel.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - r as isize, h);
                let row = &horiz[(sy - row_lo) * cw + (x - region.x_min)];
                for c in 0..CHANNELS {
                    acc[c] += wgt * row[c];
                }
            }
            out.set_pixel(x, y, acc.map(|v| v as f32));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [ClassicalMethod; 3] = [
        ClassicalMethod::Blur,
        ClassicalMethod::MaskFill,
        ClassicalMethod::Pixelize,
    ];

    fn noisy(w: usize, h: usize, seed: u64) -> RasterImage {
        let data = (0..w * h * 3)
            .map(|i| (crate::generative::mix64(seed ^ i as u64) >> 40) as f32 / (1u64 << 24) as f32)
            .collect();
        RasterImage::new(w, h, data).unwrap()
    }

    #[test]
    fn empty_mask_leaves_image_unchanged() {
        let img = noisy(20, 15, 1);
        let mask = BinaryMask::new(20, 15);
        for m in ALL {
            assert_eq!(apply_classical(&img, &mask, m, &ClassicalParams::default()).unwrap(), img);
        }
    }

    #[test]
    fn mask_fill_sets_exactly_the_masked_pixels() {
        let img = noisy(6, 6, 2);
        let mut mask = BinaryMask::new(6, 6);
        for (x, y) in [(0, 0), (3, 2), (5, 5)] {
            mask.set(x, y, true);
        }
        let params = ClassicalParams {
            fill_value: [0.0; 3],
            ..Default::default()
        };
        let out = apply_classical(&img, &mask, ClassicalMethod::MaskFill, &params).unwrap();
        let mut zeroed = 0;
        for y in 0..6 {
            for x in 0..6 {
                if mask.get(x, y) {
                    assert_eq!(out.pixel(x, y), [0.0; 3]);
                    zeroed += 1;
                } else {
                    assert_eq!(out.pixel(x, y), img.pixel(x, y));
                }
            }
        }
        assert_eq!(zeroed, 3);
    }

    #[test]
    fn pixelize_block_mean() {
        let vals = [0.0, 0.2, 0.4, 0.6];
        let mut data = Vec::new();
        for v in vals {
            data.extend_from_slice(&[v; 3]);
        }
        let img = RasterImage::new(2, 2, data).unwrap();
        let mask = BinaryMask::filled(2, 2);
        let params = ClassicalParams {
            block_size: 2,
            ..Default::default()
        };
        let out = apply_classical(&img, &mask, ClassicalMethod::Pixelize, &params).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                for v in out.pixel(x, y) {
                    assert!((v - 0.3).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn blur_matches_full_image_reference() {
        // Reference: blur every pixel with a direct 2-D sum, then mask in.
        let img = noisy(17, 13, 4);
        let mask = BinaryMask::from_fn(17, 13, |x, y| (4..9).contains(&x) && (3..11).contains(&y));
        let sigma = 1.5;
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as isize;
        let out = apply_classical(
            &img,
            &mask,
            ClassicalMethod::Blur,
            &ClassicalParams {
                blur_sigma: sigma,
                ..Default::default()
            },
        )
        .unwrap();
        for y in 0..13 {
            for x in 0..17 {
                if !mask.get(x, y) {
                    assert_eq!(out.pixel(x, y), img.pixel(x, y));
                    continue;
                }
                let mut acc = [0.0f64; 3];
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x as isize + dx).clamp(0, 16) as usize;
                        let sy = (y as isize + dy).clamp(0, 12) as usize;
                        let wgt = k[(dx + r) as usize] * k[(dy + r) as usize];
                        let p = img.pixel(sx, sy);
                        for c in 0..3 {
                            acc[c] += wgt * p[c] as f64;
                        }
                    }
                }
                for c in 0..3 {
                    assert!((out.pixel(x, y)[c] as f64 - acc[c]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_mask_and_bad_params() {
        let img = noisy(4, 4, 0);
        assert!(matches!(
            apply_classical(&img, &BinaryMask::new(3, 4), ClassicalMethod::Blur, &Default::default()),
            Err(Error::InvalidArgument(_))
        ));
        let bad = ClassicalParams {
            block_size: 0,
            ..Default::default()
        };
        assert!(apply_classical(&img, &BinaryMask::filled(4, 4), ClassicalMethod::Pixelize, &bad).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (RasterImage, BinaryMask, usize)> {
        (1usize..30, 1usize..30, any::<u64>(), 1usize..9).prop_flat_map(|(w, h, seed, block)| {
            proptest::collection::vec(proptest::bool::weighted(0.3), w * h).prop_map(move |bits| {
                (noisy(w, h, seed), BinaryMask::from_bits(w, h, bits).unwrap(), block)
            })
        })
    }

    proptest! {
        #[test]
        fn every_method_preserves_outside((img, mask, block) in arb_case()) {
            let params = ClassicalParams { block_size: block, blur_sigma: 2.0, ..Default::default() };
            for m in ALL {
                let out = apply_classical(&img, &mask, m, &params).unwrap();
                for y in 0..img.height() {
                    for x in 0..img.width() {
                        if !mask.get(x, y) {
                            prop_assert_eq!(out.pixel(x, y), img.pixel(x, y));
                        }
                    }
                }
            }
        }

        #[test]
        fn fill_and_pixelize_are_idempotent((img, mask, block) in arb_case()) {
            let params = ClassicalParams { block_size: block, ..Default::default() };
            for m in [ClassicalMethod::MaskFill, ClassicalMethod::Pixelize] {
                let once = apply_classical(&img, &mask, m, &params).unwrap();
                let twice = apply_classical(&once, &mask, m, &params).unwrap();
                prop_assert_eq!(&once, &twice);
            }
        }

        #[test]
        fn pixelize_is_block_constant((img, mask, block) in arb_case()) {
            let params = ClassicalParams { block_size: block, ..Default::default() };
            let out = apply_classical(&img, &mask, ClassicalMethod::Pixelize, &params).unwrap();
            let mut seen = std::collections::HashMap::new();
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if mask.get(x, y) {
                        let v = out.pixel(x, y);
                        let first = *seen.entry((x / block, y / block)).or_insert(v);
                        prop_assert_eq!(first, v);
                    }
                }
            }
        }
    }
}
