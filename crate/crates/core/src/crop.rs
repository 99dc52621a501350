//! Square, padded crops around detections and the inverse paste.
//!
//! Crop geometry:
//! 1. Scale the detection box's width and height by `1 + context_factor`
//!    about its center.
//! 2. Square it by growing the short axis to the long one, symmetrically.
//! 3. Fit it to the image by shifting; only an axis longer than the image
//!    is shrunk (to the full image extent).

use crate::detection::InstanceDetection;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, BoundingBox, Filter, RasterImage};

/// Maps between original-image coordinates and crop coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropPlacement {
    pub source_rect: BoundingBox,
    pub crop_side: usize,
}

impl CropPlacement {
    pub fn scale_x(&self) -> f64 {
        self.crop_side as f64 / self.source_rect.width() as f64
    }

    pub fn scale_y(&self) -> f64 {
        self.crop_side as f64 / self.source_rect.height() as f64
    }

    /// Crop-side over source-side; the two axes agree unless the window had
    /// to shrink to the image.
    pub fn scale(&self) -> f64 {
        self.scale_x()
    }

    /// Continuous mapping of an image coordinate into crop space.
    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.source_rect.x_min as f64) * self.scale_x(),
            (y - self.source_rect.y_min as f64) * self.scale_y(),
        )
    }

    pub fn to_source(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x / self.scale_x() + self.source_rect.x_min as f64,
            y / self.scale_y() + self.source_rect.y_min as f64,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceCrop {
    /// `crop_side x crop_side` model input.
    pub pixels: RasterImage,
    /// Dilated mask in crop coordinates.
    pub mask: BinaryMask,
    /// Dilated mask at source resolution, covering `placement.source_rect`.
    /// Paste-back uses this so the written region never exceeds it.
    pub source_mask: BinaryMask,
    pub placement: CropPlacement,
}

/// Square window around `bbox` per the module rules.
pub fn crop_window(
    bbox: &BoundingBox,
    image_width: usize,
    image_height: usize,
    context_factor: f64,
) -> Result<BoundingBox> {
    if !(context_factor >= 0.0 && context_factor.is_finite()) {
        return Err(Error::invalid(format!(
            "context_factor must be finite and >= 0, got {context_factor}"
        )));
    }
    if !bbox.fits_within(image_width, image_height) {
        return Err(Error::DegenerateGeometry(format!(
            "box {bbox:?} not inside {image_width}x{image_height}"
        )));
    }
    let long = bbox.width().max(bbox.height());
    let side = ((long as f64 * (1.0 + context_factor)).round() as usize).max(long);

    let place = |lo: usize, hi: usize, extent: usize| -> (usize, usize) {
        if side >= extent {
            return (0, extent);
        }
        let center2 = (lo + hi) as i64; // twice the center
        let mut start = (center2 - side as i64).div_euclid(2);
        start = start.clamp(0, (extent - side) as i64);
        (start as usize, start as usize + side)
    };
    let (x_min, x_max) = place(bbox.x_min, bbox.x_max, image_width);
    let (y_min, y_max) = place(bbox.y_min, bbox.y_max, image_height);
    BoundingBox::new(x_min, y_min, x_max, y_max)
}

/// Cut a model-ready square crop for one detection.
pub fn prepare_crop(
    image: &RasterImage,
    det: &InstanceDetection,
    resolution: usize,
    context_factor: f64,
    dilation: usize,
) -> Result<InstanceCrop> {
    if resolution == 0 {
        return Err(Error::invalid("crop resolution must be positive"));
    }
    if det.mask.dims() != image.dims() {
        return Err(Error::invalid("detection mask does not match image"));
    }
    let rect = crop_window(&det.bbox, image.width(), image.height(), context_factor)?;

    // Dilate over a margin so bits just outside the window still spread in.
    let margin = rect.expanded_within(dilation, image.width(), image.height());
    let dilated = det.mask.sub_mask(&margin)?.dilate(dilation);
    let inner = BoundingBox::new(
        rect.x_min - margin.x_min,
        rect.y_min - margin.y_min,
        rect.x_max - margin.x_min,
        rect.y_max - margin.y_min,
    )?;
    let source_mask = dilated.sub_mask(&inner)?;

    let pixels = image
        .sub_image(&rect)?
        .resize(resolution, resolution, Filter::Bilinear)?;
    let mask = source_mask.resize_nearest(resolution, resolution)?;
    Ok(InstanceCrop {
        pixels,
        mask,
        source_mask,
        placement: CropPlacement {
            source_rect: rect,
            crop_side: resolution,
        },
    })
}

/// Per-pixel blend weight inside `mask`: chessboard distance to the nearest
/// unset pixel divided by `feather`, capped at 1. Zero outside the mask.
fn feather_alpha(mask: &BinaryMask, feather: usize) -> Vec<f32> {
    let (w, h) = mask.dims();
    if feather == 0 {
        return mask.bits().iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
    }
    // Two-pass chamfer transform with unit diagonal cost (exact chessboard).
    let inf = usize::MAX / 2;
    let mut dist: Vec<usize> = mask.bits().iter().map(|b| if *b { inf } else { 0 }).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if dist[i] == 0 {
                continue;
            }
            let mut d = dist[i];
            if x > 0 {
                d = d.min(dist[i - 1] + 1);
            }
            if y > 0 {
                d = d.min(dist[i - w] + 1);
                if x > 0 {
                    d = d.min(dist[i - w - 1] + 1);
                }
                if x + 1 < w {
                    d = d.min(dist[i - w + 1] + 1);
                }
            }
            dist[i] = d;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            if dist[i] == 0 {
                continue;
            }
            let mut d = dist[i];
            if x + 1 < w {
                d = d.min(dist[i + 1] + 1);
            }
            if y + 1 < h {
                d = d.min(dist[i + w] + 1);
                if x + 1 < w {
                    d = d.min(dist[i + w + 1] + 1);
                }
                if x > 0 {
                    d = d.min(dist[i + w - 1] + 1);
                }
            }
            dist[i] = d;
        }
    }
    dist.into_iter()
        .map(|d| {
            if d == 0 {
                0.0
            } else if d >= inf {
                // No unset pixel anywhere in the window.
                1.0
            } else {
                (d as f32 / feather as f32).min(1.0)
            }
        })
        .collect()
}

/// Write an inpainted crop back onto `canvas` under the crop's mask.
///
/// With `feather == 0` masked pixels are replaced outright and everything
/// else is untouched. With `feather > 0` a linear ramp of that width inside
/// the mask boundary blends old and new.
pub fn paste_back(
    canvas: &RasterImage,
    crop_result: &RasterImage,
    crop: &InstanceCrop,
    feather: usize,
) -> Result<RasterImage> {
    let mut out = canvas.clone();
    paste_back_in_place(&mut out, crop_result, crop, feather)?;
    Ok(out)
}

pub(crate) fn paste_back_in_place(
    canvas: &mut RasterImage,
    crop_result: &RasterImage,
    crop: &InstanceCrop,
    feather: usize,
) -> Result<()> {
    if crop_result.dims() != crop.pixels.dims() {
        return Err(Error::invalid(format!(
            "crop result is {}x{}, crop is {}x{}",
            crop_result.width(),
            crop_result.height(),
            crop.pixels.width(),
            crop.pixels.height()
        )));
    }
    let rect = crop.placement.source_rect;
    rect.check_within(canvas.width(), canvas.height())?;
    if crop.source_mask.dims() != (rect.width(), rect.height()) {
        return Err(Error::invalid("source mask does not match placement"));
    }
    let resized = crop_result.resize(rect.width(), rect.height(), Filter::Bilinear)?;
    let alpha = feather_alpha(&crop.source_mask, feather);
    let w = rect.width();
    for y in 0..rect.height() {
        for x in 0..w {
            let a = alpha[y * w + x];
            if a == 0.0 {
                continue;
            }
            let (cx, cy) = (rect.x_min + x, rect.y_min + y);
            let new = resized.pixel(x, y);
            if a == 1.0 {
                canvas.set_pixel(cx, cy, new);
            } else {
                let old = canvas.pixel(cx, cy);
                canvas.set_pixel(
                    cx,
                    cy,
                    std::array::from_fn(|c| old[c] + a * (new[c] - old[c])),
                );
            }
        }
    }
    Ok(())
}
