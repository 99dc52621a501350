//! Pixel grids, binary masks and box geometry shared by every stage.
//!
//! Intensities are stored as `f32` in the unit interval. Conversion to and
//! from 8-bit happens only at codec and wire boundaries, using
//! round-half-up quantization to 1/255 steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Quantize a unit-interval intensity to 8 bits (round half up, clamped).
#[inline]
pub fn to_u8(v: f32) -> u8 {
    let scaled = (v as f64 * 255.0 + 0.5).floor();
    scaled.clamp(0.0, 255.0) as u8
}

#[inline]
pub fn from_u8(b: u8) -> f32 {
    b as f32 / 255.0
}

/// `from_u8(to_u8(v))`. A projection: applying it twice equals applying it once.
#[inline]
pub fn quantize(v: f32) -> f32 {
    from_u8(to_u8(v))
}

/// Row-major RGB image with unit-interval samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * CHANNELS {
            return Err(Error::invalid(format!(
                "image data length {} does not match {width}x{height}x{CHANNELS}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "intensity {} at sample {bad} outside [0, 1]",
                data[bad]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * CHANNELS {
            return Err(Error::invalid(format!(
                "rgb8 buffer length {} does not match {width}x{height}",
                bytes.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data: bytes.iter().copied().map(from_u8).collect(),
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().copied().map(to_u8).collect()
    }

    /// Snap every sample to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(quantize).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes a pixel, clamping each sample into [0, 1].
    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        for c in 0..CHANNELS {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Copy out the pixels inside `rect`.
    pub fn sub_image(&self, rect: &BoundingBox) -> Result<Self> {
        rect.check_within(self.width, self.height)?;
        let (w, h) = (rect.width(), rect.height());
        let mut data = Vec::with_capacity(w * h * CHANNELS);
        for y in rect.y_min..rect.y_max {
            let start = (y * self.width + rect.x_min) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + w * CHANNELS]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    /// Resize with half-pixel-center alignment.
    ///
    /// Same dimensions return an exact copy regardless of filter.
    pub fn resize(&self, new_width: usize, new_height: usize, filter: Filter) -> Result<Self> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::invalid(format!(
                "cannot resize to {new_width}x{new_height}"
            )));
        }
        if self.is_empty() {
            return Err(Error::invalid("cannot resize an empty image"));
        }
        if (new_width, new_height) == self.dims() {
            return Ok(self.clone());
        }
        let data = match filter {
            Filter::Nearest => {
                let xs = nearest_map(self.width, new_width);
                let ys = nearest_map(self.height, new_height);
                let mut out = Vec::with_capacity(new_width * new_height * CHANNELS);
                for &sy in &ys {
                    for &sx in &xs {
                        let i = (sy * self.width + sx) * CHANNELS;
                        out.extend_from_slice(&self.data[i..i + CHANNELS]);
                    }
                }
                out
            }
            Filter::Bilinear => {
                let xs = bilinear_map(self.width, new_width);
                let ys = bilinear_map(self.height, new_height);
                let mut out = Vec::with_capacity(new_width * new_height * CHANNELS);
                for &(y0, y1, ty) in &ys {
                    for &(x0, x1, tx) in &xs {
                        for c in 0..CHANNELS {
                            let at = |x: usize, y: usize| self.data[(y * self.width + x) * CHANNELS + c];
                            let top = lerp(at(x0, y0), at(x1, y0), tx);
                            let bottom = lerp(at(x0, y1), at(x1, y1), tx);
                            out.push(lerp(top, bottom, ty).clamp(0.0, 1.0));
                        }
                    }
                }
                out
            }
        };
        Ok(Self {
            width: new_width,
            height: new_height,
            data,
        })
    }
}

/// `a + t (b - a)`, exact when `a == b`.
#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Source index for each destination index: `floor((i + 0.5) * src / dst)`.
pub(crate) fn nearest_map(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|i| (((2 * i + 1) * src) / (2 * dst)).min(src - 1))
        .collect()
}

fn bilinear_map(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    Bilinear,
    Nearest,
}

/// Row-major boolean mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask length {} does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Tight bounding box of the set bits, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX).then_some(BoundingBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        })
    }

    pub fn sub_mask(&self, rect: &BoundingBox) -> Result<Self> {
        rect.check_within(self.width, self.height)?;
        Ok(Self::from_fn(rect.width(), rect.height(), |x, y| {
            self.get(rect.x_min + x, rect.y_min + y)
        }))
    }

    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::invalid("mask dimensions differ"));
        }
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    /// Chebyshev dilation: a pixel is set iff some input bit lies within
    /// `radius` in both axes.
    pub fn dilate(&self, radius: usize) -> Self {
        if radius == 0 || self.bits.is_empty() {
            return self.clone();
        }
        // Separable: a square structuring element is a row pass then a column pass.
        let mut rows = vec![false; self.bits.len()];
        for y in 0..self.height {
            let row = &self.bits[y * self.width..(y + 1) * self.width];
            let out = &mut rows[y * self.width..(y + 1) * self.width];
            spread_line(row, out, radius);
        }
        let mut bits = vec![false; self.bits.len()];
        let mut column = vec![false; self.height];
        let mut spread = vec![false; self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                column[y] = rows[y * self.width + x];
            }
            spread_line(&column, &mut spread, radius);
            for y in 0..self.height {
                bits[y * self.width + x] = spread[y];
            }
        }
        Self {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    /// Nearest-neighbour resize; stays binary.
    pub fn resize_nearest(&self, new_width: usize, new_height: usize) -> Result<Self> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::invalid(format!(
                "cannot resize mask to {new_width}x{new_height}"
            )));
        }
        if (new_width, new_height) == self.dims() {
            return Ok(self.clone());
        }
        let xs = nearest_map(self.width, new_width);
        let ys = nearest_map(self.height, new_height);
        Ok(Self::from_fn(new_width, new_height, |x, y| {
            self.get(xs[x], ys[y])
        }))
    }
}

/// 1-D max filter of half-width `radius` using a running count.
fn spread_line(input: &[bool], out: &mut [bool], radius: usize) {
    let n = input.len();
    let mut count = 0usize;
    // Window for position i is [i - radius, i + radius].
    for &b in input.iter().take(radius.min(n)) {
        count += b as usize;
    }
    for i in 0..n {
        if i + radius < n && input[i + radius] {
            count += 1;
        }
        if i > radius && input[i - radius - 1] {
            count -= 1;
        }
        out[i] = count > 0;
    }
}

/// Half-open pixel rectangle: `x_min..x_max`, `y_min..y_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::DegenerateGeometry(format!(
                "box ({x_min},{y_min},{x_max},{y_max}) has no area"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains_point(&self, x: usize, y: usize) -> bool {
        (self.x_min..self.x_max).contains(&x) && (self.y_min..self.y_max).contains(&y)
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && self.x_max <= width && self.y_max <= height
    }

    pub(crate) fn check_within(&self, width: usize, height: usize) -> Result<()> {
        if self.fits_within(width, height) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "rect ({},{},{},{}) outside {width}x{height}",
                self.x_min, self.y_min, self.x_max, self.y_max
            )))
        }
    }

    /// Grow by `by` pixels on every side, clipped to the given bounds.
    pub fn expanded_within(&self, by: usize, width: usize, height: usize) -> Self {
        Self {
            x_min: self.x_min.saturating_sub(by),
            y_min: self.y_min.saturating_sub(by),
            x_max: (self.x_max + by).min(width),
            y_max: (self.y_max + by).min(height),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: usize, h: usize) -> RasterImage {
        let data = (0..w * h * CHANNELS)
            .map(|i| (i % 251) as f32 / 250.0)
            .collect();
        RasterImage::new(w, h, data).unwrap()
    }

    #[test]
    fn resize_same_dims_is_identity() {
        let img = gradient(16, 16);
        for filter in [Filter::Bilinear, Filter::Nearest] {
            assert_eq!(img.resize(16, 16, filter).unwrap(), img);
        }
    }

    #[test]
    fn bilinear_constant_stays_constant() {
        let img = RasterImage::filled(2, 2, [0.5; 3]);
        let out = img.resize(4, 4, Filter::Bilinear).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn nearest_upsample_two_to_four() {
        let img = RasterImage::new(2, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let out = img.resize(4, 1, Filter::Nearest).unwrap();
        let red: Vec<f32> = (0..4).map(|x| out.pixel(x, 0)[0]).collect();
        assert_eq!(red, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn resize_rejects_zero_dims() {
        let img = gradient(4, 4);
        assert!(matches!(
            img.resize(0, 4, Filter::Nearest),
            Err(Error::InvalidArgument(_))
        ));
        assert!(img.resize(4, 0, Filter::Bilinear).is_err());
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(RasterImage::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(RasterImage::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn dilate_single_center_bit() {
        let mut m = BinaryMask::new(5, 5);
        m.set(2, 2, true);
        let d = m.dilate(1);
        assert_eq!(d.count_ones(), 9);
        assert_eq!(d.bounding_box(), Some(BoundingBox::new(1, 1, 4, 4).unwrap()));
        assert_eq!(m.dilate(0), m);
    }

    fn dilate_brute(m: &BinaryMask, r: usize) -> BinaryMask {
        BinaryMask::from_fn(m.width(), m.height(), |x, y| {
            (0..m.height()).any(|sy| {
                (0..m.width()).any(|sx| {
                    m.get(sx, sy) && sx.abs_diff(x) <= r && sy.abs_diff(y) <= r
                })
            })
        })
    }

    #[test]
    fn dilate_two_corners_clipped() {
        let mut m = BinaryMask::new(5, 5);
        m.set(0, 0, true);
        m.set(4, 4, true);
        let d = m.dilate(2);
        let oracle = dilate_brute(&m, 2);
        assert_eq!(oracle.count_ones(), 17);
        assert_eq!(d, oracle);
    }

    #[test]
    fn quantize_is_projection_on_grid() {
        for b in 0..=255u8 {
            assert_eq!(to_u8(from_u8(b)), b);
        }
        assert_eq!(to_u8(0.5 / 255.0), 1);
        assert_eq!(to_u8(-0.2), 0);
        assert_eq!(to_u8(1.2), 255);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::bool::weighted(0.15), w * h)
                .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dilate_matches_brute_force(m in arb_mask(), r in 0usize..4) {
            prop_assert_eq!(m.dilate(r), dilate_brute(&m, r));
        }

        #[test]
        fn dilate_is_monotone_in_radius(m in arb_mask(), a in 0usize..4, extra in 0usize..4) {
            let small = m.dilate(a);
            let large = m.dilate(a + extra);
            for (s, l) in small.bits().iter().zip(large.bits()) {
                prop_assert!(!*s || *l);
            }
            for (orig, s) in m.bits().iter().zip(small.bits()) {
                prop_assert!(!*orig || *s);
            }
        }

        #[test]
        fn quantize_twice_equals_once(v in 0.0f32..=1.0) {
            prop_assert_eq!(quantize(quantize(v)).to_bits(), quantize(v).to_bits());
        }

        #[test]
        fn resize_constant_is_constant(
            w in 1usize..9, h in 1usize..9, nw in 1usize..20, nh in 1usize..20, v in 0.0f32..=1.0
        ) {
            let img = RasterImage::filled(w, h, [v; 3]);
            for filter in [Filter::Bilinear, Filter::Nearest] {
                let out = img.resize(nw, nh, filter).unwrap();
                prop_assert_eq!(out.dims(), (nw, nh));
                prop_assert!(out.data().iter().all(|x| *x == v));
            }
        }
    }
}
