//! Inpainting backend contract.
//!
//! A request carries a square crop, its mask and [`DiffusionParams`]. The
//! chain starts at index `floor(denoise_strength * total_steps)`, and the
//! original is mixed in with weight `1 - denoise_strength`. Backends must
//! leave pixels outside the mask untouched.
//!
//! [`MockInpainter`] implements only the mixing part of that contract:
//!
//! ```text
//! out(x, y) = (1 - b) * in(x, y) + b * g(seed, x, y)    inside the mask
//! out(x, y) = in(x, y)                                  outside
//! ```
//!
//! with `g` given by [`mock_noise`].

use serde::{Deserialize, Deserializer, Serialize};

use crate::crop::InstanceCrop;
use crate::error::{Error, Result};
use crate::image::RasterImage;

pub const DEFAULT_POSITIVE_PROMPT: &str =
    "RAW photo, subject, 8k uhd, dslr, soft lighting, high quality, film grain, Fujifilm XT3";

pub const DEFAULT_NEGATIVE_PROMPT: &str = "deformed iris, deformed pupils, semi-realistic, cgi, 3d, render, sketch, cartoon, drawing, anime), text, cropped, out of frame, worst quality, low quality, jpeg artifacts, ugly, duplicate, morbid, mutilated, extra fingers, mutated hands, poorly drawn hands, poorly drawn face, mutation, deformed, blurry, dehydrated, bad anatomy, bad proportions, extra limbs, cloned face, disfigured, gross proportions, malformed limbs, missing arms, missing legs, extra arms, extra legs, fused fingers, too many fingers, long neck";

/// Model resolutions of the supported real generators.
pub const MODEL_RESOLUTIONS: [usize; 3] = [512, 768, 1024];

pub const RECOMMENDED_RESOLUTION: usize = 768;

fn clamped_strength<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if !v.is_finite() {
        return Err(serde::de::Error::custom("denoise_strength must be finite"));
    }
    let c = v.clamp(0.0, 1.0);
    if c != v {
        log::warn!("denoise_strength {v} clamped to {c}");
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionParams {
    pub total_steps: u32,
    #[serde(deserialize_with = "clamped_strength")]
    pub denoise_strength: f64,
    pub positive_prompt: String,
    pub negative_prompt: String,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            total_steps: 50,
            denoise_strength: 0.6,
            positive_prompt: DEFAULT_POSITIVE_PROMPT.into(),
            negative_prompt: DEFAULT_NEGATIVE_PROMPT.into(),
            resolution: RECOMMENDED_RESOLUTION,
            seed: 0,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.denoise_strength) {
            return Err(Error::Config(format!(
                "denoise_strength {} outside [0, 1]",
                self.denoise_strength
            )));
        }
        if self.total_steps < 1 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if self.resolution == 0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn start_index(&self) -> u32 {
        start_index(self.denoise_strength, self.total_steps)
    }
}

/// `floor(strength * steps)`, the chain index sampling starts from.
///
/// `strength` is treated as the rational it denotes: a product within a few
/// ulps of an integer is taken to be that integer, so `0.57 * 100` gives 57
/// even though the binary product is 56.99999999999999.
pub fn start_index(strength: f64, steps: u32) -> u32 {
    let strength = strength.clamp(0.0, 1.0);
    let product = strength * steps as f64;
    let nearest = product.round();
    let idx = if (product - nearest).abs() <= 64.0 * f64::EPSILON * product.max(1.0) {
        nearest
    } else {
        product.floor()
    };
    (idx as u32).min(steps)
}

/// splitmix64 output function; a bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Mock generator value at a crop pixel, in 1/255 steps on [0, 1]:
///
/// ```text
/// k = (x << 32) | y
/// h = mix64(seed + mix64(k + 0x9e3779b97f4a7c15))     (wrapping adds)
/// g = (h >> 56) / 255
/// ```
pub fn mock_noise(seed: u64, x: u32, y: u32) -> f64 {
    let k = ((x as u64) << 32) | y as u64;
    let h = mix64(seed.wrapping_add(mix64(k.wrapping_add(GOLDEN))));
    (h >> 56) as f64 / 255.0
}

/// 64-bit FNV-1a, used to fold image identifiers into seeds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for one instance:
/// `mix64(mix64(global ^ fnv1a64(image_id)) + (index + 1) * 0x9e3779b97f4a7c15)`.
///
/// Distinct indices give distinct seeds for the same image.
pub fn instance_seed(global_seed: u64, image_id: &str, instance_index: usize) -> u64 {
    let base = mix64(global_seed ^ fnv1a64(image_id.as_bytes()));
    mix64(base.wrapping_add((instance_index as u64).wrapping_add(1).wrapping_mul(GOLDEN)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InpaintRequest {
    pub crop: InstanceCrop,
    pub params: DiffusionParams,
}

impl InpaintRequest {
    pub fn new(crop: InstanceCrop, params: DiffusionParams) -> Result<Self> {
        let req = Self { crop, params };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let (w, h) = self.crop.pixels.dims();
        if w != h || w != self.params.resolution {
            return Err(Error::invalid(format!(
                "crop is {w}x{h} but resolution is {}",
                self.params.resolution
            )));
        }
        if self.crop.mask.dims() != (w, h) {
            return Err(Error::invalid("crop mask does not match crop pixels"));
        }
        Ok(())
    }
}

/// The mixing contract evaluated with [`mock_noise`].
pub fn mock_inpaint(req: &InpaintRequest) -> Result<RasterImage> {
    req.validate()?;
    let b = req.params.denoise_strength;
    let keep = 1.0 - b;
    let seed = req.params.seed;
    let src = &req.crop.pixels;
    let mut out = src.clone();
    for y in 0..src.height() {
        for x in 0..src.width() {
            if !req.crop.mask.get(x, y) {
                continue;
            }
            let g = mock_noise(seed, x as u32, y as u32);
            let p = src.pixel(x, y);
            out.set_pixel(x, y, p.map(|v| (keep * v as f64 + b * g) as f32));
        }
    }
    Ok(out)
}

/// Copy `input` back over `result` wherever the crop mask is unset.
pub fn restore_outside_mask(result: &mut RasterImage, crop: &InstanceCrop) {
    for y in 0..result.height() {
        for x in 0..result.width() {
            if !crop.mask.get(x, y) {
                result.set_pixel(x, y, crop.pixels.pixel(x, y));
            }
        }
    }
}

pub trait InpaintBackend: Send + Sync {
    fn name(&self) -> &str;

    /// One backend call. Must return exactly one result per request, in
    /// request order.
    fn inpaint_batch(&self, reqs: &[InpaintRequest]) -> Vec<Result<RasterImage>>;
}

impl<B: InpaintBackend + ?Sized> InpaintBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn inpaint_batch(&self, reqs: &[InpaintRequest]) -> Vec<Result<RasterImage>> {
        (**self).inpaint_batch(reqs)
    }
}

impl<B: InpaintBackend + ?Sized> InpaintBackend for std::sync::Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn inpaint_batch(&self, reqs: &[InpaintRequest]) -> Vec<Result<RasterImage>> {
        (**self).inpaint_batch(reqs)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MockInpainter;

impl InpaintBackend for MockInpainter {
    fn name(&self) -> &str {
        "mock"
    }

    fn inpaint_batch(&self, reqs: &[InpaintRequest]) -> Vec<Result<RasterImage>> {
        reqs.iter().map(mock_inpaint).collect()
    }
}

/// Some requests in a batch failed. Successful results are kept at their
/// request positions.
#[derive(Debug, thiserror::Error)]
#[error("{} of {} inpaint requests failed (indices {:?})", failures.len(), results.len(), self.failed_indices())]
pub struct BatchError {
    pub results: Vec<Option<RasterImage>>,
    pub failures: Vec<(usize, Error)>,
}

impl BatchError {
    pub fn failed_indices(&self) -> Vec<usize> {
        self.failures.iter().map(|(i, _)| *i).collect()
    }
}

/// Dispatch requests in chunks of at most `max_batch`, one backend call per
/// chunk. Chunks may run concurrently; results always line up with `reqs`.
pub fn batch_inpaint(
    reqs: &[InpaintRequest],
    backend: &dyn InpaintBackend,
    max_batch: usize,
) -> std::result::Result<Vec<RasterImage>, BatchError> {
    use rayon::prelude::*;

    assert!(max_batch >= 1, "max_batch must be at least 1");
    let per_chunk: Vec<Vec<Result<RasterImage>>> = reqs
        .par_chunks(max_batch)
        .map(|chunk| {
            let mut out = backend.inpaint_batch(chunk);
            if out.len() != chunk.len() {
                let msg = format!(
                    "{} returned {} results for {} requests",
                    backend.name(),
                    out.len(),
                    chunk.len()
                );
                out = chunk.iter().map(|_| Err(Error::Protocol(msg.clone()))).collect();
            }
            out
        })
        .collect();

    let mut results = Vec::with_capacity(reqs.len());
    let mut failures = Vec::new();
    for (i, r) in per_chunk.into_iter().flatten().enumerate() {
        match r {
            Ok(img) => results.push(Some(img)),
            Err(e) => {
                results.push(None);
                failures.push((i, e));
            }
        }
    }
    if failures.is_empty() {
        Ok(results.into_iter().map(|r| r.expect("no failures")).collect())
    } else {
        Err(BatchError { results, failures })
    }
}
