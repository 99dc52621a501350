//! Back-to-front merge of per-instance results.
//!
//! Mask coverage stands in for depth: the instance with the fewest pixels is
//! assumed farthest and is pasted first, the largest last, so it wins any
//! overlap. Ties go to the lower instance index.

use crate::crop::{paste_back_in_place, InstanceCrop};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, RasterImage};

/// Number of set pixels.
pub fn coverage(mask: &BinaryMask) -> usize {
    mask.count_ones()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeLayer {
    pub result: RasterImage,
    pub crop: InstanceCrop,
    /// Pixel count of the instance mask in full-image coordinates.
    pub coverage: usize,
    pub instance_index: usize,
    /// Only read by [`OrderingStrategy::ExternalDepth`]; larger is farther.
    pub depth: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OrderingStrategy {
    #[default]
    CoverageAscending,
    /// Order by caller-supplied per-layer depth, farthest first. No depth
    /// estimator ships with this crate.
    ExternalDepth,
}

/// Merge order for `layers`: coverage ascending, ties by instance index.
pub fn order_layers(layers: &[CompositeLayer]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by_key(|&i| (layers[i].coverage, layers[i].instance_index));
    order
}

fn order_by_depth(layers: &[CompositeLayer]) -> Result<Vec<usize>> {
    let mut keyed = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let d = l.depth.filter(|d| d.is_finite()).ok_or_else(|| {
            Error::invalid(format!(
                "instance {} has no depth for depth ordering",
                l.instance_index
            ))
        })?;
        keyed.push((i, d));
    }
    keyed.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(layers[a.0].instance_index.cmp(&layers[b.0].instance_index))
    });
    Ok(keyed.into_iter().map(|(i, _)| i).collect())
}

/// Paste every layer onto a copy of `base` in merge order. The result does
/// not depend on the order of `layers`.
pub fn recursive_stitch(
    base: &RasterImage,
    layers: &[CompositeLayer],
    strategy: OrderingStrategy,
    feather: usize,
) -> Result<RasterImage> {
    for l in layers {
        if !l.crop.placement.source_rect.fits_within(base.width(), base.height()) {
            return Err(Error::invalid(format!(
                "instance {} placed outside the {}x{} base image",
                l.instance_index,
                base.width(),
                base.height()
            )));
        }
    }
    let order = match strategy {
        OrderingStrategy::CoverageAscending => order_layers(layers),
        OrderingStrategy::ExternalDepth => order_by_depth(layers)?,
    };
    let mut canvas = base.clone();
    for i in order {
        let l = &layers[i];
        paste_back_in_place(&mut canvas, &l.result, &l.crop, feather)?;
    }
    Ok(canvas)
}
