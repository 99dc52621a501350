//! Inception Score and Fréchet Inception Distance.
//!
//! Both metrics take the output of a [`FeatureExtractor`]: a class
//! probability row per image for IS and a feature vector per image for FID.
//! [`ToyExtractor`] is a deterministic stand-in for a pretrained network;
//! the real network is reached through the inference bridge.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generative::mix64;
use crate::image::RasterImage;

/// Eigenvalues below this (after clipping) mark a numerically suspect FID.
pub const EIGEN_WARN_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    rows: Vec<Vec<f64>>,
}

impl PredictionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidDistribution {
                    row: i,
                    reason: format!("has {} classes, expected {k}", row.len()),
                });
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidDistribution {
                    row: i,
                    reason: format!("contains {v}"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidDistribution {
                    row: i,
                    reason: format!("sums to {sum}"),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// KL(p || q) with natural log and 0 log 0 = 0.
fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// Mean and population standard deviation of `exp(mean KL(p(y|x) || p(y)))`
/// over `splits` contiguous, near-equal partitions of the rows.
pub fn inception_score(preds: &PredictionMatrix, splits: usize) -> Result<(f64, f64)> {
    let n = preds.len();
    if splits < 1 || n < splits {
        return Err(Error::invalid(format!(
            "need 1 <= splits <= rows, got splits {splits} for {n} rows"
        )));
    }
    let k = preds.classes();
    let scores: Vec<f64> = (0..splits)
        .map(|s| {
            let part = &preds.rows[s * n / splits..(s + 1) * n / splits];
            let mut marginal = vec![0.0; k];
            for row in part {
                for (m, v) in marginal.iter_mut().zip(row) {
                    *m += v;
                }
            }
            marginal.iter_mut().for_each(|m| *m /= part.len() as f64);
            let mean_kl =
                part.iter().map(|row| kl_divergence(row, &marginal)).sum::<f64>() / part.len() as f64;
            mean_kl.exp()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl FeatureMoments {
    /// Checks dimensions, finiteness, symmetry and (numerical) PSD.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid(format!(
                "covariance is {}x{}, mean has {d} entries",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("moments contain non-finite values"));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        if d > 0 {
            let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
            if min_eig < -1e-10 * scale {
                return Err(Error::invalid(format!(
                    "covariance has eigenvalue {min_eig}; not positive semidefinite"
                )));
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (n - 1) covariance of the rows.
pub fn moments_from_features(features: &[Vec<f64>]) -> Result<FeatureMoments> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let d = features[0].len();
    if let Some(i) = features.iter().position(|r| r.len() != d) {
        return Err(Error::invalid(format!("feature row {i} has the wrong length")));
    }
    let mut mean = DVector::zeros(d);
    for row in features {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for row in features {
        let centered = DVector::from_iterator(d, row.iter().zip(mean.iter()).map(|(v, m)| v - m));
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    cov /= (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("features contain non-finite values"));
    }
    Ok(FeatureMoments { mean, cov })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidScore {
    /// Non-negative distance.
    pub value: f64,
    /// Value before clamping at zero.
    pub raw: f64,
    /// Smallest eigenvalue seen before clipping, across both square roots.
    pub min_eigenvalue: f64,
}

impl FidScore {
    /// Clipping removed eigenvalues more negative than the warning
    /// tolerance, or the raw score was materially negative.
    pub fn numerically_suspect(&self) -> bool {
        self.min_eigenvalue < -EIGEN_WARN_TOLERANCE || self.raw < -EIGEN_WARN_TOLERANCE
    }
}

/// Square root of a symmetric PSD matrix, negative eigenvalues clipped.
fn psd_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&roots) * v.transpose(), min)
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of the square root is taken through the symmetric product
/// `sqrt(S_a) S_b sqrt(S_a)`, which has the same eigenvalues as `S_a S_b`.
pub fn fid(a: &FeatureMoments, b: &FeatureMoments) -> Result<FidScore> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "moment dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    for m in [a, b] {
        if m.mean.iter().chain(m.cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("moments contain non-finite values"));
        }
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    if a.dim() == 0 {
        return Ok(FidScore {
            value: mean_term,
            raw: mean_term,
            min_eigenvalue: 0.0,
        });
    }
    let (sqrt_a, min_a) = psd_sqrt(&a.cov);
    let product = &sqrt_a * &b.cov * &sqrt_a;
    let product = (&product + product.transpose()) * 0.5;
    let eig = SymmetricEigen::new(product).eigenvalues;
    let min_p = eig.min();
    let tr_sqrt: f64 = eig.iter().map(|l| l.max(0.0).sqrt()).sum();
    let raw = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    let score = FidScore {
        value: raw.max(0.0),
        raw,
        min_eigenvalue: min_a.min(min_p),
    };
    if score.numerically_suspect() {
        log::warn!(
            "FID numerically suspect: raw {raw:.3e}, min eigenvalue {:.3e}",
            score.min_eigenvalue
        );
    }
    Ok(score)
}

/// Class probabilities and an embedding for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub probabilities: Vec<f64>,
    pub features: Vec<f64>,
}

pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    fn extract(&self, image: &RasterImage) -> Result<Extraction>;
}

/// Deterministic extractor over coarse image statistics.
///
/// The statistic vector `s` holds, in order: per-channel means (3),
/// per-channel standard deviations (3), mean squared horizontal and vertical
/// forward differences averaged over channels (2), and a constant 1.
/// With `w(a, b) = 2 * (mix64(a * 0x100000001 ^ b) >> 11) / 2^53 - 1`:
///
/// ```text
/// feature[j] = sum_k w(j, k) * s[k]
/// logit[c]   = 4 * sum_k w(0x8000_0000 + c, k) * s[k]
/// prob       = softmax(logit)
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyExtractor {
    pub classes: usize,
    pub dims: usize,
}

impl ToyExtractor {
    pub fn new(classes: usize, dims: usize) -> Self {
        Self { classes, dims }
    }

    fn weight(a: u64, b: u64) -> f64 {
        let h = mix64(a.wrapping_mul(0x1_0000_0001) ^ b);
        2.0 * ((h >> 11) as f64 / (1u64 << 53) as f64) - 1.0
    }

    pub fn statistics(image: &RasterImage) -> [f64; 9] {
        let (w, h) = image.dims();
        let n = (w * h).max(1) as f64;
        let mut mean = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for px in image.data().chunks_exact(3) {
            for c in 0..3 {
                mean[c] += px[c] as f64;
                sq[c] += (px[c] as f64).powi(2);
            }
        }
        let mean = mean.map(|m| m / n);
        let std: [f64; 3] = std::array::from_fn(|c| (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt());
        let (mut gx, mut gy) = (0.0f64, 0.0f64);
        for y in 0..h {
            for x in 0..w {
                let p = image.pixel(x, y);
                if x + 1 < w {
                    let q = image.pixel(x + 1, y);
                    gx += (0..3).map(|c| ((q[c] - p[c]) as f64).powi(2)).sum::<f64>() / 3.0;
                }
                if y + 1 < h {
                    let q = image.pixel(x, y + 1);
                    gy += (0..3).map(|c| ((q[c] - p[c]) as f64).powi(2)).sum::<f64>() / 3.0;
                }
            }
        }
        let gx = if w > 1 { gx / ((w - 1) * h) as f64 } else { 0.0 };
        let gy = if h > 1 { gy / (w * (h - 1)) as f64 } else { 0.0 };
        [mean[0], mean[1], mean[2], std[0], std[1], std[2], gx, gy, 1.0]
    }
}

impl FeatureExtractor for ToyExtractor {
    fn name(&self) -> &str {
        "toy"
    }

    fn extract(&self, image: &RasterImage) -> Result<Extraction> {
        let s = Self::statistics(image);
        let project = |row: u64| -> f64 {
            s.iter()
                .enumerate()
                .map(|(k, v)| Self::weight(row, k as u64) * v)
                .sum()
        };
        let features = (0..self.dims as u64).map(project).collect();
        let logits: Vec<f64> = (0..self.classes as u64)
            .map(|c| 4.0 * project(0x8000_0000 + c))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(Extraction {
            probabilities: exps.into_iter().map(|e| e / total).collect(),
            features,
        })
    }
}

/// Run the extractor over a set in parallel, keeping input order.
pub fn extract_all(
    images: &[RasterImage],
    extractor: &dyn FeatureExtractor,
) -> Result<(PredictionMatrix, Vec<Vec<f64>>)> {
    let out: Vec<Extraction> = images
        .par_iter()
        .map(|img| extractor.extract(img))
        .collect::<Result<_>>()?;
    let (probs, feats) = out
        .into_iter()
        .map(|e| (e.probabilities, e.features))
        .unzip();
    Ok((PredictionMatrix::new(probs)?, feats))
}
