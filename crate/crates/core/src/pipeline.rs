//! detect → crop → inpaint → stitch, for one image or a whole dataset.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classical::{apply_classical, ClassicalMethod, ClassicalParams};
use crate::compositor::{recursive_stitch, CompositeLayer, OrderingStrategy};
use crate::crop::{crop_window, prepare_crop, InstanceCrop};
use crate::dataset::{
    read_image, write_image, DatasetEntry, DatasetSink, DatasetSource, RunCounts, RunSummary,
    WriteOptions,
};
use crate::detection::{detect, DetectorBackend, DetectorConfig};
use crate::error::{Error, Result};
use crate::generative::{
    batch_inpaint, instance_seed, DiffusionParams, InpaintBackend, InpaintRequest,
};
use crate::image::{BinaryMask, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Diffusion inpainting of each instance.
    Fadm,
    Blur,
    MaskFill,
    Pixelize,
}

impl Method {
    pub fn classical(self) -> Option<ClassicalMethod> {
        match self {
            Method::Fadm => None,
            Method::Blur => Some(ClassicalMethod::Blur),
            Method::MaskFill => Some(ClassicalMethod::MaskFill),
            Method::Pixelize => Some(ClassicalMethod::Pixelize),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Fadm => "fadm",
            Method::Blur => "blur",
            Method::MaskFill => "mask_fill",
            Method::Pixelize => "pixelize",
        }
    }
}

/// What to do with instances whose backend call failed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    FailImage,
    /// Fill the failed instance with the constant fill so it is still hidden.
    #[default]
    MaskFillFallback,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropResolution {
    /// Every crop is resized to `diffusion.resolution`.
    #[default]
    Fixed,
    /// Each crop keeps its source window's side (no resampling).
    MatchSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnonymizationConfig {
    pub method: Method,
    pub diffusion: DiffusionParams,
    pub detector: DetectorConfig,
    pub classical: ClassicalParams,
    pub context_factor: f64,
    pub mask_dilation: usize,
    pub feather: usize,
    pub max_batch: usize,
    pub workers: usize,
    pub global_seed: u64,
    pub crop_resolution: CropResolution,
    pub on_backend_failure: FailurePolicy,
}

impl Default for AnonymizationConfig {
    fn default() -> Self {
        Self {
            method: Method::Fadm,
            diffusion: DiffusionParams::default(),
            detector: DetectorConfig::default(),
            classical: ClassicalParams::default(),
            context_factor: 0.2,
            mask_dilation: 4,
            feather: 0,
            max_batch: 4,
            workers: 1,
            global_seed: 0,
            crop_resolution: CropResolution::Fixed,
            on_backend_failure: FailurePolicy::MaskFillFallback,
        }
    }
}

impl AnonymizationConfig {
    pub fn validate(&self) -> Result<()> {
        self.diffusion.validate()?;
        self.detector.validate()?;
        self.classical.validate()?;
        if !(self.context_factor >= 0.0 && self.context_factor.is_finite()) {
            return Err(Error::Config(format!(
                "context_factor must be >= 0, got {}",
                self.context_factor
            )));
        }
        if self.max_batch < 1 {
            return Err(Error::Config("max_batch must be at least 1".into()));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over every setting that can change output pixels. `workers`
    /// and `max_batch` are excluded.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = 1;
        canonical.max_batch = 1;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Detector and generator used by a run.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub detector: &'a dyn DetectorBackend,
    pub inpainter: &'a dyn InpaintBackend,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_index: usize,
    pub coverage: usize,
    pub seed: Option<u64>,
    /// Wall time of the backend call that produced this instance.
    pub backend_ms: Option<f64>,
    pub fallback: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub instances: Vec<InstanceRecord>,
    pub notes: Vec<String>,
}

impl ImageReport {
    pub fn fallbacks(&self) -> usize {
        self.instances.iter().filter(|r| r.fallback).count()
    }
}

/// Records per-call latency keyed by the seeds in each call.
struct TimedBackend<'a> {
    inner: &'a dyn InpaintBackend,
    latencies: Mutex<HashMap<u64, f64>>,
}

impl InpaintBackend for TimedBackend<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn inpaint_batch(&self, reqs: &[InpaintRequest]) -> Vec<Result<RasterImage>> {
        let start = Instant::now();
        let out = self.inner.inpaint_batch(reqs);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let mut lat = self.latencies.lock().expect("latency map poisoned");
        for r in reqs {
            lat.insert(r.params.seed, ms);
        }
        out
    }
}

/// Anonymize one image. With no detections the output is an exact copy.
pub fn anonymize_image(
    image_id: &str,
    image: &RasterImage,
    config: &AnonymizationConfig,
    backends: Backends<'_>,
) -> Result<(RasterImage, ImageReport)> {
    config.validate()?;
    let detections = detect(image_id, image, &config.detector, backends.detector)?;
    let mut report = ImageReport {
        image_id: image_id.to_string(),
        ..Default::default()
    };
    if detections.is_empty() {
        return Ok((image.clone(), report));
    }

    if let Some(method) = config.method.classical() {
        let mut union = BinaryMask::new(image.width(), image.height());
        for det in &detections {
            union.union_with(&det.mask.dilate(config.mask_dilation))?;
            report.instances.push(InstanceRecord {
                instance_index: det.instance_index,
                coverage: det.coverage(),
                ..Default::default()
            });
        }
        let out = apply_classical(image, &union, method, &config.classical)?;
        return Ok((out, report));
    }

    let crops: Vec<InstanceCrop> = detections
        .par_iter()
        .map(|det| {
            let resolution = match config.crop_resolution {
                CropResolution::Fixed => config.diffusion.resolution,
                CropResolution::MatchSource => {
                    let w = crop_window(&det.bbox, image.width(), image.height(), config.context_factor)?;
                    w.width().max(w.height())
                }
            };
            prepare_crop(image, det, resolution, config.context_factor, config.mask_dilation)
        })
        .collect::<Result<_>>()?;

    let requests: Vec<InpaintRequest> = detections
        .iter()
        .zip(&crops)
        .map(|(det, crop)| {
            let params = DiffusionParams {
                resolution: crop.placement.crop_side,
                seed: instance_seed(config.global_seed, image_id, det.instance_index),
                ..config.diffusion.clone()
            };
            InpaintRequest::new(crop.clone(), params)
        })
        .collect::<Result<_>>()?;

    let timed = TimedBackend {
        inner: backends.inpainter,
        latencies: Mutex::new(HashMap::new()),
    };
    let results: Vec<(RasterImage, bool)> = match batch_inpaint(&requests, &timed, config.max_batch) {
        Ok(images) => images.into_iter().map(|img| (img, false)).collect(),
        Err(batch) => {
            if config.on_backend_failure == FailurePolicy::FailImage {
                let (idx, first) = batch.failures.into_iter().next().expect("non-empty");
                return Err(Error::Backend {
                    backend: backends.inpainter.name().to_string(),
                    message: format!("instance {idx}: {first}"),
                });
            }
            for (idx, e) in &batch.failures {
                report
                    .notes
                    .push(format!("instance {idx}: backend failed ({e}); mask fill used"));
            }
            batch
                .results
                .into_iter()
                .zip(&requests)
                .map(|(r, req)| match r {
                    Some(img) => Ok((img, false)),
                    None => fallback_fill(&req.crop, &config.classical).map(|img| (img, true)),
                })
                .collect::<Result<_>>()?
        }
    };

    let latencies = timed.latencies.into_inner().expect("latency map poisoned");
    let layers: Vec<CompositeLayer> = detections
        .iter()
        .zip(crops)
        .zip(results)
        .zip(&requests)
        .map(|(((det, crop), (result, fallback)), req)| {
            report.instances.push(InstanceRecord {
                instance_index: det.instance_index,
                coverage: det.coverage(),
                seed: Some(req.params.seed),
                backend_ms: latencies.get(&req.params.seed).copied(),
                fallback,
            });
            CompositeLayer {
                result,
                crop,
                coverage: det.coverage(),
                instance_index: det.instance_index,
                depth: None,
            }
        })
        .collect();

    let out = recursive_stitch(image, &layers, OrderingStrategy::CoverageAscending, config.feather)?;
    Ok((out, report))
}

fn fallback_fill(crop: &InstanceCrop, params: &ClassicalParams) -> Result<RasterImage> {
    apply_classical(&crop.pixels, &crop.mask, ClassicalMethod::MaskFill, params)
}

enum Outcome {
    Processed(ImageReport),
    Skipped,
    Failed(String),
}

fn marker_name(entry: &DatasetEntry, digest: &str) -> String {
    let safe: String = entry
        .id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.{}.done", &digest[..16])
}

fn file_sha256(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| hex::encode(Sha256::digest(&b)))
}

fn process_entry(
    entry: &DatasetEntry,
    sink: &DatasetSink,
    config: &AnonymizationConfig,
    digest: &str,
    backends: Backends<'_>,
) -> Result<Outcome> {
    let out_path = sink.output_path(entry);
    let marker = sink.marker_dir().join(marker_name(entry, digest));
    if sink.resume {
        if let (Ok(recorded), Some(actual)) = (std::fs::read_to_string(&marker), file_sha256(&out_path)) {
            if recorded.trim() == actual {
                return Ok(Outcome::Skipped);
            }
        }
    }
    let image = match read_image(&entry.path) {
        Ok(img) => img,
        Err(e) => {
            log::warn!("skipping unreadable {}: {e}", entry.path.display());
            return Ok(Outcome::Failed(e.to_string()));
        }
    };
    let (out, report) = match anonymize_image(&entry.id, &image, config, backends) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("failed to anonymize {}: {e}", entry.id);
            return Ok(Outcome::Failed(e.to_string()));
        }
    };
    write_image(&out, &out_path, WriteOptions::default())?;
    let hash = file_sha256(&out_path).ok_or_else(|| Error::NotFound(out_path.display().to_string()))?;
    std::fs::write(&marker, hash).map_err(|e| Error::io(&marker, e))?;
    Ok(Outcome::Processed(report))
}

/// Anonymize every image of `source` into `sink`.
///
/// The annotation file, if any, is copied through byte for byte. With
/// `sink.resume`, images whose completion marker matches the current config
/// digest and output file are skipped; without it, an existing output is a
/// collision and nothing is processed.
pub fn anonymize_dataset(
    source: &DatasetSource,
    sink: &DatasetSink,
    config: &AnonymizationConfig,
    backends: Backends<'_>,
) -> Result<RunSummary> {
    let started = Instant::now();
    config.validate()?;
    let entries = source.entries()?;

    if !sink.resume {
        if let Some(existing) = entries.iter().map(|e| sink.output_path(e)).find(|p| p.exists()) {
            return Err(Error::OutputCollision(existing));
        }
    }
    let marker_dir = sink.marker_dir();
    std::fs::create_dir_all(&marker_dir).map_err(|e| Error::io(&marker_dir, e))?;
    if let Some(ann) = &source.annotations {
        let name = ann
            .file_name()
            .ok_or_else(|| Error::invalid(format!("annotation path {} has no file name", ann.display())))?;
        let dest = sink.dir.join(name);
        std::fs::copy(ann, &dest).map_err(|e| Error::io(&dest, e))?;
    }

    let digest = config.digest();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<Result<Outcome>> = pool.install(|| {
        entries
            .par_iter()
            .map(|entry| process_entry(entry, sink, config, &digest, backends))
            .collect()
    });

    let mut summary = RunSummary {
        config_digest: digest,
        counts: RunCounts {
            total: entries.len(),
            ..Default::default()
        },
        ..Default::default()
    };
    for (entry, outcome) in entries.iter().zip(outcomes) {
        match outcome? {
            Outcome::Processed(report) => {
                summary.counts.processed += 1;
                summary.counts.instances_anonymized += report.instances.len();
                summary.counts.instances_fallback += report.fallbacks();
                summary.images.push(report);
            }
            Outcome::Skipped => summary.counts.skipped += 1,
            Outcome::Failed(why) => {
                summary.counts.failed += 1;
                summary.failures.push((entry.id.clone(), why));
            }
        }
    }
    summary.wall_time_ms = started.elapsed().as_millis();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{NullDetector, OracleDetector};
    use crate::generative::MockInpainter;
    use crate::synth::{SceneSpec, SyntheticDataset};

    #[test]
    fn digest_ignores_worker_count() {
        let a = AnonymizationConfig::default();
        let b = AnonymizationConfig {
            workers: 8,
            ..a.clone()
        };
        let c = AnonymizationConfig {
            global_seed: 1,
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn no_people_means_exact_copy() {
        let img = RasterImage::filled(16, 16, [0.25, 0.5, 0.75]);
        let backends = Backends {
            detector: &NullDetector,
            inpainter: &MockInpainter,
        };
        for method in [Method::Fadm, Method::Blur, Method::MaskFill, Method::Pixelize] {
            let cfg = AnonymizationConfig {
                method,
                ..Default::default()
            };
            let (out, report) = anonymize_image("x", &img, &cfg, backends).unwrap();
            assert_eq!(out, img);
            assert!(report.instances.is_empty());
        }
    }

    #[test]
    fn identity_configuration_reproduces_input() {
        let data = SyntheticDataset::generate(&SceneSpec::default(), 3, 11);
        let detector = OracleDetector::new(data.annotations.clone());
        let cfg = AnonymizationConfig {
            diffusion: DiffusionParams {
                denoise_strength: 0.0,
                ..Default::default()
            },
            context_factor: 0.0,
            mask_dilation: 0,
            feather: 0,
            crop_resolution: CropResolution::MatchSource,
            ..Default::default()
        };
        let backends = Backends {
            detector: &detector,
            inpainter: &MockInpainter,
        };
        for (id, img) in &data.images {
            let (out, report) = anonymize_image(id, img, &cfg, backends).unwrap();
            assert!(!report.instances.is_empty());
            assert_eq!(&out, img);
        }
    }

    struct Failing;

    impl InpaintBackend for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn inpaint_batch(&self, reqs: &[InpaintRequest]) -> Vec<Result<RasterImage>> {
            reqs.iter()
                .map(|_| {
                    Err(Error::Transport {
                        backend: "failing".into(),
                        message: "down".into(),
                    })
                })
                .collect()
        }
    }

    #[test]
    fn failure_policy_falls_back_or_fails() {
        let data = SyntheticDataset::generate(&SceneSpec::default(), 1, 3);
        let detector = OracleDetector::new(data.annotations.clone());
        let (id, img) = &data.images[0];
        let backends = Backends {
            detector: &detector,
            inpainter: &Failing,
        };
        let cfg = AnonymizationConfig {
            diffusion: DiffusionParams {
                resolution: 32,
                ..Default::default()
            },
            ..Default::default()
        };
        let (out, report) = anonymize_image(id, img, &cfg, backends).unwrap();
        assert!(report.instances.iter().all(|r| r.fallback));
        assert_eq!(report.notes.len(), report.instances.len());
        assert_ne!(&out, img);

        let strict = AnonymizationConfig {
            on_backend_failure: FailurePolicy::FailImage,
            ..cfg
        };
        assert!(matches!(
            anonymize_image(id, img, &strict, backends),
            Err(Error::Backend { .. })
        ));
    }

    #[test]
    fn config_parses_from_toml_and_rejects_unknown_keys() {
        let cfg: AnonymizationConfig = toml::from_str(
            r#"
            method = "pixelize"
            workers = 3
            [diffusion]
            denoise_strength = 0.4
            [classical]
            block_size = 8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Pixelize);
        assert_eq!(cfg.diffusion.denoise_strength, 0.4);
        assert_eq!(cfg.diffusion.total_steps, 50);
        assert_eq!(cfg.classical.block_size, 8);
        assert!(toml::from_str::<AnonymizationConfig>("wrokers = 2").is_err());
        let zero = AnonymizationConfig {
            workers: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }
}
