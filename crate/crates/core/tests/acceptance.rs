//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fail.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use fadm::classical::{apply_classical, ClassicalMethod, ClassicalParams};
use fadm::compositor::{recursive_stitch, CompositeLayer, OrderingStrategy};
use fadm::crop::{paste_back, prepare_crop};
use fadm::dataset::{load_annotations, DatasetSink, DatasetSource};
use fadm::detection::{detect, oracle_detect, DetectorConfig, OracleDetector};
use fadm::generative::{mock_inpaint, start_index, DiffusionParams, InpaintRequest, MockInpainter};
use fadm::image::{BinaryMask, RasterImage};
use fadm::metrics::{fid, inception_score, FeatureMoments, PredictionMatrix};
use fadm::pipeline::{anonymize_dataset, anonymize_image, AnonymizationConfig, Backends, CropResolution, Method};
use fadm::synth::{SceneSpec, SyntheticDataset};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn scenes(count: usize, seed: u64) -> SyntheticDataset {
    SyntheticDataset::generate(&SceneSpec::default(), count, seed)
}

fn identity_pipeline() -> Check {
    let data = scenes(20, 1001);
    let detector = OracleDetector::new(data.annotations.clone());
    let config = AnonymizationConfig {
        method: Method::Fadm,
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
    let mut instances = 0;
    for (id, img) in &data.images {
        let (out, report) = anonymize_image(
            id,
            img,
            &config,
            Backends {
                detector: &detector,
                inpainter: &MockInpainter,
            },
        )
        .map_err(err)?;
        instances += report.instances.len();
        ensure(&out == img, || format!("{id}: output differs from input"))?;
    }
    ensure(instances > 0, || "no instances exercised".into())?;
    Ok(format!("20 images, {instances} instances, bit-identical"))
}

fn outside_mask_preservation() -> Check {
    let data = scenes(100, 2002);
    let detector = OracleDetector::new(data.annotations.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let methods = [Method::Fadm, Method::Blur, Method::MaskFill, Method::Pixelize];
    let mut changed = 0usize;
    for (i, (id, img)) in data.images.iter().enumerate() {
        for method in methods {
            let config = AnonymizationConfig {
                method,
                diffusion: DiffusionParams {
                    denoise_strength: rng.random_range(0.0..=1.0),
                    resolution: [24, 48, 96][rng.random_range(0..3)],
                    ..Default::default()
                },
                context_factor: rng.random_range(0.0..0.5),
                mask_dilation: rng.random_range(0..6),
                feather: rng.random_range(0..4),
                global_seed: rng.random(),
                classical: ClassicalParams {
                    blur_sigma: rng.random_range(0.5..6.0),
                    block_size: rng.random_range(1..12),
                    ..Default::default()
                },
                ..Default::default()
            };
            let (out, _) = anonymize_image(
                id,
                img,
                &config,
                Backends {
                    detector: &detector,
                    inpainter: &MockInpainter,
                },
            )
            .map_err(err)?;
            let mut allowed = BinaryMask::new(img.width(), img.height());
            for det in oracle_detect(&data.annotations, i as u64 + 1).map_err(err)? {
                allowed.union_with(&det.mask.dilate(config.mask_dilation)).map_err(err)?;
            }
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let differs = out.pixel(x, y) != img.pixel(x, y);
                    changed += differs as usize;
                    ensure(!differs || allowed.get(x, y), || {
                        format!("{id} {method:?}: pixel ({x},{y}) changed outside the dilated masks")
                    })?;
                }
            }
        }
    }
    ensure(changed > 0, || "nothing was anonymized".into())?;
    Ok(format!("100 scenes x 4 methods, {changed} pixels changed, all inside masks"))
}

/// Serial merge written independently of the library: pick the remaining
/// layer with the smallest (coverage, instance_index) and paste it.
fn serial_merge(base: &RasterImage, layers: &[CompositeLayer], feather: usize) -> RasterImage {
    let mut remaining: Vec<&CompositeLayer> = layers.iter().collect();
    let mut canvas = base.clone();
    while !remaining.is_empty() {
        let mut best = 0;
        for (k, l) in remaining.iter().enumerate() {
            let b = remaining[best];
            if l.coverage < b.coverage || (l.coverage == b.coverage && l.instance_index < b.instance_index) {
                best = k;
            }
        }
        let l = remaining.remove(best);
        canvas = paste_back(&canvas, &l.result, &l.crop, feather).expect("valid layer");
    }
    canvas
}

fn stitch_equivalence() -> Check {
    let data = scenes(100, 3003);
    let detector = OracleDetector::new(data.annotations.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut total_layers = 0;
    for (id, img) in &data.images {
        let feather = rng.random_range(0..3);
        let dets = detect(id, img, &DetectorConfig::default(), &detector).map_err(err)?;
        let mut layers = Vec::new();
        for det in &dets {
            let res = rng.random_range(8..40);
            let crop = prepare_crop(img, det, res, rng.random_range(0.0..0.4), rng.random_range(0..4)).map_err(err)?;
            let params = DiffusionParams {
                denoise_strength: rng.random_range(0.2..=1.0),
                resolution: res,
                seed: rng.random(),
                ..Default::default()
            };
            let req = InpaintRequest::new(crop.clone(), params).map_err(err)?;
            layers.push(CompositeLayer {
                result: mock_inpaint(&req).map_err(err)?,
                coverage: det.coverage(),
                instance_index: det.instance_index,
                depth: None,
                crop,
            });
        }
        // Force some coverage ties so the index tie-break matters.
        if layers.len() >= 2 && rng.random_bool(0.3) {
            layers[1].coverage = layers[0].coverage;
        }
        total_layers += layers.len();
        let expected = serial_merge(img, &layers, feather);
        for shuffle in 0..5 {
            layers.shuffle(&mut rng);
            let got = recursive_stitch(img, &layers, OrderingStrategy::CoverageAscending, feather).map_err(err)?;
            ensure(got == expected, || format!("{id} shuffle {shuffle}: differs from serial merge"))?;
        }
    }
    Ok(format!("100 scenes x 5 shuffles, {total_layers} layers, bit-exact"))
}

fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("under root").to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).expect("readable file"))));
            }
        }
    }
    out
}

fn worker_invariance() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let data = scenes(8, 4004);
    let (images, ann) = data.write_to(tmp.path().join("in")).map_err(err)?;
    let detector = OracleDetector::new(load_annotations(&ann).map_err(err)?);
    let mut trees = Vec::new();
    for workers in [1, 2, 4] {
        let config = AnonymizationConfig {
            workers,
            max_batch: 3,
            global_seed: 44,
            diffusion: DiffusionParams {
                resolution: 64,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = tmp.path().join(format!("out{workers}"));
        anonymize_dataset(
            &DatasetSource::new(&images).with_annotations(&ann),
            &DatasetSink::new(&out),
            &config,
            Backends {
                detector: &detector,
                inpainter: &MockInpainter,
            },
        )
        .map_err(err)?;
        trees.push(tree_hashes(&out));
    }
    ensure(trees[0] == trees[1] && trees[0] == trees[2], || "output trees differ".into())?;
    Ok(format!("workers 1/2/4, {} files each, identical hashes", trees[0].len()))
}

fn beta_monotonicity() -> Check {
    let data = scenes(10, 5005);
    let detector = OracleDetector::new(data.annotations.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut crops = Vec::new();
    'outer: for (id, img) in &data.images {
        for det in detect(id, img, &DetectorConfig::default(), &detector).map_err(err)? {
            crops.push(prepare_crop(img, &det, 32, 0.2, 2).map_err(err)?);
            if crops.len() == 20 {
                break 'outer;
            }
        }
    }
    ensure(crops.len() == 20, || format!("only {} crops", crops.len()))?;
    let betas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    for (k, crop) in crops.iter().enumerate() {
        let seed = rng.random();
        let mut prev = -1.0f64;
        for beta in betas {
            let req = InpaintRequest::new(
                crop.clone(),
                DiffusionParams {
                    denoise_strength: beta,
                    resolution: 32,
                    seed,
                    ..Default::default()
                },
            )
            .map_err(err)?;
            let out = mock_inpaint(&req).map_err(err)?;
            let (mut sum, mut n) = (0.0f64, 0usize);
            for y in 0..32 {
                for x in 0..32 {
                    if crop.mask.get(x, y) {
                        let (a, b) = (out.pixel(x, y), crop.pixels.pixel(x, y));
                        sum += (0..3).map(|c| (a[c] as f64 - b[c] as f64).abs()).sum::<f64>();
                        n += 3;
                    }
                }
            }
            let mad = sum / n as f64;
            ensure(mad >= prev, || format!("crop {k}: change {mad} at beta {beta} below {prev}"))?;
            prev = mad;
        }
    }
    Ok("20 crops x 6 strengths, non-decreasing".into())
}

/// tr sqrt(A B) via the eigenvalues of Lᵀ B L with A = L Lᵀ.
fn analytic_fid(ma: &DVector<f64>, ca: &DMatrix<f64>, mb: &DVector<f64>, cb: &DMatrix<f64>) -> f64 {
    let l = ca.clone().cholesky().expect("positive definite").l();
    let m = l.transpose() * cb * &l;
    let m = (&m + m.transpose()) * 0.5;
    let tr_sqrt: f64 = m.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).sum();
    (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * tr_sqrt
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn sample_moments(rng: &mut ChaCha8Rng, mean: &DVector<f64>, cov: &DMatrix<f64>, n: usize) -> FeatureMoments {
    let d = mean.len();
    let l = cov.clone().cholesky().expect("positive definite").l();
    let samples: Vec<DVector<f64>> = (0..n)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            mean + &l * z
        })
        .collect();
    let mu = samples.iter().fold(DVector::zeros(d), |acc, s| acc + s) / n as f64;
    let mut c = DMatrix::zeros(d, d);
    for s in &samples {
        let dv = s - &mu;
        c += &dv * dv.transpose();
    }
    FeatureMoments::new(mu, c / (n as f64 - 1.0)).expect("valid moments")
}

fn fid_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_self: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for d in 1..=8 {
        for _ in 0..5 {
            let a = FeatureMoments::new(DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)), random_spd(&mut rng, d))
                .map_err(err)?;
            let b = FeatureMoments::new(DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)), random_spd(&mut rng, d))
                .map_err(err)?;
            let s = fid(&a, &a).map_err(err)?.value;
            worst_self = worst_self.max(s.abs());
            ensure(s.abs() <= 1e-9, || format!("fid(a,a) = {s:e} at d={d}"))?;
            let (ab, ba) = (fid(&a, &b).map_err(err)?.value, fid(&b, &a).map_err(err)?.value);
            worst_sym = worst_sym.max((ab - ba).abs());
            ensure((ab - ba).abs() <= 1e-8, || format!("asymmetry {:e} at d={d}", (ab - ba).abs()))?;
        }
    }

    let one = |m: f64, var: f64| FeatureMoments::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, var)).unwrap();
    let shift = fid(&one(0.0, 1.0), &one(1.0, 1.0)).map_err(err)?.value;
    ensure((shift - 1.0).abs() <= 1e-9, || format!("mean shift gives {shift}"))?;
    let spread = fid(&one(0.0, 1.0), &one(0.0, 4.0)).map_err(err)?.value;
    ensure((spread - 1.0).abs() <= 1e-9, || format!("sigma 1 vs 2 gives {spread}"))?;

    let mut worst_rel: f64 = 0.0;
    for d in [1, 2, 4, 8] {
        let (ma, mb) = (
            DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)),
            DVector::from_fn(d, |_, _| rng.random_range(1.0..4.0)),
        );
        let (ca, cb) = (random_spd(&mut rng, d), random_spd(&mut rng, d));
        let truth = analytic_fid(&ma, &ca, &mb, &cb);
        let est = fid(
            &sample_moments(&mut rng, &ma, &ca, 10_000),
            &sample_moments(&mut rng, &mb, &cb, 10_000),
        )
        .map_err(err)?
        .value;
        let rel = (est - truth).abs() / truth;
        worst_rel = worst_rel.max(rel);
        ensure(rel <= 0.05, || format!("d={d}: sampled {est} vs analytic {truth}"))?;
    }
    Ok(format!(
        "self max {worst_self:.1e}, asymmetry max {worst_sym:.1e}, closed forms exact, sampled max rel err {:.2}%",
        worst_rel * 100.0
    ))
}

fn is_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in [2usize, 5, 17] {
        let row: Vec<f64> = {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let t: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / t).collect()
        };
        let preds = PredictionMatrix::new(vec![row; 30]).map_err(err)?;
        for splits in [1, 3, 10] {
            let (m, _) = inception_score(&preds, splits).map_err(err)?;
            ensure((m - 1.0).abs() <= 1e-9, || format!("identical rows K={k} splits={splits}: {m}"))?;
        }
    }
    for k in [2usize, 10, 100] {
        let rows: Vec<Vec<f64>> = (0..k * 3)
            .map(|i| (0..k).map(|c| if c == i % k { 1.0 } else { 0.0 }).collect())
            .collect();
        let (m, s) = inception_score(&PredictionMatrix::new(rows).map_err(err)?, 1).map_err(err)?;
        ensure((m - k as f64).abs() <= 1e-6 && s == 0.0, || format!("one-hot K={k}: {m} ± {s}"))?;
    }
    for t in 0..1000 {
        let k = rng.random_range(2..=20);
        let n = rng.random_range(1..=60);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let sharp: f64 = rng.random_range(0.5..8.0);
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0f64..1.0).powf(sharp)).collect();
                let total: f64 = raw.iter().sum();
                if total == 0.0 {
                    let mut one = vec![0.0; k];
                    one[0] = 1.0;
                    one
                } else {
                    raw.into_iter().map(|v| v / total).collect()
                }
            })
            .collect();
        let splits = rng.random_range(1..=n.min(10));
        let (m, _) = inception_score(&PredictionMatrix::new(rows).map_err(err)?, splits).map_err(err)?;
        ensure((1.0 - 1e-12..=k as f64 + 1e-12).contains(&m), || format!("matrix {t}: IS {m} outside [1, {k}]"))?;
    }
    Ok("identical rows 1, one-hot K in {2,10,100} exact, 1000 random matrices bounded".into())
}

fn classical_baselines() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for t in 0..50 {
        let (w, h) = (rng.random_range(8..48), rng.random_range(8..48));
        let bytes: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
        let img = RasterImage::from_rgb8(w, h, &bytes).map_err(err)?;
        let density = rng.random_range(0.05..0.9);
        let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
        let mask = BinaryMask::from_fn(w, h, |x, y| bits[y * w + x]);
        let params = ClassicalParams {
            blur_sigma: rng.random_range(0.5..5.0),
            fill_value: [rng.random_range(0.0..1.0), 0.5, rng.random_range(0.0..1.0)],
            block_size: rng.random_range(1..10),
        };
        for method in [ClassicalMethod::Blur, ClassicalMethod::MaskFill, ClassicalMethod::Pixelize] {
            let out = apply_classical(&img, &mask, method, &params).map_err(err)?;
            for y in 0..h {
                for x in 0..w {
                    if !mask.get(x, y) {
                        ensure(out.pixel(x, y) == img.pixel(x, y), || {
                            format!("case {t} {method:?}: ({x},{y}) changed outside mask")
                        })?;
                    } else if method == ClassicalMethod::MaskFill {
                        ensure(out.pixel(x, y) == params.fill_value, || format!("case {t}: fill wrong at ({x},{y})"))?;
                    }
                }
            }
            if method == ClassicalMethod::Pixelize {
                let b = params.block_size;
                let mut block_value: BTreeMap<(usize, usize), [f32; 3]> = BTreeMap::new();
                for y in 0..h {
                    for x in 0..w {
                        if mask.get(x, y) {
                            let v = *block_value.entry((x / b, y / b)).or_insert(out.pixel(x, y));
                            ensure(v == out.pixel(x, y), || format!("case {t}: block ({},{}) not constant", x / b, y / b))?;
                        }
                    }
                }
                let twice = apply_classical(&out, &mask, method, &params).map_err(err)?;
                ensure(twice == out, || format!("case {t}: pixelize not idempotent"))?;
            }
        }
    }
    Ok("50 random cases: block-constant, idempotent, exact fill, untouched outside masks".into())
}

fn start_index_sweep() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cases = 0;
    while cases < 10_000 {
        let q: u64 = rng.random_range(1..=1000);
        let p: u64 = rng.random_range(0..=q);
        let n: u32 = rng.random_range(1..=1000);
        let beta = p as f64 / q as f64;
        let exact = (p * n as u64 / q) as u32;
        let got = start_index(beta, n);
        ensure(got == exact, || format!("start_index({p}/{q}, {n}) = {got}, exact {exact}"))?;
        cases += 1;
    }
    // Decimal strengths as users write them.
    for hundredths in 0..=100u64 {
        for n in [1u32, 10, 50, 100, 1000] {
            let beta: f64 = format!("0.{hundredths:02}").parse().unwrap_or(1.0);
            let beta = if hundredths == 100 { 1.0 } else { beta };
            let exact = (hundredths * n as u64 / 100) as u32;
            let got = start_index(beta, n);
            ensure(got == exact, || format!("start_index({beta}, {n}) = {got}, exact {exact}"))?;
        }
    }
    Ok("10000 rational pairs plus decimal grid match integer floor".into())
}

fn dataset_pass_through() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let data = scenes(10, 10010);
    let (images, ann) = data.write_to(tmp.path().join("in")).map_err(err)?;
    let detector = OracleDetector::new(load_annotations(&ann).map_err(err)?);
    let out = tmp.path().join("out");
    let config = AnonymizationConfig {
        diffusion: DiffusionParams {
            resolution: 48,
            ..Default::default()
        },
        ..Default::default()
    };
    let run = |resume: bool| {
        anonymize_dataset(
            &DatasetSource::new(&images).with_annotations(&ann),
            &DatasetSink::new(&out).resume(resume),
            &config,
            Backends {
                detector: &detector,
                inpainter: &MockInpainter,
            },
        )
    };
    let first = run(false).map_err(err)?;
    ensure(first.counts.processed == 10, || format!("first run processed {}", first.counts.processed))?;
    let same = std::fs::read(&ann).map_err(err)? == std::fs::read(out.join("annotations.json")).map_err(err)?;
    ensure(same, || "annotation file altered".into())?;
    let before = tree_hashes(&out);
    let missing = ["scene_0002", "scene_0005", "scene_0007"];
    for m in missing {
        std::fs::remove_file(out.join(format!("{m}.png"))).map_err(err)?;
    }
    let second = run(true).map_err(err)?;
    let mut redone: Vec<&str> = second.images.iter().map(|r| r.image_id.as_str()).collect();
    redone.sort();
    ensure(redone == missing && second.counts.skipped == 7, || {
        format!("resume redid {redone:?}, skipped {}", second.counts.skipped)
    })?;
    ensure(tree_hashes(&out) == before, || "resumed tree differs from original".into())?;
    Ok("annotations byte-identical; resume redid exactly the 3 deleted images".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("identity pipeline", identity_pipeline),
        ("outside-mask preservation", outside_mask_preservation),
        ("stitching equivalence", stitch_equivalence),
        ("determinism under parallelism", worker_invariance),
        ("mock denoise monotonicity", beta_monotonicity),
        ("FID oracles", fid_oracles),
        ("IS oracles", is_oracles),
        ("classical baselines", classical_baselines),
        ("start_index", start_index_sweep),
        ("dataset pass-through and resume", dataset_pass_through),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({secs:.1}s)");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
