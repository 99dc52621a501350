//! Inception Score and Fréchet distance with the built-in toy extractor.

use fadm::dataset::metrics_csv;
use fadm::dataset::MetricRow;
use fadm::detection::OracleDetector;
use fadm::generative::MockInpainter;
use fadm::image::RasterImage;
use fadm::metrics::{extract_all, fid, inception_score, moments_from_features, ToyExtractor};
use fadm::pipeline::{anonymize_image, AnonymizationConfig, Backends, Method};
use fadm::synth::{SceneSpec, SyntheticDataset};

fn main() -> fadm::Result<()> {
    let data = SyntheticDataset::generate(&SceneSpec::default(), 40, 99);
    let detector = OracleDetector::new(data.annotations.clone());
    let backends = Backends {
        detector: &detector,
        inpainter: &MockInpainter,
    };
    let originals: Vec<RasterImage> = data.images.iter().map(|(_, img)| img.clone()).collect();
    let extractor = ToyExtractor::new(10, 8);
    let (_, real_feats) = extract_all(&originals, &extractor)?;
    let real = moments_from_features(&real_feats)?;

    let mut rows = Vec::new();
    for method in [Method::Fadm, Method::Blur, Method::MaskFill, Method::Pixelize] {
        let config = AnonymizationConfig {
            method,
            diffusion: fadm::generative::DiffusionParams {
                resolution: 64,
                ..Default::default()
            },
            ..Default::default()
        };
        let outputs = data
            .images
            .iter()
            .map(|(id, img)| anonymize_image(id, img, &config, backends).map(|(out, _)| out))
            .collect::<fadm::Result<Vec<_>>>()?;
        let (probs, feats) = extract_all(&outputs, &extractor)?;
        let (is_mean, is_std) = inception_score(&probs, 4)?;
        let score = fid(&real, &moments_from_features(&feats)?)?;
        rows.push(MetricRow {
            method: method.label().into(),
            is_mean: Some(is_mean),
            is_std: Some(is_std),
            fid: Some(score.value),
        });
    }
    print!("{}", metrics_csv(&rows)?);
    Ok(())
}
