//! Merge overlapping instance results smallest-first.

use fadm::compositor::{order_layers, recursive_stitch, CompositeLayer, OrderingStrategy};
use fadm::crop::prepare_crop;
use fadm::detection::{detect, DetectorConfig, OracleDetector};
use fadm::generative::{mock_inpaint, DiffusionParams, InpaintRequest};
use fadm::synth::{SceneSpec, SyntheticDataset};

fn main() -> fadm::Result<()> {
    let spec = SceneSpec {
        min_people: 4,
        max_people: 6,
        ..Default::default()
    };
    let data = SyntheticDataset::generate(&spec, 1, 8);
    let (id, image) = &data.images[0];
    let detector = OracleDetector::new(data.annotations.clone());

    let mut layers = Vec::new();
    for det in detect(id, image, &DetectorConfig::default(), &detector)? {
        let crop = prepare_crop(image, &det, 32, 0.2, 2)?;
        let params = DiffusionParams {
            resolution: 32,
            seed: det.instance_index as u64,
            ..Default::default()
        };
        layers.push(CompositeLayer {
            result: mock_inpaint(&InpaintRequest::new(crop.clone(), params)?)?,
            coverage: det.coverage(),
            instance_index: det.instance_index,
            depth: None,
            crop,
        });
    }
    for i in order_layers(&layers) {
        println!("paste instance {} ({} px)", layers[i].instance_index, layers[i].coverage);
    }

    let merged = recursive_stitch(image, &layers, OrderingStrategy::CoverageAscending, 2)?;
    layers.reverse();
    let again = recursive_stitch(image, &layers, OrderingStrategy::CoverageAscending, 2)?;
    println!("input order irrelevant: {}", merged == again);
    Ok(())
}
