//! Anonymize a directory of images, then resume after losing some outputs.

use fadm::dataset::{emit_report, load_annotations, DatasetSink, DatasetSource};
use fadm::detection::OracleDetector;
use fadm::generative::MockInpainter;
use fadm::pipeline::{anonymize_dataset, AnonymizationConfig, Backends};
use fadm::synth::{SceneSpec, SyntheticDataset};

fn main() -> fadm::Result<()> {
    let root = tempfile::tempdir().expect("temp dir");
    let data = SyntheticDataset::generate(&SceneSpec::default(), 8, 2024);
    let (images, ann) = data.write_to(root.path().join("input"))?;

    let detector = OracleDetector::new(load_annotations(&ann)?);
    let backends = Backends {
        detector: &detector,
        inpainter: &MockInpainter,
    };
    let config = AnonymizationConfig {
        workers: 4,
        global_seed: 7,
        ..Default::default()
    };
    let source = DatasetSource::new(&images).with_annotations(&ann);
    let out = root.path().join("anonymized");

    let first = anonymize_dataset(&source, &DatasetSink::new(&out), &config, backends)?;
    println!("first run: {:?}", first.counts);

    std::fs::remove_file(out.join("scene_0003.png")).expect("output exists");
    let second = anonymize_dataset(&source, &DatasetSink::new(&out).resume(true), &config, backends)?;
    println!("resumed:   {:?}", second.counts);

    for path in emit_report(Some(&second), &[], root.path().join("report"))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
