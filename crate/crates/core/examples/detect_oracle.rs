//! Ground-truth person masks from COCO-style annotations.

use fadm::dataset::{load_annotations, CocoAnnotations};
use fadm::detection::{detect, oracle_detect, DetectorConfig, OracleDetector};
use fadm::synth::{SceneSpec, SyntheticDataset};

fn main() -> fadm::Result<()> {
    let data = SyntheticDataset::generate(&SceneSpec::default(), 3, 42);
    let dir = tempfile::tempdir().expect("temp dir");
    let (_, ann_path) = data.write_to(dir.path())?;
    let coco: CocoAnnotations = load_annotations(&ann_path)?;

    for (i, (stem, image)) in data.images.iter().enumerate() {
        let persons = oracle_detect(&coco, i as u64 + 1)?;
        println!("{stem}: {} annotated people", persons.len());

        // The backend form returns every class; `detect` applies the filter.
        let detector = OracleDetector::new(coco.clone());
        for det in detect(stem, image, &DetectorConfig::default(), &detector)? {
            let b = det.bbox;
            println!(
                "  #{} {} conf {:.2} box ({},{})-({},{}) {} px",
                det.instance_index,
                det.class_label,
                det.confidence,
                b.x_min,
                b.y_min,
                b.x_max,
                b.y_max,
                det.coverage()
            );
        }
    }
    Ok(())
}
