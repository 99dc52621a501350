//! Blur, constant fill and pixelization over person masks, written as a
//! side-by-side grid.

use fadm::classical::ClassicalParams;
use fadm::dataset::write_comparison_grid;
use fadm::detection::OracleDetector;
use fadm::generative::MockInpainter;
use fadm::pipeline::{anonymize_image, AnonymizationConfig, Backends, Method};
use fadm::synth::{SceneSpec, SyntheticDataset};

fn main() -> fadm::Result<()> {
    let data = SyntheticDataset::generate(&SceneSpec::default(), 1, 3);
    let (id, image) = &data.images[0];
    let detector = OracleDetector::new(data.annotations.clone());
    let backends = Backends {
        detector: &detector,
        inpainter: &MockInpainter,
    };

    let mut pairs = Vec::new();
    for method in [Method::Blur, Method::MaskFill, Method::Pixelize] {
        let config = AnonymizationConfig {
            method,
            classical: ClassicalParams {
                blur_sigma: 3.0,
                block_size: 6,
                ..Default::default()
            },
            ..Default::default()
        };
        let (out, report) = anonymize_image(id, image, &config, backends)?;
        println!("{}: {} instances", method.label(), report.instances.len());
        pairs.push((image.clone(), out));
    }
    let path = std::env::temp_dir().join("fadm_classical_grid.png");
    write_comparison_grid(&pairs, &path)?;
    println!("grid written to {}", path.display());
    Ok(())
}
