//! How the denoising strength trades fidelity for anonymity.

use fadm::crop::prepare_crop;
use fadm::detection::{detect, DetectorConfig, OracleDetector};
use fadm::generative::{mock_inpaint, start_index, DiffusionParams, InpaintRequest};
use fadm::synth::{SceneSpec, SyntheticDataset};

fn main() -> fadm::Result<()> {
    let data = SyntheticDataset::generate(&SceneSpec::default(), 1, 11);
    let (id, image) = &data.images[0];
    let detector = OracleDetector::new(data.annotations.clone());
    let det = detect(id, image, &DetectorConfig::default(), &detector)?.remove(0);
    let crop = prepare_crop(image, &det, 48, 0.2, 2)?;

    println!("strength  start  mean |change| in mask");
    for strength in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let params = DiffusionParams {
            denoise_strength: strength,
            resolution: 48,
            seed: 7,
            ..Default::default()
        };
        let steps = params.total_steps;
        let out = mock_inpaint(&InpaintRequest::new(crop.clone(), params)?)?;
        let (mut sum, mut n) = (0.0, 0);
        for y in 0..48 {
            for x in 0..48 {
                if crop.mask.get(x, y) {
                    let (a, b) = (out.pixel(x, y), crop.pixels.pixel(x, y));
                    sum += (0..3).map(|c| (a[c] - b[c]).abs() as f64).sum::<f64>();
                    n += 3;
                }
            }
        }
        println!("{strength:>8.1}  {:>5}  {:.4}", start_index(strength, steps), sum / n as f64);
    }
    Ok(())
}
