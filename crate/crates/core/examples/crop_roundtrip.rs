//! Square context crops and exact paste-back.

use fadm::crop::{crop_window, paste_back, prepare_crop};
use fadm::detection::{detect, DetectorConfig, OracleDetector};
use fadm::image::BoundingBox;
use fadm::synth::{SceneSpec, SyntheticDataset};

fn main() -> fadm::Result<()> {
    let w = crop_window(&BoundingBox::new(10, 10, 20, 30)?, 100, 100, 0.0)?;
    println!("tall box squared: {w:?}");
    let w = crop_window(&BoundingBox::new(90, 90, 100, 100)?, 100, 100, 0.2)?;
    println!("corner box with context, shifted inside: {w:?}");

    let data = SyntheticDataset::generate(&SceneSpec::default(), 1, 5);
    let (id, image) = &data.images[0];
    let detector = OracleDetector::new(data.annotations.clone());
    let det = detect(id, image, &DetectorConfig::default(), &detector)?.remove(0);

    // Native size, no context: pasting the untouched crop is the identity.
    let side = crop_window(&det.bbox, image.width(), image.height(), 0.0)?.width();
    let crop = prepare_crop(image, &det, side, 0.0, 0)?;
    let back = paste_back(image, &crop.pixels, &crop, 0)?;
    println!("native round trip exact: {}", &back == image);

    let crop = prepare_crop(image, &det, 64, 0.2, 4)?;
    println!(
        "64px crop of {:?}, scale {:.3}, {} masked crop pixels",
        crop.placement.source_rect,
        crop.placement.scale(),
        crop.mask.count_ones()
    );
    Ok(())
}
