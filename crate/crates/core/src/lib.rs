//! Full-body person anonymization.
//!
//! Each detected person is cropped to a square window, repainted by an
//! inpainting backend (or hidden by blur, constant fill or pixelization)
//! and stitched back smallest-first so that larger figures win overlaps.
//! Inception Score and Fréchet distance measure how natural the results
//! look.
//!
//! ```no_run
//! use fadm::prelude::*;
//!
//! let data = SyntheticDataset::generate(&SceneSpec::default(), 1, 7);
//! let (id, image) = &data.images[0];
//! let detector = OracleDetector::new(data.annotations.clone());
//! let backends = Backends { detector: &detector, inpainter: &MockInpainter };
//! let (out, report) = anonymize_image(id, image, &AnonymizationConfig::default(), backends)?;
//! assert_eq!(out.dims(), image.dims());
//! # Ok::<(), fadm::Error>(())
//! ```

pub mod bridge;
pub mod classical;
pub mod cli;
pub mod compositor;
pub mod config;
pub mod crop;
pub mod dataset;
pub mod detection;
pub mod error;
pub mod generative;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::classical::{apply_classical, ClassicalMethod, ClassicalParams};
    pub use crate::compositor::{coverage, recursive_stitch, CompositeLayer, OrderingStrategy};
    pub use crate::crop::{crop_window, paste_back, prepare_crop, InstanceCrop};
    pub use crate::dataset::{read_image, write_image, DatasetSink, DatasetSource, WriteOptions};
    pub use crate::detection::{detect, oracle_detect, DetectorConfig, InstanceDetection, OracleDetector};
    pub use crate::error::{Error, Result};
    pub use crate::generative::{
        batch_inpaint, mock_inpaint, start_index, DiffusionParams, InpaintRequest, MockInpainter,
    };
    pub use crate::image::{BinaryMask, BoundingBox, RasterImage};
    pub use crate::metrics::{fid, inception_score, moments_from_features, PredictionMatrix};
    pub use crate::pipeline::{anonymize_dataset, anonymize_image, AnonymizationConfig, Backends, Method};
    pub use crate::synth::{SceneSpec, SyntheticDataset};
}
