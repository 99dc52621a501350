//! TOML run configuration. Every key is optional; unknown keys are errors.
//!
//! ```toml
//! [anonymization]
//! method = "fadm"
//! global_seed = 7
//! mask_dilation = 4
//!
//! [anonymization.diffusion]
//! denoise_strength = 0.5
//!
//! [backend]
//! inpainter = "remote"
//! endpoint = "127.0.0.1:7878"
//!
//! [evaluate]
//! splits = 10
//! ```
//!
//! Values resolve as built-in defaults, then this file, then the
//! `FADM_BRIDGE_ENDPOINT` environment variable (endpoint only), then
//! command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::AnonymizationConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InpainterKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    Oracle,
    Remote,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    #[default]
    Toy,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub inpainter: InpainterKind,
    pub detector: DetectorKind,
    pub extractor: ExtractorKind,
    pub endpoint: Option<String>,
    pub annotations: Option<PathBuf>,
    pub connect_timeout_ms: u64,
    pub retries: u32,
}

impl Default for BackendSettings {
    fn default() -> Self {
        Self {
            inpainter: InpainterKind::Mock,
            detector: DetectorKind::Oracle,
            extractor: ExtractorKind::Toy,
            endpoint: None,
            annotations: None,
            connect_timeout_ms: 5000,
            retries: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub splits: usize,
    /// Toy extractor output sizes.
    pub classes: usize,
    pub dims: usize,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self {
            splits: 10,
            classes: 10,
            dims: 8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfigFile {
    pub anonymization: AnonymizationConfig,
    pub backend: BackendSettings,
    pub evaluate: EvaluateSettings,
}

impl CliConfigFile {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
