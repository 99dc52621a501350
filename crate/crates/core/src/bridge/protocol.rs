//! Newline-delimited JSON messages exchanged with an inference sidecar.
//!
//! One request per line, one response per line. Images travel as base64
//! PNG (RGB for pictures, single-channel for masks). Responses carry the
//! request id so a connection may have several requests outstanding.
//!
//! ```text
//! -> {"id":1,"op":"handshake"}
//! <- {"id":1,"status":"ok","payload":{"kind":"capabilities","protocol":"fadm-bridge/1",...},"timing_ms":0.1}
//! -> {"id":2,"op":"inpaint","image":"<b64 png>","mask":"<b64 png>","params":{...}}
//! <- {"id":2,"status":"ok","payload":{"kind":"image","image":"<b64 png>"},"timing_ms":812.0}
//! <- {"id":3,"status":"error","error":"image: invalid base64"}
//! ```

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{decode_mask_png, decode_png, encode_mask_png, encode_png};
use crate::error::{Error, Result};
use crate::image::{BinaryMask, RasterImage};

pub const PROTOCOL_VERSION: &str = "fadm-bridge/1";

pub const OP_NAMES: [&str; 4] = ["handshake", "detect", "inpaint", "extract"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    #[serde(default)]
    pub confidence_threshold: f64,
    /// Lets annotation-backed servers find the image; pixel detectors ignore it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InpaintParams {
    pub positive_prompt: String,
    pub negative_prompt: String,
    pub denoise_strength: f64,
    pub steps: u32,
    pub seed: u64,
    pub resolution: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractParams {
    pub classes: usize,
    pub dims: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BridgeOp {
    Handshake,
    Detect {
        image: String,
        #[serde(default)]
        params: DetectParams,
    },
    Inpaint {
        image: String,
        mask: String,
        params: InpaintParams,
    },
    Extract {
        image: String,
        params: ExtractParams,
    },
}

impl BridgeOp {
    pub fn name(&self) -> &'static str {
        match self {
            BridgeOp::Handshake => "handshake",
            BridgeOp::Detect { .. } => "detect",
            BridgeOp::Inpaint { .. } => "inpaint",
            BridgeOp::Extract { .. } => "extract",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub id: u64,
    #[serde(flatten)]
    pub op: BridgeOp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub protocol: String,
    pub ops: Vec<String>,
    pub max_in_flight: usize,
    pub max_batch: usize,
    pub resolutions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub class: String,
    pub confidence: f64,
    /// `[x_min, y_min, x_max, y_max]`, max exclusive.
    #[serde(rename = "box")]
    pub bbox: [usize; 4],
    /// Base64 single-channel PNG, full-image size.
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Capabilities(Capabilities),
    Detections { detections: Vec<WireDetection> },
    Image { image: String },
    Features { probabilities: Vec<f64>, features: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    /// Echo of the request id; absent only when the request line could not
    /// be parsed far enough to find one.
    pub id: Option<u64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub timing_ms: f64,
}

impl BridgeResponse {
    pub fn ok(id: u64, payload: Payload, timing_ms: f64) -> Self {
        Self {
            id: Some(id),
            status: Status::Ok,
            payload: Some(payload),
            error: None,
            timing_ms,
        }
    }

    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.is_empty() {
            message = "unspecified error".into();
        }
        Self {
            id,
            status: Status::Error,
            payload: None,
            error: Some(message),
            timing_ms: 0.0,
        }
    }

    /// Structural checks every response must pass.
    pub fn validate(&self) -> Result<()> {
        match self.status {
            Status::Ok if self.payload.is_none() => {
                Err(Error::Protocol("ok response without payload".into()))
            }
            Status::Error if self.error.as_deref().is_none_or(str::is_empty) => {
                Err(Error::Protocol("error response without message".into()))
            }
            _ => Ok(()),
        }
    }
}

pub fn image_to_b64(image: &RasterImage) -> Result<String> {
    Ok(STANDARD.encode(encode_png(image)?))
}

pub fn mask_to_b64(mask: &BinaryMask) -> Result<String> {
    Ok(STANDARD.encode(encode_mask_png(mask)?))
}

pub fn image_from_b64(text: &str) -> Result<RasterImage> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Protocol(format!("invalid base64 image: {e}")))?;
    decode_png(&bytes).map_err(|e| Error::Protocol(format!("undecodable image: {e}")))
}

pub fn mask_from_b64(text: &str) -> Result<BinaryMask> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Protocol(format!("invalid base64 mask: {e}")))?;
    decode_mask_png(&bytes).map_err(|e| Error::Protocol(format!("undecodable mask: {e}")))
}
