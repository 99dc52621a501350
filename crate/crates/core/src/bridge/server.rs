//! Reference bridge server backed by the mock generator, the toy extractor
//! and any [`DetectorBackend`]. Used for protocol tests and offline runs.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use super::protocol::*;
use crate::crop::{CropPlacement, InstanceCrop};
use crate::detection::{DetectorBackend, NullDetector};
use crate::error::{Error, Result};
use crate::generative::{mock_inpaint, DiffusionParams, InpaintRequest};
use crate::image::{BoundingBox, Filter};
use crate::metrics::{FeatureExtractor, ToyExtractor};

/// Deliberate misbehaviour, for exercising client and conformance checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Echo `id + 1` instead of `id`.
    WrongId,
    /// Answer every non-handshake request with a line that is not JSON.
    MalformedResponse,
    /// Return inpaint images one pixel smaller than requested.
    WrongDimensions,
}

#[derive(Clone)]
pub struct ServerOptions {
    pub detector: Arc<dyn DetectorBackend>,
    pub max_in_flight: usize,
    pub max_batch: usize,
    pub max_line_bytes: usize,
    pub resolutions: Vec<usize>,
    pub fault: Option<Fault>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            detector: Arc::new(NullDetector),
            max_in_flight: 4,
            max_batch: 4,
            max_line_bytes: 64 << 20,
            resolutions: vec![512, 768, 1024],
            fault: None,
        }
    }
}

/// Running server; stops when dropped.
pub struct MockBridgeServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl MockBridgeServer {
    /// Bind (use port 0 for an ephemeral port) and start serving.
    pub fn spawn(bind: &str, options: ServerOptions) -> Result<Self> {
        let listener = TcpListener::bind(bind).map_err(|e| Error::Transport {
            backend: bind.to_string(),
            message: format!("bind failed: {e}"),
        })?;
        let addr = listener.local_addr().map_err(|e| Error::io(bind, e))?;
        let stop = Arc::new(AtomicBool::new(false));
        let options = Arc::new(options);
        let stop_flag = stop.clone();
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let opts = options.clone();
                std::thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, &opts) {
                        log::debug!("bridge connection ended: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }
}

impl Drop for MockBridgeServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn serve_connection(stream: TcpStream, opts: &ServerOptions) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = (&mut reader)
            .take(opts.max_line_bytes as u64 + 1)
            .read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(());
        }
        let reply = if buf.last() != Some(&b'\n') && buf.len() > opts.max_line_bytes {
            // Discard the rest of the oversized line.
            let mut sink = Vec::new();
            reader.read_until(b'\n', &mut sink)?;
            serde_json::to_string(&BridgeResponse::error(
                None,
                format!("request exceeds the {} byte limit", opts.max_line_bytes),
            ))
            .expect("responses serialize")
        } else {
            let text = String::from_utf8_lossy(&buf);
            let text = text.trim();
            if text.is_empty() {
                continue;
            }
            respond(text, opts)
        };
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
}

/// Answer one request line.
pub fn respond(line: &str, opts: &ServerOptions) -> String {
    let resp = match serde_json::from_str::<BridgeRequest>(line) {
        Ok(req) => {
            let started = Instant::now();
            let is_handshake = req.op == BridgeOp::Handshake;
            if opts.fault == Some(Fault::MalformedResponse) && !is_handshake {
                return "{this is not json".to_string();
            }
            let id = if opts.fault == Some(Fault::WrongId) && !is_handshake {
                req.id.wrapping_add(1)
            } else {
                req.id
            };
            match handle(req.op, opts) {
                Ok(payload) => {
                    BridgeResponse::ok(id, payload, started.elapsed().as_secs_f64() * 1e3)
                }
                Err(e) => BridgeResponse::error(Some(id), e.to_string()),
            }
        }
        Err(e) => {
            // Salvage the id if the line is JSON with a numeric id.
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
            BridgeResponse::error(id, format!("bad request: {e}"))
        }
    };
    serde_json::to_string(&resp).expect("responses serialize")
}

fn handle(op: BridgeOp, opts: &ServerOptions) -> Result<Payload> {
    match op {
        BridgeOp::Handshake => Ok(Payload::Capabilities(Capabilities {
            protocol: PROTOCOL_VERSION.into(),
            ops: OP_NAMES.iter().map(|s| s.to_string()).collect(),
            max_in_flight: opts.max_in_flight,
            max_batch: opts.max_batch,
            resolutions: opts.resolutions.clone(),
        })),
        BridgeOp::Detect { image, params } => {
            let image = image_from_b64(&image)?;
            let id = params.image_id.unwrap_or_default();
            let detections = opts
                .detector
                .detect_raw(&id, &image)?
                .into_iter()
                .filter(|d| d.confidence >= params.confidence_threshold)
                .map(|d| {
                    Ok(WireDetection {
                        class: d.class_label,
                        confidence: d.confidence,
                        bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
                        mask: mask_to_b64(&d.mask)?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(Payload::Detections { detections })
        }
        BridgeOp::Inpaint {
            image,
            mask,
            params,
        } => {
            let pixels = image_from_b64(&image)?;
            let mask = mask_from_b64(&mask)?;
            if pixels.dims() != (params.resolution, params.resolution) || mask.dims() != pixels.dims() {
                return Err(Error::invalid(format!(
                    "image {}x{} / mask {}x{} do not match resolution {}",
                    pixels.width(),
                    pixels.height(),
                    mask.width(),
                    mask.height(),
                    params.resolution
                )));
            }
            let side = params.resolution;
            let req = InpaintRequest::new(
                InstanceCrop {
                    pixels,
                    source_mask: mask.clone(),
                    mask,
                    placement: CropPlacement {
                        source_rect: BoundingBox::new(0, 0, side, side)?,
                        crop_side: side,
                    },
                },
                DiffusionParams {
                    total_steps: params.steps,
                    denoise_strength: params.denoise_strength,
                    positive_prompt: params.positive_prompt,
                    negative_prompt: params.negative_prompt,
                    resolution: side,
                    seed: params.seed,
                },
            )?;
            let mut out = mock_inpaint(&req)?;
            if opts.fault == Some(Fault::WrongDimensions) && side > 1 {
                out = out.resize(side - 1, side - 1, Filter::Nearest)?;
            }
            Ok(Payload::Image {
                image: image_to_b64(&out)?,
            })
        }
        BridgeOp::Extract { image, params } => {
            let image = image_from_b64(&image)?;
            let e = ToyExtractor::new(params.classes, params.dims).extract(&image)?;
            Ok(Payload::Features {
                probabilities: e.probabilities,
                features: e.features,
            })
        }
    }
}
