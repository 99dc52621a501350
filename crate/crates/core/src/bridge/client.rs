use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::protocol::*;
use crate::detection::{DetectorBackend, InstanceDetection};
use crate::error::{Error, Result};
use crate::generative::{restore_outside_mask, InpaintBackend, InpaintRequest};
use crate::image::RasterImage;
use crate::metrics::{Extraction, FeatureExtractor};

/// Environment variable consulted for the bridge address when none is given.
pub const ENDPOINT_ENV: &str = "FADM_BRIDGE_ENDPOINT";

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub connect_timeout: Duration,
    pub io_timeout: Duration,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    pub retry_backoff: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(5),
            io_timeout: Duration::from_secs(600),
            retries: 3,
            retry_backoff: Duration::from_millis(200),
        }
    }
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Synchronous bridge client with a small connection pool. At most
/// `max_in_flight` (from the handshake) requests are outstanding at once.
pub struct BridgeClient {
    endpoint: String,
    config: ClientConfig,
    capabilities: Capabilities,
    next_id: AtomicU64,
    idle: Mutex<Vec<Conn>>,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
}

impl std::fmt::Debug for BridgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeClient")
            .field("endpoint", &self.endpoint)
            .field("capabilities", &self.capabilities)
            .finish()
    }
}

impl BridgeClient {
    /// Connect and negotiate. Fails with a transport error if the endpoint
    /// stays unreachable through all retries.
    pub fn connect(endpoint: impl Into<String>, config: ClientConfig) -> Result<Self> {
        let mut client = Self {
            endpoint: endpoint.into(),
            config,
            capabilities: Capabilities {
                protocol: PROTOCOL_VERSION.into(),
                ops: vec!["handshake".into()],
                max_in_flight: 1,
                max_batch: 1,
                resolutions: Vec::new(),
            },
            next_id: AtomicU64::new(1),
            idle: Mutex::new(Vec::new()),
            in_flight: Mutex::new(0),
            slot_freed: Condvar::new(),
        };
        let caps = match client.call(BridgeOp::Handshake)? {
            Payload::Capabilities(c) => c,
            other => return Err(Error::Protocol(format!("handshake answered with {other:?}"))),
        };
        if caps.protocol != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "server speaks {}, client speaks {PROTOCOL_VERSION}",
                caps.protocol
            )));
        }
        if caps.max_in_flight == 0 {
            return Err(Error::Protocol("server advertises max_in_flight 0".into()));
        }
        client.capabilities = caps;
        Ok(client)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.capabilities
    }

    pub fn supports(&self, op: &str) -> bool {
        self.capabilities.ops.iter().any(|o| o == op)
    }

    fn transport(&self, message: impl std::fmt::Display) -> Error {
        Error::Transport {
            backend: self.endpoint.clone(),
            message: message.to_string(),
        }
    }

    fn open(&self) -> Result<Conn> {
        let addrs: Vec<_> = self
            .endpoint
            .to_socket_addrs()
            .map_err(|e| self.transport(format!("cannot resolve: {e}")))?
            .collect();
        let mut last = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.config.connect_timeout) {
                Ok(stream) => {
                    stream
                        .set_read_timeout(Some(self.config.io_timeout))
                        .and_then(|_| stream.set_write_timeout(Some(self.config.io_timeout)))
                        .and_then(|_| stream.set_nodelay(true))
                        .map_err(|e| self.transport(e))?;
                    let writer = stream.try_clone().map_err(|e| self.transport(e))?;
                    return Ok(Conn {
                        reader: BufReader::new(stream),
                        writer,
                    });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(self.transport(match last {
            Some(e) => format!("connect failed: {e}"),
            None => "no addresses".to_string(),
        }))
    }

    fn acquire_slot(&self) {
        let mut n = self.in_flight.lock().expect("slot lock");
        while *n >= self.capabilities.max_in_flight {
            n = self.slot_freed.wait(n).expect("slot lock");
        }
        *n += 1;
    }

    fn release_slot(&self) {
        *self.in_flight.lock().expect("slot lock") -= 1;
        self.slot_freed.notify_one();
    }

    /// Send one request; transport failures are retried, protocol and
    /// backend errors are not.
    pub fn call(&self, op: BridgeOp) -> Result<Payload> {
        self.acquire_slot();
        let result = self.call_with_retries(op);
        self.release_slot();
        result
    }

    fn call_with_retries(&self, op: BridgeOp) -> Result<Payload> {
        let mut attempt = 0;
        loop {
            match self.call_once(&op) {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    attempt += 1;
                    log::debug!("retrying {} on {} after: {e}", op.name(), self.endpoint);
                    std::thread::sleep(self.config.retry_backoff * attempt);
                }
                other => return other,
            }
        }
    }

    fn call_once(&self, op: &BridgeOp) -> Result<Payload> {
        let pooled = self.idle.lock().expect("pool lock").pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => self.open()?,
        };
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut line = serde_json::to_string(&BridgeRequest { id, op: op.clone() })
            .expect("requests serialize");
        line.push('\n');
        conn.writer
            .write_all(line.as_bytes())
            .and_then(|_| conn.writer.flush())
            .map_err(|e| self.transport(format!("send failed: {e}")))?;

        let mut reply = String::new();
        let n = conn
            .reader
            .read_line(&mut reply)
            .map_err(|e| self.transport(format!("receive failed: {e}")))?;
        if n == 0 {
            return Err(self.transport("connection closed before a response"));
        }
        let resp: BridgeResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response to {}: {e}", op.name())))?;
        resp.validate()?;
        if resp.id != Some(id) {
            return Err(Error::Protocol(format!(
                "response id {:?} does not match request id {id}",
                resp.id
            )));
        }
        // Only a cleanly answered connection goes back to the pool.
        self.idle.lock().expect("pool lock").push(conn);
        match resp.status {
            Status::Ok => Ok(resp.payload.expect("validated")),
            Status::Error => Err(Error::Backend {
                backend: self.endpoint.clone(),
                message: resp.error.expect("validated"),
            }),
        }
    }
}

/// Inpaint one request through the bridge. Pixels outside the mask are
/// copied back from the input before returning.
pub fn remote_inpaint(req: &InpaintRequest, client: &BridgeClient) -> Result<RasterImage> {
    req.validate()?;
    let p = &req.params;
    let payload = client.call(BridgeOp::Inpaint {
        image: image_to_b64(&req.crop.pixels)?,
        mask: mask_to_b64(&req.crop.mask)?,
        params: InpaintParams {
            positive_prompt: p.positive_prompt.clone(),
            negative_prompt: p.negative_prompt.clone(),
            denoise_strength: p.denoise_strength,
            steps: p.total_steps,
            seed: p.seed,
            resolution: p.resolution,
        },
    })?;
    let Payload::Image { image } = payload else {
        return Err(Error::Protocol(format!("inpaint answered with {payload:?}")));
    };
    let mut out = image_from_b64(&image)?;
    if out.dims() != (p.resolution, p.resolution) {
        return Err(Error::Protocol(format!(
            "inpaint returned {}x{}, requested {}x{}",
            out.width(),
            out.height(),
            p.resolution,
            p.resolution
        )));
    }
    restore_outside_mask(&mut out, &req.crop);
    Ok(out)
}

#[derive(Debug)]
pub struct RemoteInpainter {
    client: BridgeClient,
}

impl RemoteInpainter {
    pub fn new(client: BridgeClient) -> Self {
        Self { client }
    }

    pub fn client(&self) -> &BridgeClient {
        &self.client
    }
}

impl InpaintBackend for RemoteInpainter {
    fn name(&self) -> &str {
        self.client.endpoint()
    }

    fn inpaint_batch(&self, reqs: &[InpaintRequest]) -> Vec<Result<RasterImage>> {
        // The wire carries one image per request; issue them concurrently
        // and let the client's slot limit do the throttling.
        std::thread::scope(|s| {
            let handles: Vec<_> = reqs
                .iter()
                .map(|r| s.spawn(move || remote_inpaint(r, &self.client)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Protocol("inpaint worker panicked".into()))))
                .collect()
        })
    }
}

#[derive(Debug)]
pub struct RemoteDetector {
    client: BridgeClient,
}

impl RemoteDetector {
    pub fn new(client: BridgeClient) -> Self {
        Self { client }
    }
}

impl DetectorBackend for RemoteDetector {
    fn name(&self) -> &str {
        self.client.endpoint()
    }

    fn detect_raw(&self, image_id: &str, image: &RasterImage) -> Result<Vec<InstanceDetection>> {
        let payload = self.client.call(BridgeOp::Detect {
            image: image_to_b64(image)?,
            params: DetectParams {
                confidence_threshold: 0.0,
                image_id: Some(image_id.to_string()),
            },
        })?;
        let Payload::Detections { detections } = payload else {
            return Err(Error::Protocol(format!("detect answered with {payload:?}")));
        };
        let mut out = Vec::with_capacity(detections.len());
        for (i, wire) in detections.into_iter().enumerate() {
            let mask = mask_from_b64(&wire.mask)?;
            if mask.dims() != image.dims() {
                return Err(Error::Protocol(format!(
                    "detection {i} mask is {}x{}, image is {}x{}",
                    mask.width(),
                    mask.height(),
                    image.width(),
                    image.height()
                )));
            }
            if !(0.0..=1.0).contains(&wire.confidence) {
                return Err(Error::Protocol(format!(
                    "detection {i} confidence {} outside [0, 1]",
                    wire.confidence
                )));
            }
            if let Some(mut det) = InstanceDetection::from_mask(wire.class, wire.confidence, mask) {
                det.instance_index = out.len();
                out.push(det);
            }
        }
        Ok(out)
    }
}

#[derive(Debug)]
pub struct RemoteExtractor {
    client: BridgeClient,
    params: ExtractParams,
}

impl RemoteExtractor {
    pub fn new(client: BridgeClient, classes: usize, dims: usize) -> Self {
        Self {
            client,
            params: ExtractParams { classes, dims },
        }
    }
}

impl FeatureExtractor for RemoteExtractor {
    fn name(&self) -> &str {
        self.client.endpoint()
    }

    fn extract(&self, image: &RasterImage) -> Result<Extraction> {
        let payload = self.client.call(BridgeOp::Extract {
            image: image_to_b64(image)?,
            params: self.params,
        })?;
        let Payload::Features {
            probabilities,
            features,
        } = payload
        else {
            return Err(Error::Protocol(format!("extract answered with {payload:?}")));
        };
        if probabilities.len() != self.params.classes || features.len() != self.params.dims {
            return Err(Error::Protocol(format!(
                "extract returned {} classes / {} dims, asked for {} / {}",
                probabilities.len(),
                features.len(),
                self.params.classes,
                self.params.dims
            )));
        }
        Ok(Extraction {
            probabilities,
            features,
        })
    }
}
