//! Black-box checks any bridge server must pass. Talks raw lines over TCP
//! so that framing and error paths are exercised directly.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde_json::{json, Value};

use super::protocol::*;
use crate::image::{BinaryMask, RasterImage};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct ConformanceReport {
    pub checks: Vec<CheckResult>,
}

impl ConformanceReport {
    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl std::fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{mark} {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

struct Wire {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Wire {
    fn open(endpoint: &str) -> Result<Self, String> {
        let stream = TcpStream::connect(endpoint).map_err(|e| format!("connect {endpoint}: {e}"))?;
        stream
            .set_read_timeout(Some(Duration::from_secs(30)))
            .map_err(|e| e.to_string())?;
        let writer = stream.try_clone().map_err(|e| e.to_string())?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
        })
    }

    fn exchange(&mut self, line: &str) -> Result<Value, String> {
        self.writer
            .write_all(format!("{line}\n").as_bytes())
            .map_err(|e| format!("send: {e}"))?;
        let mut reply = String::new();
        let n = self.reader.read_line(&mut reply).map_err(|e| format!("receive: {e}"))?;
        if n == 0 {
            return Err("connection closed without a response".into());
        }
        serde_json::from_str(reply.trim_end()).map_err(|e| format!("response is not JSON: {e}"))
    }
}

fn sample_image(side: usize) -> RasterImage {
    let mut img = RasterImage::filled(side, side, [0.0; 3]);
    for y in 0..side {
        for x in 0..side {
            img.set_pixel(x, y, [(x * 17 % 256) as f32 / 255.0, (y * 29 % 256) as f32 / 255.0, 0.5]);
        }
    }
    img.quantized()
}

fn sample_mask(side: usize) -> BinaryMask {
    BinaryMask::from_fn(side, side, |x, y| x >= side / 4 && x < 3 * side / 4 && y >= side / 4 && y < 3 * side / 4)
}

fn inpaint_line(id: u64, image: &RasterImage, mask: &BinaryMask, strength: f64) -> String {
    json!({
        "id": id,
        "op": "inpaint",
        "image": image_to_b64(image).expect("sample encodes"),
        "mask": mask_to_b64(mask).expect("sample encodes"),
        "params": {
            "positive_prompt": "conformance",
            "negative_prompt": "",
            "denoise_strength": strength,
            "steps": 10,
            "seed": 1,
            "resolution": image.width(),
        }
    })
    .to_string()
}

fn is_error_response(v: &Value) -> Result<(), String> {
    if v["status"] != "error" {
        return Err(format!("expected status error, got {}", v["status"]));
    }
    match v["error"].as_str() {
        Some(s) if !s.is_empty() => Ok(()),
        _ => Err("error response without message".into()),
    }
}

fn parse_ok(v: &Value, id: u64) -> Result<Payload, String> {
    let resp: BridgeResponse =
        serde_json::from_value(v.clone()).map_err(|e| format!("response schema: {e}"))?;
    resp.validate().map_err(|e| e.to_string())?;
    if resp.id != Some(id) {
        return Err(format!("id {:?} for request {id}", resp.id));
    }
    if resp.status != Status::Ok {
        return Err(format!("status error: {}", resp.error.unwrap_or_default()));
    }
    Ok(resp.payload.expect("validated"))
}

/// Run every check against `endpoint`. Checks are independent: each opens
/// its own connection, so one failure does not mask another.
pub fn run(endpoint: &str) -> ConformanceReport {
    let side = 16;
    let image = sample_image(side);
    let mask = sample_mask(side);
    let mut report = ConformanceReport::default();
    let mut record = |name: &'static str, f: &dyn Fn(&mut Wire) -> Result<String, String>| {
        let outcome = Wire::open(endpoint).and_then(|mut w| f(&mut w));
        report.checks.push(match outcome {
            Ok(detail) => CheckResult {
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckResult {
                name,
                passed: false,
                detail,
            },
        });
    };

    record("handshake", &|w| {
        let v = w.exchange(r#"{"id":1,"op":"handshake"}"#)?;
        let Payload::Capabilities(caps) = parse_ok(&v, 1)? else {
            return Err("handshake payload is not capabilities".into());
        };
        if caps.protocol != PROTOCOL_VERSION {
            return Err(format!("protocol {} != {PROTOCOL_VERSION}", caps.protocol));
        }
        for op in ["detect", "inpaint", "extract"] {
            if !caps.ops.iter().any(|o| o == op) {
                return Err(format!("capabilities do not list {op}"));
            }
        }
        if caps.max_in_flight == 0 || caps.max_batch == 0 {
            return Err("zero in-flight or batch limit".into());
        }
        Ok(format!("{} ops, in-flight {}", caps.ops.len(), caps.max_in_flight))
    });

    record("id_echo", &|w| {
        for id in [7u64, 123_456_789_012, 1] {
            let v = w.exchange(&format!(r#"{{"id":{id},"op":"handshake"}}"#))?;
            if v["id"].as_u64() != Some(id) {
                return Err(format!("sent id {id}, got {}", v["id"]));
            }
        }
        let v = w.exchange(&inpaint_line(99, &image, &mask, 0.5))?;
        if v["id"].as_u64() != Some(99) {
            return Err(format!("inpaint sent id 99, got {}", v["id"]));
        }
        Ok("ids echoed".into())
    });

    record("inpaint_identity_at_zero_strength", &|w| {
        let v = w.exchange(&inpaint_line(2, &image, &mask, 0.0))?;
        let Payload::Image { image: b64 } = parse_ok(&v, 2)? else {
            return Err("inpaint payload is not an image".into());
        };
        let out = image_from_b64(&b64).map_err(|e| e.to_string())?;
        if out != image {
            return Err("output differs from input".into());
        }
        Ok("bit-identical".into())
    });

    record("inpaint_dimensions", &|w| {
        let v = w.exchange(&inpaint_line(3, &image, &mask, 1.0))?;
        let Payload::Image { image: b64 } = parse_ok(&v, 3)? else {
            return Err("inpaint payload is not an image".into());
        };
        let out = image_from_b64(&b64).map_err(|e| e.to_string())?;
        if out.dims() != (side, side) {
            return Err(format!("{}x{} for resolution {side}", out.width(), out.height()));
        }
        Ok(format!("{side}x{side}"))
    });

    record("detect_schema", &|w| {
        let line = json!({
            "id": 4,
            "op": "detect",
            "image": image_to_b64(&image).expect("sample encodes"),
            "params": {"confidence_threshold": 0.5}
        });
        let v = w.exchange(&line.to_string())?;
        let Payload::Detections { detections } = parse_ok(&v, 4)? else {
            return Err("detect payload is not detections".into());
        };
        for (i, d) in detections.iter().enumerate() {
            let m = mask_from_b64(&d.mask).map_err(|e| format!("detection {i}: {e}"))?;
            if m.dims() != image.dims() {
                return Err(format!("detection {i} mask has wrong size"));
            }
            if !(0.5..=1.0).contains(&d.confidence) {
                return Err(format!("detection {i} confidence {}", d.confidence));
            }
        }
        Ok(format!("{} detections", detections.len()))
    });

    record("extract_schema", &|w| {
        let line = json!({
            "id": 5,
            "op": "extract",
            "image": image_to_b64(&image).expect("sample encodes"),
            "params": {"classes": 10, "dims": 6}
        });
        let v = w.exchange(&line.to_string())?;
        let Payload::Features {
            probabilities,
            features,
        } = parse_ok(&v, 5)?
        else {
            return Err("extract payload is not features".into());
        };
        if probabilities.len() != 10 || features.len() != 6 {
            return Err(format!("{} classes / {} dims", probabilities.len(), features.len()));
        }
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(format!("probabilities do not form a distribution (sum {sum})"));
        }
        Ok("10 classes, 6 dims".into())
    });

    record("malformed_json", &|w| {
        let v = w.exchange(r#"{"id": 6, "op": "#)?;
        is_error_response(&v)?;
        // The connection must stay usable.
        let v = w.exchange(r#"{"id":7,"op":"handshake"}"#)?;
        parse_ok(&v, 7)?;
        Ok("error response, connection alive".into())
    });

    record("truncated_base64", &|w| {
        let b64 = image_to_b64(&image).expect("sample encodes");
        let line = json!({
            "id": 8,
            "op": "extract",
            "image": &b64[..b64.len() / 2],
            "params": {"classes": 10, "dims": 6}
        });
        let v = w.exchange(&line.to_string())?;
        is_error_response(&v)?;
        if v["id"].as_u64() != Some(8) {
            return Err(format!("decode error lost the id: {}", v["id"]));
        }
        Ok("decode error reported".into())
    });

    record("unknown_op", &|w| {
        let v = w.exchange(r#"{"id":9,"op":"train"}"#)?;
        is_error_response(&v)?;
        Ok("rejected".into())
    });

    report
}
