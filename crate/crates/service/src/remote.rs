//! Remote inference backends.
//!
//! The request body is the region encoded as PNG. The response is
//!
//! ```text
//! u32 LE   header length n
//! n bytes  JSON {"height": H, "width": W, "classes": C}
//! H·W·C    f32 LE probabilities, row-major, class fastest
//! ```
//!
//! with class 0 the background.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tilscope_core::contour::{component_contour, components};
use tilscope_core::helm::Detection;
use tilscope_core::{BinaryMask, RasterImage};

use crate::config::RemoteModelConfig;

/// Allowed deviation of a pixel's probabilities from summing to one.
pub const SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("backend request failed: {0}")]
    Transport(String),
    #[error("backend timed out after {0} s")]
    Timeout(u64),
    #[error("backend answered HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("encoding patch: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub height: u32,
    pub width: u32,
    pub classes: u32,
}

/// Dense `height × width × classes` probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub header: TensorHeader,
    pub values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let c = self.header.classes as usize;
        let o = (y as usize * self.header.width as usize + x as usize) * c;
        &self.values[o..o + c]
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(4 + header.len() + self.values.len() * 4);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses and validates a response body against the expected shape.
    pub fn decode(bytes: &[u8], width: u32, height: u32, classes: u32) -> Result<Self, RemoteError> {
        let bad = |m: String| RemoteError::Malformed(m);
        let len_bytes: [u8; 4] = bytes
            .get(..4)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| bad(format!("{} bytes is too short for a header", bytes.len())))?;
        let n = u32::from_le_bytes(len_bytes) as usize;
        let head = bytes
            .get(4..4usize.saturating_add(n))
            .ok_or_else(|| bad(format!("header length {n} exceeds body")))?;
        let header: TensorHeader =
            serde_json::from_slice(head).map_err(|e| bad(format!("header: {e}")))?;
        if (header.width, header.height) != (width, height) {
            return Err(bad(format!(
                "map is {}x{}, patch is {width}x{height}",
                header.width, header.height
            )));
        }
        if header.classes != classes {
            return Err(bad(format!("{} classes, vocabulary has {classes}", header.classes)));
        }
        let body = &bytes[4 + n..];
        let expected = width as usize * height as usize * classes as usize * 4;
        if body.len() != expected {
            return Err(bad(format!("tensor holds {} bytes, expected {expected}", body.len())));
        }
        let values: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let map = ProbabilityMap { header, values };
        for (i, px) in map.values.chunks_exact(classes as usize).enumerate() {
            if px.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(bad(format!("pixel {i} has a negative or non-finite probability")));
            }
            let s: f64 = px.iter().map(|&v| v as f64).sum();
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return Err(bad(format!("pixel {i} probabilities sum to {s}")));
            }
        }
        Ok(map)
    }
}

/// Per-pixel argmax (ties to the lower index), then one detection per
/// 8-connected component of each non-background class. Components whose
/// contour encloses no area (single pixels, one-pixel lines) are dropped.
pub fn map_to_detections(map: &ProbabilityMap, vocabulary: &[String]) -> Vec<Detection> {
    let (w, h) = (map.header.width, map.header.height);
    let mut argmax = vec![0usize; w as usize * h as usize];
    for (i, px) in map.values.chunks_exact(map.header.classes as usize).enumerate() {
        let mut best = 0;
        for (c, &v) in px.iter().enumerate() {
            if v > px[best] {
                best = c;
            }
        }
        argmax[i] = best;
    }
    let mut out = Vec::new();
    for (class, name) in vocabulary.iter().enumerate().skip(1) {
        let bits: Vec<bool> = argmax.iter().map(|&a| a == class).collect();
        if !bits.iter().any(|&b| b) {
            continue;
        }
        let mask = BinaryMask::from_bits(w, h, bits).expect("mask sized from the map");
        out.extend(
            components(&mask)
                .iter()
                .filter_map(|c| Detection::from_contour(component_contour(c), name.as_str())),
        );
    }
    out
}

/// POSTs `patch` to the backend and converts its probability map into
/// detections in patch coordinates.
pub async fn remote_infer(
    client: &reqwest::Client,
    entry: &RemoteModelConfig,
    patch: &RasterImage,
) -> Result<Vec<Detection>, RemoteError> {
    let png = patch.encode_png().map_err(|e| RemoteError::Encode(e.to_string()))?;
    let timeout = entry.timeout();
    let transport = |e: reqwest::Error| {
        if e.is_timeout() {
            RemoteError::Timeout(timeout.as_secs())
        } else {
            RemoteError::Transport(e.to_string())
        }
    };
    let resp = client
        .post(&entry.endpoint)
        .header("content-type", "image/png")
        .timeout(timeout)
        .body(png)
        .send()
        .await
        .map_err(transport)?;
    let status = resp.status();
    let bytes = resp.bytes().await.map_err(transport)?;
    if !status.is_success() {
        return Err(RemoteError::Status {
            status: status.as_u16(),
            body: String::from_utf8_lossy(&bytes[..bytes.len().min(512)]).into_owned(),
        });
    }
    let map = ProbabilityMap::decode(&bytes, patch.width(), patch.height(), entry.classes.len() as u32)?;
    Ok(map_to_detections(&map, &entry.classes))
}
