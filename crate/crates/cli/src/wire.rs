//! JSON bodies of the `/v1` API.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ict_core::data::io::{decode_mask_png, decode_png};
use ict_core::image::{Mask, RgbImage};
use serde::{Deserialize, Serialize};

pub const MAX_SAMPLES: usize = 64;

fn default_samples() -> usize {
    1
}

fn default_top_k() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    /// Base64 PNG, RGB or gray, 8-bit.
    pub image: String,
    /// Base64 single-channel PNG; non-zero marks a hole.
    pub mask: String,
    #[serde(default = "default_samples")]
    pub num_samples: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Base64 PNG results in seed order.
    pub images: Vec<String>,
    /// Base64 grayscale PNG of the per-cell maximum probability.
    pub prob_map: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbMapRequest {
    pub image: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub seq_len: usize,
    pub side: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub upsampler: bool,
    pub discriminator: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_config: Option<ModelInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub fn encode_b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_b64(field: &str, s: &str) -> Result<Vec<u8>, String> {
    // Accept data URLs as produced by canvas.toDataURL().
    let s = s.split_once(";base64,").map_or(s, |(_, b)| b);
    STANDARD.decode(s.trim()).map_err(|e| format!("{field}: invalid base64 ({e})"))
}

pub fn decode_image(field: &str, s: &str) -> Result<RgbImage, String> {
    decode_png(&decode_b64(field, s)?).map_err(|e| format!("{field}: {e}"))
}

pub fn decode_mask(field: &str, s: &str) -> Result<Mask, String> {
    decode_mask_png(&decode_b64(field, s)?).map_err(|e| format!("{field}: {e}"))
}
