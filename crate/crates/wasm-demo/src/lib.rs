//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Images cross the boundary as RGBA bytes (canvas `ImageData` layout) and
//! masks as one byte per pixel, non-zero meaning missing.

use ict_core::data::mask::{gen_freeform_mask, ratio, Band};
use ict_core::data::synth::{render_synth, ShapeKind, SynthSpec};
use ict_core::image::{Mask, RgbImage};
use ict_core::upsampler::bilinear_upsample;
use ict_core::vocab::{apply_token_mask, downsample, fit_kmeans, KMeansOptions, TokenGrid, VisualVocabulary};
use wasm_bindgen::prelude::*;

fn to_rgba(img: &RgbImage) -> Vec<u8> {
    img.to_u8().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

fn from_rgba(rgba: &[u8], side: usize) -> Result<RgbImage, String> {
    if rgba.len() != side * side * 4 {
        return Err(format!("expected {} RGBA bytes, got {}", side * side * 4, rgba.len()));
    }
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    RgbImage::from_u8(side, side, &rgb).map_err(|e| e.to_string())
}

fn to_mask(bytes: &[u8], side: usize) -> Result<Mask, String> {
    Mask::from_bits(side, side, bytes.iter().map(|&b| b != 0).collect()).map_err(|e| e.to_string())
}

pub fn shape_rgba(kind: &str, side: usize, seed: u64) -> Result<Vec<u8>, String> {
    let kind = ShapeKind::parse(kind).ok_or_else(|| format!("unknown shape `{kind}`"))?;
    Ok(to_rgba(&render_synth(&SynthSpec::random(kind, side, seed))))
}

pub fn mask_bytes(side: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<u8>, String> {
    let m = gen_freeform_mask(side, side, Band::new(lo, hi), seed).map_err(|e| e.to_string())?;
    Ok(m.bits().iter().map(|&b| b as u8).collect())
}

/// Downsample to `grid×grid`, quantise to a `colors`-entry palette fitted on
/// the image itself, and enlarge back to `side×side`.
pub fn token_view_rgba(rgba: &[u8], side: usize, grid: usize, colors: usize, seed: u64) -> Result<Vec<u8>, String> {
    let img = from_rgba(rgba, side)?;
    let low = downsample(&img, grid).map_err(|e| e.to_string())?;
    let pixels: Vec<[f64; 3]> = low.pixels().collect();
    let mut distinct = pixels.iter().map(|p| p.map(f64::to_bits)).collect::<Vec<_>>();
    distinct.sort_unstable();
    distinct.dedup();
    let k = colors.clamp(1, distinct.len());
    let fit = fit_kmeans(&pixels, KMeansOptions::new(k, 20, seed)).map_err(|e| e.to_string())?;
    let vocab = VisualVocabulary::new(fit.centers).map_err(|e| e.to_string())?;
    let tokens = vocab.quantize(&low).map_err(|e| e.to_string())?;
    let prior = vocab.dequantize(&tokens).map_err(|e| e.to_string())?;
    Ok(to_rgba(&bilinear_upsample(&prior, side, side).map_err(|e| e.to_string())?))
}

/// Grid cells a pixel mask hides under the any-pixel rule, one byte per cell.
pub fn token_mask_bytes(mask: &[u8], side: usize, grid: usize) -> Result<Vec<u8>, String> {
    let mask = to_mask(mask, side)?;
    let g = TokenGrid::filled(grid, 1, 0).map_err(|e| e.to_string())?;
    let masked = apply_token_mask(&g, &mask).map_err(|e| e.to_string())?;
    Ok((0..masked.len()).map(|i| masked.is_masked(i) as u8).collect())
}

#[wasm_bindgen]
pub fn render_shape(kind: &str, side: usize, seed: u64) -> Result<Vec<u8>, JsError> {
    shape_rgba(kind, side, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn free_form_mask(side: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<u8>, JsError> {
    mask_bytes(side, lo, hi, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn mask_ratio(mask: &[u8], side: usize) -> Result<f64, JsError> {
    to_mask(mask, side).map(|m| ratio(&m)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn token_view(rgba: &[u8], side: usize, grid: usize, colors: usize, seed: u64) -> Result<Vec<u8>, JsError> {
    token_view_rgba(rgba, side, grid, colors, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn token_mask(mask: &[u8], side: usize, grid: usize) -> Result<Vec<u8>, JsError> {
    token_mask_bytes(mask, side, grid).map_err(|e| JsError::new(&e))
}
