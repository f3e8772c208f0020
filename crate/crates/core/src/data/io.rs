//! Image and mask files: 8-bit PNG through the `image` crate, binary PPM (P6)
//! by hand.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat, Luma, Rgb};

use crate::image::{Mask, RgbImage};
use crate::{Error, Result};

fn is_ppm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm" | "pnm")
    )
}

/// Load an 8-bit RGB image from PNG or PPM (chosen by content).
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else {
        decode_png(&bytes)
    }
}

/// Save as PPM when the extension is `.ppm`/`.pnm`, PNG otherwise.
pub fn save_image(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_ppm(path) {
        encode_ppm(image)
    } else {
        encode_png(image)?
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = decode_any(bytes)?;
    match img.color() {
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 | ColorType::La8 => {}
        other => return Err(Error::Unsupported(format!("{other:?}; only 8-bit images are accepted"))),
    }
    let rgb = img.to_rgb8();
    RgbImage::from_u8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
}

fn decode_any(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::Unsupported(u.to_string()),
        other => Error::Codec(other.to_string()),
    })
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let (w, h) = image.dims();
    let buf = image::ImageBuffer::<Rgb<u8>, _>::from_raw(w as u32, h as u32, image.to_u8())
        .ok_or_else(|| Error::Dimensions("pixel buffer does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(out.into_inner())
}

/// Single-channel 8-bit PNG.
pub fn encode_gray_png(width: usize, height: usize, values: &[u8]) -> Result<Vec<u8>> {
    let buf = image::ImageBuffer::<Luma<u8>, _>::from_raw(width as u32, height as u32, values.to_vec())
        .ok_or_else(|| Error::Dimensions("gray buffer does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let (w, h) = image.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(image.to_u8());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::Codec("empty PPM".into()))?;
    if magic != b"P6" {
        return Err(Error::Unsupported("only binary P6 PPM is supported".into()));
    }
    for f in &mut fields {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| Error::Codec("truncated PPM header".into()))?;
        *f = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Codec("malformed PPM header".into()))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Unsupported(format!("PPM maxval {maxval}; only 8-bit is accepted")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * 3;
    let raster = bytes
        .get(pos..)
        .filter(|r| r.len() >= need)
        .ok_or_else(|| Error::Codec(format!("truncated PPM raster: need {need} bytes")))?;
    RgbImage::from_u8(w, h, &raster[..need])
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Mask from a PNG; any non-zero luma marks a hole.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let img = decode_any(bytes)?;
    if !matches!(img.color(), ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8) {
        return Err(Error::Unsupported(format!("{:?} mask; only 8-bit is accepted", img.color())));
    }
    let luma = img.to_luma8();
    let bits = luma.as_raw().iter().map(|&v| v > 0).collect();
    Mask::from_bits(luma.width() as usize, luma.height() as usize, bits)
}

pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let values: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_gray_png(mask.width(), mask.height(), &values)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    decode_mask_png(&fs::read(path.as_ref())?)
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_mask_png(mask)?)?;
    Ok(())
}
