//! RGB images, binary hole masks and masked inputs.

use ict_ndgrad::Array;

use crate::{Error, Result};

/// Interleaved RGB image with `f64` channels nominally in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimensions(format!(
                "{} values for a {width}×{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_raw(width, height, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Round and clamp to 8-bit channels.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Copy rounded to the nearest representable 8-bit image.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.to_u8().into_iter().map(f64::from).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.pixel(self.width - 1 - x, y))
    }

    /// Planar `3×H×W` array scaled from `[0,255]` to `[−1,1]`.
    pub fn to_chw_signed(&self) -> Array {
        let (w, h) = (self.width, self.height);
        Array::from_fn(&[3, h, w], |i| {
            let c = i / (h * w);
            let p = i % (h * w);
            self.data[p * 3 + c] / 127.5 - 1.0
        })
    }

    /// Inverse of [`RgbImage::to_chw_signed`].
    pub fn from_chw_signed(a: &Array) -> Result<Self> {
        let [3, h, w] = *a.shape() else {
            return Err(Error::Dimensions(format!(
                "expected 3×H×W array, got {:?}",
                a.shape()
            )));
        };
        let plane = h * w;
        Ok(Self::from_fn(w, h, |x, y| {
            let p = y * w + x;
            [0, 1, 2].map(|c| (a.data()[c * plane + p] + 1.0) * 127.5)
        }))
    }
}

/// Binary hole mask; `true` marks a missing pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Dimensions(format!(
                "{} bits for a {width}×{height} mask",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Fraction of missing pixels.
    pub fn ratio(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    pub fn is_superset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.dims() != other.dims() {
            return Err(Error::Dimensions("mask union of different sizes".into()));
        }
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        })
    }
}

/// Full-resolution input with its hole mask; hole pixels are zeroed.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedImage {
    image: RgbImage,
    mask: Mask,
}

impl MaskedImage {
    pub fn new(image: &RgbImage, mask: &Mask) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::Dimensions(format!(
                "image {:?} vs mask {:?}",
                image.dims(),
                mask.dims()
            )));
        }
        let mut masked = image.clone();
        for y in 0..image.height() {
            for x in 0..image.width() {
                if mask.get(x, y) {
                    masked.set_pixel(x, y, [0.0; 3]);
                }
            }
        }
        Ok(Self {
            image: masked,
            mask: mask.clone(),
        })
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// `mask ? prediction : known`, pixelwise.
    pub fn composite(&self, original: &RgbImage, prediction: &RgbImage) -> Result<RgbImage> {
        if original.dims() != self.mask.dims() || prediction.dims() != self.mask.dims() {
            return Err(Error::Dimensions("composite inputs disagree in size".into()));
        }
        Ok(RgbImage::from_fn(original.width(), original.height(), |x, y| {
            if self.mask.get(x, y) {
                prediction.pixel(x, y)
            } else {
                original.pixel(x, y)
            }
        }))
    }
}
