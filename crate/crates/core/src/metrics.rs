//! Image quality and sample diversity.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::image::{Mask, RgbImage};
use crate::{Error, Result};

const PEAK: f64 = 255.0;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

fn same_shape(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimensions(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    if a.data().is_empty() {
        return Err(Error::Dimensions("empty image".into()));
    }
    Ok(())
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data().len() as f64)
}

/// `10·log10(255²/MSE)` over all channels; `+∞` for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / m).log10()
    })
}

/// Mean absolute difference normalised by the 255 dynamic range.
pub fn mae(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.data().len() as f64 / PEAK)
}

/// BT.601 luma plane.
pub fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b).collect()
}

/// Normalised 11×11 Gaussian window, σ = 1.5.
pub fn gaussian_window() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(WINDOW * WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gy * gx);
        }
    }
    w
}

/// Single-scale SSIM on luma, averaged over every fully-contained window.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = a.dims();
    if w < WINDOW || h < WINDOW {
        return Err(Error::Dimensions(format!("SSIM needs at least {WINDOW}×{WINDOW}, got {w}×{h}")));
    }
    let (ya, yb) = (luma(a), luma(b));
    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - WINDOW {
        for ox in 0..=w - WINDOW {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..WINDOW {
                let row = (oy + ky) * w + ox;
                for kx in 0..WINDOW {
                    let k = win[ky * WINDOW + kx];
                    let (x, y) = (ya[row + kx], yb[row + kx]);
                    mx += k * x;
                    my += k * y;
                    sxx += k * x * x;
                    syy += k * y * y;
                    sxy += k * x * y;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean pairwise RMS difference over masked pixels, normalised to `[0,1]`.
pub fn diversity(samples: &[RgbImage], mask: &Mask) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Invalid("diversity needs at least two samples".into()));
    }
    for s in samples {
        if s.dims() != mask.dims() {
            return Err(Error::Dimensions(format!("sample {:?} vs mask {:?}", s.dims(), mask.dims())));
        }
    }
    let holes: Vec<usize> = (0..mask.bits().len()).filter(|&i| mask.bits()[i]).collect();
    if holes.is_empty() {
        return Err(Error::Invalid("diversity over an empty mask".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (a, b) = (samples[i].data(), samples[j].data());
            let mut ss = 0.0;
            for &p in &holes {
                for c in 0..3 {
                    let d = (a[p * 3 + c] - b[p * 3 + c]) / PEAK;
                    ss += d * d;
                }
            }
            total += (ss / (holes.len() * 3) as f64).sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Quality summary for one prediction against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Decibels; serialised as the string `"infinite"` for identical images.
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub mae: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<f64>,
}

impl MetricReport {
    pub fn compute(prediction: &RgbImage, truth: &RgbImage) -> Result<Self> {
        Ok(Self {
            psnr: psnr(prediction, truth)?,
            ssim: ssim(prediction, truth)?,
            mae: mae(prediction, truth)?,
            diversity: None,
        })
    }
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("infinite")
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "infinite" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value `{t}`"))),
    }
}
