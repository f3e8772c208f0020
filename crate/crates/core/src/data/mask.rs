//! Procedural free-form hole masks built from thick random strokes and discs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::Mask;
use crate::rng::{self, Prng};
use crate::{Error, Result};

const MAX_ATTEMPTS: usize = 1000;
const MAX_ELEMENTS: usize = 12;

/// Ratio band `[lo, hi]` for generated masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// The two training/evaluation bands: 20–40% and 40–60%.
    pub const SMALL: Band = Band::new(0.2, 0.4);
    pub const LARGE: Band = Band::new(0.4, 0.6);

    pub fn contains(&self, r: f64) -> bool {
        r >= self.lo && r <= self.hi
    }

    /// Parse `"40-60"` (percent) or `"0.4-0.6"` (fractions).
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| Error::Invalid(format!("band `{s}` must look like 40-60")))?;
        let parse = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("bad band bound `{t}`")))
        };
        let (mut lo, mut hi) = (parse(a)?, parse(b)?);
        if lo > 1.0 || hi > 1.0 {
            lo /= 100.0;
            hi /= 100.0;
        }
        let band = Band::new(lo, hi);
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lo) || !(0.0..=1.0).contains(&self.hi) || self.lo > self.hi {
            return Err(Error::Invalid(format!("invalid band [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// Fraction of missing pixels.
pub fn ratio(mask: &Mask) -> f64 {
    mask.ratio()
}

fn stamp_disc(bits: &mut [bool], w: usize, h: usize, cx: f64, cy: f64, r: f64) {
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as isize).clamp(0, w as isize) as usize;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as isize).clamp(0, h as isize) as usize;
    let r2 = r * r;
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r2 {
                bits[y * w + x] = true;
            }
        }
    }
}

/// One random element: a thick random-walk polyline or a disc.
fn random_element(rng: &mut Prng, w: usize, h: usize) -> Vec<bool> {
    let mut bits = vec![false; w * h];
    let size = w.min(h) as f64;
    if rng.random_bool(0.75) {
        let max_thick = (size / 8.0).max(3.0);
        let thickness = rng.random_range(3.0..=max_thick);
        let vertices = rng.random_range(4..=8);
        let (mut x, mut y) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let mut angle = rng.random_range(0.0..std::f64::consts::TAU);
        for _ in 0..vertices {
            angle += rng.random_range(-1.2..1.2);
            let len = rng.random_range(size / 8.0..size / 3.0);
            let (nx, ny) = (
                (x + len * angle.cos()).clamp(0.0, w as f64),
                (y + len * angle.sin()).clamp(0.0, h as f64),
            );
            let steps = (len / 0.5).ceil() as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                stamp_disc(&mut bits, w, h, x + (nx - x) * t, y + (ny - y) * t, thickness / 2.0);
            }
            (x, y) = (nx, ny);
        }
    } else {
        let r = rng.random_range(size / 16.0..size / 5.0);
        let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        stamp_disc(&mut bits, w, h, cx, cy, r.max(1.0));
    }
    bits
}

/// Free-form mask whose hole ratio lands inside `band`, deterministic per seed.
///
/// Elements are added one at a time; an element that would overshoot the band
/// is discarded, and a mask that reaches the element cap without entering the
/// band is restarted. Each discarded element or restart costs one attempt.
pub fn gen_freeform_mask(width: usize, height: usize, band: Band, seed: u64) -> Result<Mask> {
    band.validate()?;
    let n = width * height;
    if n == 0 {
        return Err(Error::Dimensions("empty mask canvas".into()));
    }
    if band.hi == 0.0 {
        return Ok(Mask::empty(width, height));
    }
    if band.lo == 1.0 {
        return Ok(Mask::full(width, height));
    }
    let mut prng = rng::from_seed(seed);
    let mut bits = vec![false; n];
    let mut elements = 0usize;
    let mut attempts = 0usize;
    while attempts < MAX_ATTEMPTS {
        let el = random_element(&mut prng, width, height);
        let merged = bits.iter().zip(&el).filter(|(&a, &b)| a || b).count();
        let r = merged as f64 / n as f64;
        if r > band.hi {
            attempts += 1;
            continue;
        }
        for (a, b) in bits.iter_mut().zip(&el) {
            *a |= *b;
        }
        elements += 1;
        if band.contains(r) {
            return Mask::from_bits(width, height, bits);
        }
        if elements == MAX_ELEMENTS {
            attempts += 1;
            bits.iter_mut().for_each(|b| *b = false);
            elements = 0;
        }
    }
    Err(Error::BandInfeasible {
        lo: band.lo,
        hi: band.hi,
        attempts: MAX_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_bands() {
        assert_eq!(gen_freeform_mask(32, 32, Band::new(0.0, 0.0), 1).unwrap().ratio(), 0.0);
        assert_eq!(gen_freeform_mask(32, 32, Band::new(1.0, 1.0), 1).unwrap().ratio(), 1.0);
    }

    #[test]
    fn lands_in_band_and_is_deterministic() {
        let m = gen_freeform_mask(64, 64, Band::LARGE, 7).unwrap();
        assert!(Band::LARGE.contains(m.ratio()), "{}", m.ratio());
        assert_eq!(m, gen_freeform_mask(64, 64, Band::LARGE, 7).unwrap());
        assert_ne!(m, gen_freeform_mask(64, 64, Band::LARGE, 8).unwrap());
    }

    #[test]
    fn many_seeds_many_sizes() {
        for seed in 0..40 {
            for &(w, h) in &[(64, 64), (32, 48), (128, 128)] {
                for band in [Band::SMALL, Band::LARGE] {
                    let m = gen_freeform_mask(w, h, band, seed).unwrap();
                    assert!(band.contains(m.ratio()));
                }
            }
        }
    }

    #[test]
    fn infeasible_band_errors() {
        // A 0.0001-wide band on a 4×4 canvas cannot be hit by any pixel count.
        let r = gen_freeform_mask(4, 4, Band::new(0.5001, 0.5002), 3);
        assert!(matches!(r, Err(Error::BandInfeasible { .. })));
    }

    #[test]
    fn band_parsing() {
        assert_eq!(Band::parse("40-60").unwrap(), Band::LARGE);
        assert_eq!(Band::parse("0.2-0.4").unwrap(), Band::SMALL);
        assert!(Band::parse("60-40").is_err());
        assert!(Band::parse("abc").is_err());
    }
}
