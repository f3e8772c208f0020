//! RGB visual vocabulary and discrete token grids.
//!
//! Low-resolution priors are represented as square grids of indices into a
//! fixed set of RGB cluster centres. One extra id (equal to the vocabulary
//! size) is reserved for the `[MASK]` token.

use std::collections::HashSet;

use crate::image::{Mask, RgbImage};
use crate::rng;
use crate::{Error, Result};

/// Entries in the default vocabulary.
pub const VOCAB_SIZE: usize = 512;
/// `[MASK]` id for the default vocabulary.
pub const MASK_TOKEN: u16 = VOCAB_SIZE as u16;
pub const VOCAB_VERSION: u32 = 1;

pub type Rgb = [f64; 3];

fn dist2(a: &Rgb, b: &Rgb) -> f64 {
    let (dr, dg, db) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dr * dr + dg * dg + db * db
}

/// Index of the nearest centre; ties go to the lowest index.
pub fn nearest(centers: &[Rgb], p: &Rgb) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub iters: usize,
    pub seed: u64,
    /// Independent k-means++ restarts; the lowest objective wins.
    pub restarts: usize,
}

impl KMeansOptions {
    pub fn new(k: usize, iters: usize, seed: u64) -> Self {
        Self {
            k,
            iters,
            seed,
            restarts: 1,
        }
    }

    pub fn restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts.max(1);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centers: Vec<Rgb>,
    pub objective: f64,
    /// Objective after each assignment pass of the winning restart.
    pub history: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Empty clusters are moved onto the points currently farthest from their
/// centres, which never increases the objective.
pub fn fit_kmeans(pixels: &[Rgb], opts: KMeansOptions) -> Result<KMeansFit> {
    if opts.k == 0 {
        return Err(Error::Invalid("k must be positive".into()));
    }
    let distinct: HashSet<[u64; 3]> = pixels.iter().map(|p| p.map(f64::to_bits)).collect();
    if distinct.len() < opts.k {
        return Err(Error::TooFewPixels {
            distinct: distinct.len(),
            needed: opts.k,
        });
    }
    let mut best: Option<KMeansFit> = None;
    for r in 0..opts.restarts.max(1) {
        let fit = lloyd(pixels, opts, rng::derive(opts.seed, &[r as u64]));
        if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus_seed(pixels: &[Rgb], k: usize, seed: u64) -> Vec<Rgb> {
    let mut prng = rng::from_seed(seed);
    let first = (rng::unit(&mut prng) * pixels.len() as f64) as usize;
    let mut centers = vec![pixels[first.min(pixels.len() - 1)]];
    let mut d2: Vec<f64> = pixels.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng::unit(&mut prng) * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if d > 0.0 && acc > target {
                pick = Some(i);
                break;
            }
        }
        // Rounding can leave `acc` just short of `target`; fall back to the last
        // point that is not already a centre.
        let pick = pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("distinct pixels remain"));
        let c = pixels[pick];
        for (d, p) in d2.iter_mut().zip(pixels) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(pixels: &[Rgb], opts: KMeansOptions, seed: u64) -> KMeansFit {
    let k = opts.k;
    let mut centers = plus_plus_seed(pixels, k, seed);
    let mut assign = vec![usize::MAX; pixels.len()];
    let mut dists = vec![0.0; pixels.len()];
    let mut history = Vec::new();
    for _ in 0..opts.iters.max(1) {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, p) in pixels.iter().enumerate() {
            let (j, d) = nearest(&centers, p);
            if assign[i] != j {
                assign[i] = j;
                changed = true;
            }
            dists[i] = d;
            objective += d;
        }
        history.push(objective);
        if !changed && history.len() > 1 {
            break;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in pixels.iter().zip(&assign) {
            for c in 0..3 {
                sums[j][c] += p[c];
            }
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].map(|s| s / counts[j] as f64);
            }
        }
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let (far, _) = dists
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
            centers[j] = pixels[far];
            dists[far] = 0.0;
        }
    }
    // Score the returned centres; equals the last entry when the loop converged.
    let objective: f64 = pixels.iter().map(|p| nearest(&centers, p).1).sum();
    if history.last().is_some_and(|&h| objective != h) {
        history.push(objective);
    }
    KMeansFit {
        centers,
        objective,
        history,
    }
}

/// Fixed palette mapping RGB pixels to token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualVocabulary {
    centers: Vec<Rgb>,
    version: u32,
}

impl VisualVocabulary {
    pub fn new(centers: Vec<Rgb>) -> Result<Self> {
        if centers.is_empty() || centers.len() >= u16::MAX as usize {
            return Err(Error::Invalid(format!("vocabulary of {} centres", centers.len())));
        }
        if centers.iter().flatten().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(Error::Invalid("vocabulary centre outside [0,255]".into()));
        }
        let distinct: HashSet<[u64; 3]> = centers.iter().map(|p| p.map(f64::to_bits)).collect();
        if distinct.len() != centers.len() {
            return Err(Error::Invalid("duplicate vocabulary centres".into()));
        }
        Ok(Self {
            centers,
            version: VOCAB_VERSION,
        })
    }

    /// Fit a [`VOCAB_SIZE`]-entry vocabulary to the given pixels.
    pub fn fit(pixels: &[Rgb], iters: usize, seed: u64) -> Result<Self> {
        let fit = fit_kmeans(pixels, KMeansOptions::new(VOCAB_SIZE, iters, seed))?;
        Self::new(fit.centers)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn mask_token(&self) -> u16 {
        self.centers.len() as u16
    }

    pub fn centers(&self) -> &[Rgb] {
        &self.centers
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn center(&self, token: u16) -> Option<Rgb> {
        self.centers.get(token as usize).copied()
    }

    /// Nearest-centre token for every pixel of a square low-resolution image.
    pub fn quantize(&self, image: &RgbImage) -> Result<TokenGrid> {
        let side = image.width();
        if image.height() != side || !(1..=256).contains(&side) {
            return Err(Error::Dimensions(format!(
                "quantize expects a square image, got {:?}",
                image.dims()
            )));
        }
        let tokens = image
            .pixels()
            .map(|p| nearest(&self.centers, &p).0 as u16)
            .collect();
        TokenGrid::new(side, self.len(), tokens)
    }

    pub fn dequantize(&self, grid: &TokenGrid) -> Result<RgbImage> {
        if grid.vocab_size() != self.len() {
            return Err(Error::Dimensions(format!(
                "grid over {} tokens, vocabulary has {}",
                grid.vocab_size(),
                self.len()
            )));
        }
        if grid.masked_count() > 0 {
            return Err(Error::StillMasked);
        }
        let side = grid.side();
        Ok(RgbImage::from_fn(side, side, |x, y| {
            self.centers[grid.token(y * side + x) as usize]
        }))
    }
}

/// Square grid of token ids; positions holding the mask id form the masked set Π.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    side: usize,
    vocab_size: usize,
    tokens: Vec<u16>,
}

impl TokenGrid {
    pub fn new(side: usize, vocab_size: usize, tokens: Vec<u16>) -> Result<Self> {
        if tokens.len() != side * side {
            return Err(Error::Dimensions(format!(
                "{} tokens for a {side}×{side} grid",
                tokens.len()
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize > vocab_size) {
            return Err(Error::Invalid(format!("token {t} exceeds mask id {vocab_size}")));
        }
        Ok(Self {
            side,
            vocab_size,
            tokens,
        })
    }

    pub fn filled(side: usize, vocab_size: usize, token: u16) -> Result<Self> {
        Self::new(side, vocab_size, vec![token; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn mask_id(&self) -> u16 {
        self.vocab_size as u16
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }

    pub fn token(&self, pos: usize) -> u16 {
        self.tokens[pos]
    }

    pub fn set(&mut self, pos: usize, token: u16) -> Result<()> {
        if token as usize > self.vocab_size {
            return Err(Error::Invalid(format!("token {token} exceeds mask id {}", self.vocab_size)));
        }
        self.tokens[pos] = token;
        Ok(())
    }

    pub fn is_masked(&self, pos: usize) -> bool {
        self.tokens[pos] == self.mask_id()
    }

    /// Π in raster-scan order.
    pub fn masked_positions(&self) -> Vec<usize> {
        let m = self.mask_id();
        (0..self.tokens.len()).filter(|&i| self.tokens[i] == m).collect()
    }

    pub fn masked_count(&self) -> usize {
        let m = self.mask_id();
        self.tokens.iter().filter(|&&t| t == m).count()
    }

    /// Copy with the given positions replaced by `[MASK]`.
    pub fn with_masked(&self, positions: &[usize]) -> Self {
        let mut g = self.clone();
        for &p in positions {
            g.tokens[p] = g.mask_id();
        }
        g
    }

    /// Position set Π as a `side×side` mask.
    pub fn mask_grid(&self) -> Mask {
        Mask::from_fn(self.side, self.side, |x, y| self.is_masked(y * self.side + x))
    }
}

/// Mask every grid cell whose pixel block contains at least one hole pixel.
pub fn apply_token_mask(grid: &TokenGrid, pixel_mask: &Mask) -> Result<TokenGrid> {
    let side = grid.side();
    let (w, h) = pixel_mask.dims();
    if side == 0 || w % side != 0 || h % side != 0 || w == 0 || h == 0 {
        return Err(Error::Dimensions(format!(
            "mask {w}×{h} is not a multiple of grid side {side}"
        )));
    }
    let (bw, bh) = (w / side, h / side);
    let mut out = grid.clone();
    for gy in 0..side {
        for gx in 0..side {
            let hit = (0..bh).any(|dy| (0..bw).any(|dx| pixel_mask.get(gx * bw + dx, gy * bh + dy)));
            if hit {
                out.tokens[gy * side + gx] = out.mask_id();
            }
        }
    }
    Ok(out)
}

/// Block-average pooling of a square image down to `side×side`.
pub fn downsample(image: &RgbImage, side: usize) -> Result<RgbImage> {
    let (w, h) = image.dims();
    if w != h || side == 0 || w % side != 0 {
        return Err(Error::Dimensions(format!(
            "cannot pool {w}×{h} down to {side}×{side}"
        )));
    }
    let b = w / side;
    let norm = (b * b) as f64;
    Ok(RgbImage::from_fn(side, side, |gx, gy| {
        let mut acc = [0.0; 3];
        for dy in 0..b {
            for dx in 0..b {
                let p = image.pixel(gx * b + dx, gy * b + dy);
                for c in 0..3 {
                    acc[c] += p[c];
                }
            }
        }
        acc.map(|v| v / norm)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_vocab() -> VisualVocabulary {
        VisualVocabulary::new((0..8).map(|i| [i as f64 * 30.0, 0.0, 0.0]).collect()).unwrap()
    }

    #[test]
    fn kmeans_separable_clusters() {
        let mut px = vec![[0.0; 3]; 100];
        px.extend(vec![[255.0; 3]; 100]);
        let fit = fit_kmeans(&px, KMeansOptions::new(2, 20, 1)).unwrap();
        let mut c = fit.centers.clone();
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(c, vec![[0.0; 3], [255.0; 3]]);
        assert_eq!(fit.objective, 0.0);
    }

    #[test]
    fn kmeans_single_center_is_mean() {
        let px: Vec<Rgb> = (0..10).map(|i| [i as f64, 2.0 * i as f64, 5.0]).collect();
        let fit = fit_kmeans(&px, KMeansOptions::new(1, 10, 3)).unwrap();
        assert!((fit.centers[0][0] - 4.5).abs() < 1e-12);
        assert!((fit.centers[0][1] - 9.0).abs() < 1e-12);
        assert_eq!(fit.centers[0][2], 5.0);
    }

    #[test]
    fn kmeans_rejects_too_few_distinct_pixels() {
        let px = vec![[1.0, 2.0, 3.0]; 600];
        assert!(matches!(
            fit_kmeans(&px, KMeansOptions::new(2, 5, 0)),
            Err(Error::TooFewPixels { distinct: 1, needed: 2 })
        ));
    }

    #[test]
    fn quantize_exact_and_tie_rules() {
        let v = small_vocab();
        let img = RgbImage::from_fn(2, 2, |x, y| match (x, y) {
            (0, 0) => [60.0, 0.0, 0.0],
            (1, 0) => [150.0, 0.0, 0.0],
            // Halfway between centres 3 and 4.
            (0, 1) => [105.0, 0.0, 0.0],
            _ => [1000.0, 0.0, 0.0],
        });
        let g = v.quantize(&img).unwrap();
        assert_eq!(g.tokens(), &[2, 5, 3, 7]);

        // Pixel equidistant from centres 3 and 7 in a hand-built vocabulary.
        let mut centers: Vec<Rgb> = (0..8).map(|i| [0.0, i as f64 * 10.0, 200.0]).collect();
        centers[3] = [100.0, 100.0, 0.0];
        centers[7] = [100.0, 140.0, 0.0];
        let v2 = VisualVocabulary::new(centers).unwrap();
        let p = RgbImage::filled(1, 1, [100.0, 120.0, 0.0]);
        assert_eq!(v2.quantize(&p).unwrap().token(0), 3);
    }

    #[test]
    fn dequantize_contracts() {
        let v = small_vocab();
        let g = TokenGrid::filled(3, 8, 0).unwrap();
        let img = v.dequantize(&g).unwrap();
        assert!(img.pixels().all(|p| p == v.centers()[0]));
        let masked = g.with_masked(&[4]);
        assert!(matches!(v.dequantize(&masked), Err(Error::StillMasked)));
        let all: Vec<u16> = (0..8).chain(0..1).collect();
        let full = TokenGrid::new(3, 8, all).unwrap();
        assert_eq!(v.quantize(&v.dequantize(&full).unwrap()).unwrap(), full);
    }

    #[test]
    fn token_mask_block_mapping() {
        let g = TokenGrid::filled(16, VOCAB_SIZE, 7).unwrap();
        assert_eq!(apply_token_mask(&g, &Mask::empty(64, 64)).unwrap(), g);
        assert_eq!(apply_token_mask(&g, &Mask::full(64, 64)).unwrap().masked_count(), 256);
        let mut m = Mask::empty(64, 64);
        m.set(0, 0, true);
        let out = apply_token_mask(&g, &m).unwrap();
        assert_eq!(out.masked_positions(), vec![0]);
        assert!(apply_token_mask(&g, &Mask::empty(60, 64)).is_err());
    }

    #[test]
    fn downsample_examples() {
        let c = RgbImage::filled(8, 8, [10.0, 20.0, 30.0]);
        assert!(downsample(&c, 4).unwrap().pixels().all(|p| p == [10.0, 20.0, 30.0]));
        let block = RgbImage::from_fn(2, 2, |_, y| if y == 0 { [0.0; 3] } else { [255.0; 3] });
        assert_eq!(downsample(&block, 1).unwrap().pixel(0, 0), [127.5; 3]);
        let checker = RgbImage::from_fn(64, 64, |x, y| if (x + y) % 2 == 0 { [0.0; 3] } else { [255.0; 3] });
        assert!(downsample(&checker, 32).unwrap().pixels().all(|p| p == [127.5; 3]));
        assert!(downsample(&checker, 48).is_err());
    }

    #[test]
    fn vocabulary_validation() {
        assert!(VisualVocabulary::new(vec![[1.0; 3], [1.0; 3]]).is_err());
        assert!(VisualVocabulary::new(vec![[256.0, 0.0, 0.0]]).is_err());
        assert_eq!(small_vocab().mask_token(), 8);
    }
}
