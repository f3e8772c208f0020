//! Gibbs completion of masked token grids with top-𝒦 truncation.
//!
//! Masked positions are visited once each in raster order. Every visit runs a
//! full forward pass over the current grid, truncates that position's
//! distribution to its 𝒦 most likely tokens and draws by inverse CDF from a
//! seeded xoshiro256** stream.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::io::encode_gray_png;
use crate::rng::{self, Prng};
use crate::transformer::TransformerWeights;
use crate::vocab::TokenGrid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub top_k: usize,
    pub seed: u64,
    pub num_samples: usize,
}

impl SamplingConfig {
    pub fn new(top_k: usize, seed: u64, num_samples: usize) -> Self {
        Self {
            top_k,
            seed,
            num_samples,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.top_k == 0 || self.top_k > vocab_size {
            return Err(Error::Invalid(format!("top-k {} outside [1, {vocab_size}]", self.top_k)));
        }
        if self.num_samples == 0 {
            return Err(Error::Invalid("at least one sample is required".into()));
        }
        Ok(())
    }
}

/// Row softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Indices of the `k` largest entries, ties broken by lower index, in descending order.
pub fn top_k_indices(dist: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Keep the `k` most probable entries and renormalise them to sum to one.
pub fn top_k_renormalize(dist: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > dist.len() {
        return Err(Error::Invalid(format!("top-k {k} outside [1, {}]", dist.len())));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 || dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Invalid(format!("not a probability vector (sum {total})")));
    }
    let keep = top_k_indices(dist, k);
    let mass: f64 = keep.iter().map(|&i| dist[i]).sum();
    let mut out = vec![0.0; dist.len()];
    if mass > 0.0 {
        for &i in &keep {
            out[i] = dist[i] / mass;
        }
    } else {
        for &i in &keep {
            out[i] = 1.0 / k as f64;
        }
    }
    Ok(out)
}

/// Inverse-CDF draw: the first index whose cumulative mass exceeds `u ∈ [0,1)`.
pub fn inverse_cdf(dist: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// One sampling decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub position: usize,
    pub token: u16,
    /// Top-𝒦 support the token was drawn from.
    pub support: Vec<usize>,
    /// Untruncated conditional at this step.
    pub probs: Vec<f64>,
}

/// Gibbs completion recording every draw.
pub fn gibbs_trace(
    grid: &TokenGrid,
    weights: &TransformerWeights,
    top_k: usize,
    prng: &mut Prng,
) -> Result<(TokenGrid, Vec<Draw>)> {
    let vocab = weights.config().vocab_size;
    if top_k == 0 || top_k > vocab {
        return Err(Error::Invalid(format!("top-k {top_k} outside [1, {vocab}]")));
    }
    let mut cur = grid.clone();
    let mut draws = Vec::with_capacity(grid.masked_count());
    for pos in grid.masked_positions() {
        let logits = weights.forward_rows(&cur, &[pos])?;
        let probs = softmax(logits.data());
        let truncated = top_k_renormalize(&probs, top_k)?;
        let token = inverse_cdf(&truncated, rng::unit(prng));
        cur.set(pos, token as u16)?;
        draws.push(Draw {
            position: pos,
            token: token as u16,
            support: top_k_indices(&probs, top_k),
            probs,
        });
    }
    Ok((cur, draws))
}

/// Complete every masked position of `grid` with the stream seeded by `seed`.
pub fn gibbs_complete(grid: &TokenGrid, weights: &TransformerWeights, top_k: usize, seed: u64) -> Result<TokenGrid> {
    let mut prng = rng::from_seed(seed);
    Ok(gibbs_trace(grid, weights, top_k, &mut prng)?.0)
}

/// `n` independent completions; sample `i` uses seed `seed + i`.
pub fn sample_n(grid: &TokenGrid, weights: &TransformerWeights, cfg: &SamplingConfig) -> Result<Vec<TokenGrid>> {
    cfg.validate(weights.config().vocab_size)?;
    let run = |i: usize| {
        let mut prng = rng::chain(cfg.seed, i as u64);
        gibbs_trace(grid, weights, cfg.top_k, &mut prng).map(|r| r.0)
    };
    #[cfg(feature = "parallel")]
    let out = (0..cfg.num_samples).into_par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let out = (0..cfg.num_samples).map(run).collect();
    out
}

/// Per-cell maximum token probability; 1.0 outside the masked set.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    side: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.side + x]
    }

    /// Mean over the given raster positions; `None` for an empty set.
    pub fn mean_over(&self, positions: &[usize]) -> Option<f64> {
        (!positions.is_empty())
            .then(|| positions.iter().map(|&p| self.values[p]).sum::<f64>() / positions.len() as f64)
    }

    /// Grayscale bytes, `round(value·255)`.
    pub fn to_gray(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_gray_png(self.side, self.side, &self.to_gray())
    }
}

/// One forward pass over the masked grid.
pub fn probability_map(grid: &TokenGrid, weights: &TransformerWeights) -> Result<ProbabilityMap> {
    let pi = grid.masked_positions();
    let mut values = vec![1.0; grid.len()];
    if !pi.is_empty() {
        let logits = weights.forward_rows(grid, &pi)?;
        let v = weights.config().vocab_size;
        for (row, &p) in logits.data().chunks_exact(v).zip(&pi) {
            values[p] = softmax(row).into_iter().fold(0.0, f64::max);
        }
    }
    Ok(ProbabilityMap {
        side: grid.side(),
        values,
    })
}

/// Sample order by descending score; equal scores keep their original order.
pub fn rank_by_scores(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}
