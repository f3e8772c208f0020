#![allow(dead_code)]

use ict_core::image::{Mask, RgbImage};
use ict_core::pipeline::Model;
use ict_core::transformer::{TransformerConfig, TransformerWeights};
use ict_core::upsampler::{DiscriminatorWeights, UpsamplerConfig, UpsamplerWeights};
use ict_core::vocab::VisualVocabulary;

/// Untrained but complete model small enough for fast tests.
pub fn tiny_model() -> Model {
    let centers: Vec<[f64; 3]> = (0..8)
        .map(|i| [i as f64 * 32.0, 255.0 - i as f64 * 30.0, (i * 17 % 256) as f64])
        .collect();
    let vocab = VisualVocabulary::new(centers).unwrap();
    let cfg = TransformerConfig {
        layers: 1,
        width: 16,
        heads: 2,
        side: 8,
        vocab_size: 8,
    };
    let up = UpsamplerConfig {
        gen_channels: 4,
        disc_channels: 4,
    };
    Model::new(vocab, TransformerWeights::init(cfg, 1).unwrap())
        .unwrap()
        .with_upsampler(UpsamplerWeights::init(up, 2), Some(DiscriminatorWeights::init(up, 3)))
}

pub fn test_image(side: usize) -> RgbImage {
    RgbImage::from_fn(side, side, |x, y| [(x * 7 % 256) as f64, (y * 5 % 256) as f64, ((x + y) * 3 % 256) as f64])
}

pub fn test_mask(side: usize) -> Mask {
    Mask::from_fn(side, side, |x, y| (side / 4..side / 2).contains(&x) && (side / 8..3 * side / 4).contains(&y))
}
