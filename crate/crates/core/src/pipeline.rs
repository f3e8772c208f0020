//! End-to-end completion: tokenise the masked input, sample priors, upsample,
//! composite into the hole.

use std::path::Path;
use std::time::Instant;

use ict_ndgrad::Array;

use crate::checkpoint::Checkpoint;
use crate::image::{Mask, MaskedImage, RgbImage};
use crate::sampler::{probability_map, sample_n, ProbabilityMap, SamplingConfig};
use crate::transformer::{TransformerConfig, TransformerWeights};
use crate::upsampler::{bilinear_upsample, DiscriminatorWeights, UpsamplerConfig, UpsamplerWeights};
use crate::vocab::{apply_token_mask, downsample, TokenGrid, VisualVocabulary};
use crate::{Error, Result};

/// Everything needed to serve completions.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub vocab: VisualVocabulary,
    pub transformer: TransformerWeights,
    /// Without a generator the enlarged prior itself fills the hole.
    pub upsampler: Option<UpsamplerWeights>,
    pub discriminator: Option<DiscriminatorWeights>,
}

impl Model {
    pub fn new(vocab: VisualVocabulary, transformer: TransformerWeights) -> Result<Self> {
        if vocab.len() != transformer.config().vocab_size {
            return Err(Error::Invalid(format!(
                "vocabulary of {} entries for a {}-token transformer",
                vocab.len(),
                transformer.config().vocab_size
            )));
        }
        Ok(Self {
            vocab,
            transformer,
            upsampler: None,
            discriminator: None,
        })
    }

    pub fn with_upsampler(mut self, gen: UpsamplerWeights, disc: Option<DiscriminatorWeights>) -> Self {
        self.upsampler = Some(gen);
        self.discriminator = disc;
        self
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        let t = self.transformer.config();
        for (k, v) in [
            ("transformer.layers", t.layers),
            ("transformer.width", t.width),
            ("transformer.heads", t.heads),
            ("transformer.side", t.side),
            ("transformer.vocab_size", t.vocab_size),
        ] {
            c.metadata.insert(k.into(), v.to_string());
        }
        insert_vocab(&mut c, &self.vocab);
        c.insert_group("transformer", self.transformer.params());
        if let Some(g) = &self.upsampler {
            c.metadata.insert("upsampler.gen_channels".into(), g.config().gen_channels.to_string());
            c.insert_group("upsampler", g.params());
        }
        if let Some(d) = &self.discriminator {
            c.metadata.insert("upsampler.disc_channels".into(), d.config().disc_channels.to_string());
            c.insert_group("discriminator", d.params());
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let cfg = TransformerConfig {
            layers: c.require_meta("transformer.layers")?,
            width: c.require_meta("transformer.width")?,
            heads: c.require_meta("transformer.heads")?,
            side: c.require_meta("transformer.side")?,
            vocab_size: c.require_meta("transformer.vocab_size")?,
        };
        let vocab = vocab_from_checkpoint(c)?;
        let transformer = TransformerWeights::from_params(cfg, c.group("transformer"))?;
        let mut model = Model::new(vocab, transformer)?;
        let defaults = UpsamplerConfig::default();
        let up_cfg = UpsamplerConfig {
            gen_channels: c.meta("upsampler.gen_channels").map_or(Ok(defaults.gen_channels), |_| {
                c.require_meta("upsampler.gen_channels")
            })?,
            disc_channels: c.meta("upsampler.disc_channels").map_or(Ok(defaults.disc_channels), |_| {
                c.require_meta("upsampler.disc_channels")
            })?,
        };
        let gen = c.group("upsampler");
        if !gen.is_empty() {
            model.upsampler = Some(UpsamplerWeights::from_params(up_cfg, gen)?);
        }
        let disc = c.group("discriminator");
        if !disc.is_empty() {
            model.discriminator = Some(DiscriminatorWeights::from_params(up_cfg, disc)?);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Masked token grid for a full-resolution input.
    pub fn tokenize(&self, masked: &MaskedImage) -> Result<TokenGrid> {
        let side = self.transformer.config().side;
        let grid = self.vocab.quantize(&downsample(masked.image(), side)?)?;
        apply_token_mask(&grid, masked.mask())
    }

    pub fn probability_map(&self, image: &RgbImage, mask: &Mask) -> Result<ProbabilityMap> {
        let masked = MaskedImage::new(image, mask)?;
        probability_map(&self.tokenize(&masked)?, &self.transformer)
    }

    /// `n` completions of `image` inside `mask`, each agreeing with `image` outside it.
    pub fn complete(&self, image: &RgbImage, mask: &Mask, cfg: &SamplingConfig) -> Result<Completion> {
        let start = Instant::now();
        let (w, h) = image.dims();
        if w != h {
            return Err(Error::Dimensions(format!("input must be square, got {w}×{h}")));
        }
        let masked = MaskedImage::new(image, mask)?;
        let grid = self.tokenize(&masked)?;
        let prob_map = probability_map(&grid, &self.transformer)?;
        let grids = sample_n(&grid, &self.transformer, cfg)?;
        let mut images = Vec::with_capacity(grids.len());
        let mut priors = Vec::with_capacity(grids.len());
        for g in &grids {
            let low = self.vocab.dequantize(g)?;
            let up = bilinear_upsample(&low, w, h)?;
            let pred = match &self.upsampler {
                Some(gen) => gen.forward(&up, &masked)?,
                None => up,
            };
            images.push(masked.composite(image, &pred.quantized())?);
            priors.push(low);
        }
        let scores = match &self.discriminator {
            Some(d) => Some(images.iter().map(|i| d.score(i)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Ok(Completion {
            images,
            priors,
            prob_map,
            scores,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Store a vocabulary as `vocab.centers` (`n×3`) plus its version.
pub fn insert_vocab(c: &mut Checkpoint, vocab: &VisualVocabulary) {
    c.metadata.insert("vocab.version".into(), vocab.version().to_string());
    let centers = vocab.centers();
    c.tensors.insert(
        "vocab.centers",
        Array::from_fn(&[centers.len(), 3], |i| centers[i / 3][i % 3]),
    );
}

/// Read the vocabulary from a vocabulary-only or full model checkpoint.
pub fn vocab_from_checkpoint(c: &Checkpoint) -> Result<VisualVocabulary> {
    let centers = c
        .tensors
        .get("vocab.centers")
        .ok_or_else(|| Error::Checkpoint("missing vocab.centers".into()))?;
    if centers.rank() != 2 || centers.shape()[1] != 3 {
        return Err(Error::Checkpoint(format!("vocab.centers has shape {:?}", centers.shape())));
    }
    VisualVocabulary::new(centers.data().chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
}

#[derive(Clone, Debug)]
pub struct Completion {
    /// One composited result per sample, in seed order.
    pub images: Vec<RgbImage>,
    /// The low-resolution appearance prior behind each result.
    pub priors: Vec<RgbImage>,
    pub prob_map: ProbabilityMap,
    /// Mean discriminator patch score per result, when a discriminator is loaded.
    pub scores: Option<Vec<f64>>,
    pub elapsed_ms: f64,
}
