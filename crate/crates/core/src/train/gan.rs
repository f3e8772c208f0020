use std::sync::Mutex;

use ict_ndgrad::{BoundParams, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, AdamW};
use super::{average, map_batch};
use crate::data::mask::{gen_freeform_mask, Band};
use crate::image::{MaskedImage, RgbImage};
use crate::rng;
use crate::sampler::gibbs_complete;
use crate::transformer::TransformerWeights;
use crate::upsampler::{
    bilinear_upsample, combined_on_tape, d_loss_on_tape, discriminator_on_tape, g_loss_on_tape,
    generator_input, generator_on_tape, l1_on_tape, DiscriminatorWeights, UpsamplerWeights,
};
use crate::vocab::{apply_token_mask, downsample, VisualVocabulary};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpsamplerTrainConfig {
    /// Generator steps; the discriminator takes the same number.
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Token grid side of the priors.
    pub side: usize,
    pub bands: Vec<Band>,
}

impl Default for UpsamplerTrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            lr: 1e-4,
            adam: AdamConfig::GAN,
            seed: 0,
            side: 16,
            bands: vec![Band::SMALL, Band::LARGE],
        }
    }
}

/// Where training priors come from.
#[derive(Clone, Copy, Debug)]
pub enum PriorMix<'a> {
    /// Ground truth pushed through the quantisation bottleneck.
    Degraded,
    /// Replace a fraction of priors with transformer completions of the masked grid.
    Transformer {
        weights: &'a TransformerWeights,
        fraction: f64,
        top_k: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanHistory {
    /// Batch-mean L1 at each generator step (images in `[−1,1]`).
    pub l1: Vec<f64>,
    pub g_adv: Vec<f64>,
    pub d_loss: Vec<f64>,
    pub d_steps: usize,
    pub g_steps: usize,
}

impl GanHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,l1,g_adv,d_loss\n");
        for i in 0..self.l1.len() {
            s.push_str(&format!("{i},{},{},{}\n", self.l1[i], self.g_adv[i], self.d_loss[i]));
        }
        s
    }
}

/// Downsample → quantise → dequantise → bilinear enlarge.
pub fn degrade_prior(image: &RgbImage, vocab: &VisualVocabulary, side: usize) -> Result<RgbImage> {
    let grid = vocab.quantize(&downsample(image, side)?)?;
    let low = vocab.dequantize(&grid)?;
    bilinear_upsample(&low, image.width(), image.height())
}

struct Prepared {
    target: RgbImage,
    input: ict_ndgrad::Array,
}

fn prepare(
    image: &RgbImage,
    vocab: &VisualVocabulary,
    cfg: &UpsamplerTrainConfig,
    mix: PriorMix<'_>,
    seed: u64,
) -> Result<Prepared> {
    let mut prng = rng::from_seed(rng::derive(seed, &[0xD0]));
    let band = cfg.bands[prng.random_range(0..cfg.bands.len())];
    let (w, h) = image.dims();
    let mask = gen_freeform_mask(w, h, band, seed)?;
    let masked = MaskedImage::new(image, &mask)?;
    let prior = match mix {
        PriorMix::Transformer {
            weights,
            fraction,
            top_k,
        } if prng.random_bool(fraction.clamp(0.0, 1.0)) => {
            let grid = vocab.quantize(&downsample(image, cfg.side)?)?;
            let grid = apply_token_mask(&grid, &mask)?;
            let done = gibbs_complete(&grid, weights, top_k, rng::derive(seed, &[0xD1]))?;
            bilinear_upsample(&vocab.dequantize(&done)?, w, h)?
        }
        _ => degrade_prior(image, vocab, cfg.side)?,
    };
    Ok(Prepared {
        target: image.clone(),
        input: generator_input(&prior, &masked)?,
    })
}

struct Slot {
    tape: Tape,
    gen: BoundParams,
    pred: Var,
    target: Var,
}

/// Alternating discriminator / generator updates, one of each per step.
pub fn train_upsampler(
    corpus: &[RgbImage],
    vocab: Option<&VisualVocabulary>,
    gen: &mut UpsamplerWeights,
    disc: &mut DiscriminatorWeights,
    cfg: &UpsamplerTrainConfig,
    mix: PriorMix<'_>,
) -> Result<GanHistory> {
    let vocab = vocab.ok_or_else(|| Error::Invalid("upsampler training needs a fitted vocabulary".into()))?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 || cfg.bands.is_empty() {
        return Err(Error::Invalid("batch size and band list must be non-empty".into()));
    }
    let mut opt_g = AdamW::new(cfg.adam);
    let mut opt_d = AdamW::new(cfg.adam);
    let mut history = GanHistory::default();

    for step in 0..cfg.steps {
        let g_now: &UpsamplerWeights = gen;
        let d_now: &DiscriminatorWeights = disc;
        // Generator forward for every slot, kept for the generator update below.
        let forward = map_batch(cfg.batch_size, |slot| {
            let idx = (step * cfg.batch_size + slot) % corpus.len();
            let seed = rng::derive(cfg.seed, &[step as u64, slot as u64]);
            let ex = prepare(&corpus[idx], vocab, cfg, mix, seed)?;
            let mut tape = Tape::new();
            let gp = g_now.params().bind(&mut tape);
            let x = tape.leaf(ex.input);
            let pred = generator_on_tape(&mut tape, &gp, x)?;
            let target = tape.leaf(ex.target.to_chw_signed());

            let mut dt = Tape::new();
            let dp = d_now.params().bind(&mut dt);
            let real = dt.leaf(ex.target.to_chw_signed());
            let fake = dt.leaf(tape.value(pred).clone());
            let zr = discriminator_on_tape(&mut dt, &dp, real)?;
            let zf = discriminator_on_tape(&mut dt, &dp, fake)?;
            let dl = d_loss_on_tape(&mut dt, zr, zf)?;
            let d_value = dt.value(dl).data()[0];
            let d_grads = dp.gradients(&dt.backward(dl)?, &dt);
            Ok((
                Mutex::new(Slot {
                    tape,
                    gen: gp,
                    pred,
                    target,
                }),
                d_value,
                d_grads,
            ))
        })?;
        let mut slots = Vec::with_capacity(forward.len());
        let mut d_grads = Vec::with_capacity(forward.len());
        let mut d_sum = 0.0;
        for (s, dv, dg) in forward {
            slots.push(s);
            d_sum += dv;
            d_grads.push(dg);
        }
        opt_d.step(disc.params_mut(), &average(d_grads)?, cfg.lr)?;
        history.d_steps += 1;

        let d_new: &DiscriminatorWeights = disc;
        let results = map_batch(slots.len(), |i| {
            let mut guard = slots[i].lock().expect("slot lock");
            let s = &mut *guard;
            let dp = d_new.params().bind(&mut s.tape);
            let zf = discriminator_on_tape(&mut s.tape, &dp, s.pred)?;
            let g_adv = g_loss_on_tape(&mut s.tape, zf)?;
            let l1 = l1_on_tape(&mut s.tape, s.pred, s.target)?;
            let total = combined_on_tape(&mut s.tape, l1, g_adv)?;
            let grads = s.gen.gradients(&s.tape.backward(total)?, &s.tape);
            Ok((s.tape.value(l1).data()[0], s.tape.value(g_adv).data()[0], grads))
        })?;
        let n = results.len() as f64;
        let l1 = results.iter().map(|r| r.0).sum::<f64>() / n;
        let ga = results.iter().map(|r| r.1).sum::<f64>() / n;
        if !(l1.is_finite() && ga.is_finite() && d_sum.is_finite()) {
            return Err(Error::Invalid(format!("non-finite adversarial loss at step {step}")));
        }
        opt_g.step(gen.params_mut(), &average(results.into_iter().map(|r| r.2).collect())?, cfg.lr)?;
        history.g_steps += 1;
        history.l1.push(l1);
        history.g_adv.push(ga);
        history.d_loss.push(d_sum / n);
    }
    Ok(history)
}
