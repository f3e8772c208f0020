use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, AdamW};
use super::schedule::{LrSchedule, PEAK_LR};
use super::{average, map_batch};
use crate::data::mask::{gen_freeform_mask, Band};
use crate::image::RgbImage;
use crate::rng;
use crate::transformer::TransformerWeights;
use crate::vocab::{apply_token_mask, downsample, TokenGrid, VisualVocabulary};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    /// Defaults to one epoch of batches.
    pub warmup_steps: Option<usize>,
    pub seed: u64,
    /// Each example draws its mask ratio band uniformly from this list.
    pub bands: Vec<Band>,
    pub adam: AdamConfig,
    pub checkpoint_every_epochs: Option<usize>,
}

impl Default for TransformerTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            peak_lr: PEAK_LR,
            warmup_steps: None,
            seed: 0,
            bands: vec![Band::SMALL, Band::LARGE],
            adam: AdamConfig::TRANSFORMER,
            checkpoint_every_epochs: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

/// Progress notifications passed to the training callback.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainEvent {
    Step { step: usize, loss: f64, lr: f64 },
    /// Emitted after every `checkpoint_every_epochs` completed epochs.
    Checkpoint { epoch: usize },
}

/// Downsample and quantise each corpus image to a `side×side` token grid.
pub fn prepare_grids(corpus: &[RgbImage], vocab: &VisualVocabulary, side: usize) -> Result<Vec<TokenGrid>> {
    corpus.iter().map(|img| vocab.quantize(&downsample(img, side)?)).collect()
}

/// Input grid for one example: a fresh free-form mask at image resolution
/// projected onto the grid.
pub fn masked_example(target: &TokenGrid, image_side: usize, bands: &[Band], seed: u64) -> Result<TokenGrid> {
    let mut prng = rng::from_seed(rng::derive(seed, &[0xBA4D]));
    let band = bands[prng.random_range(0..bands.len())];
    let mask = gen_freeform_mask(image_side, image_side, band, seed)?;
    apply_token_mask(target, &mask)
}

/// Masked-token training with AdamW under warmup + cosine.
pub fn train_transformer(
    corpus: &[RgbImage],
    vocab: &VisualVocabulary,
    weights: &mut TransformerWeights,
    cfg: &TransformerTrainConfig,
    mut callback: impl FnMut(TrainEvent, &TransformerWeights) -> Result<()>,
) -> Result<TrainHistory> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 || cfg.bands.is_empty() {
        return Err(Error::Invalid("batch size and band list must be non-empty".into()));
    }
    let side = weights.config().side;
    let image_side = corpus[0].width();
    if corpus.iter().any(|c| c.dims() != (image_side, image_side)) {
        return Err(Error::Dimensions("corpus images must share one square size".into()));
    }
    let grids = prepare_grids(corpus, vocab, side)?;
    let steps_per_epoch = grids.len().div_ceil(cfg.batch_size);
    let schedule = LrSchedule::new(cfg.peak_lr, cfg.warmup_steps.unwrap_or(steps_per_epoch), cfg.steps);
    let mut opt = AdamW::new(cfg.adam);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut shuffles = 0u64;
    let mut seen = 0usize;

    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..grids.len()).collect();
                order.shuffle(&mut rng::from_seed(rng::derive(cfg.seed, &[1, shuffles])));
                shuffles += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let w: &TransformerWeights = weights;
        let results = map_batch(batch.len(), |slot| {
            let target = &grids[batch[slot]];
            let seed = rng::derive(cfg.seed, &[2, step as u64, slot as u64]);
            let input = masked_example(target, image_side, &cfg.bands, seed)?;
            w.loss_and_grad(&input, target)
        })?;
        let loss = results.iter().map(|r| r.0).sum::<f64>() / results.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Invalid(format!("non-finite loss at step {step}")));
        }
        let grads = average(results.into_iter().map(|r| r.1).collect())?;
        let lr = schedule.lr_at(step);
        opt.step(weights.params_mut(), &grads, lr)?;
        history.losses.push(loss);
        callback(TrainEvent::Step { step, loss, lr }, weights)?;

        let before = seen / grids.len();
        seen += batch.len();
        let after = seen / grids.len();
        if let Some(every) = cfg.checkpoint_every_epochs.filter(|&e| e > 0) {
            if after > before && after % every == 0 {
                callback(TrainEvent::Checkpoint { epoch: after }, weights)?;
            }
        }
    }
    Ok(history)
}
