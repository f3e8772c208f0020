//! Optimisers, learning-rate schedule and the two training loops.

mod gan;
mod mlm;
pub mod optim;
pub mod schedule;

pub use gan::{degrade_prior, train_upsampler, GanHistory, PriorMix, UpsamplerTrainConfig};
pub use mlm::{masked_example, prepare_grids, train_transformer, TrainEvent, TrainHistory, TransformerTrainConfig};
pub use optim::{AdamConfig, AdamW};
pub use schedule::{LrSchedule, PEAK_LR};

use ict_ndgrad::ParamStore;

use crate::Result;

/// Evaluate `f` for every batch slot, in parallel when enabled, preserving order.
fn map_batch<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sum gradients in slot order and divide by the count, so the result does not
/// depend on thread scheduling.
fn average(mut grads: Vec<ParamStore>) -> Result<ParamStore> {
    let n = grads.len() as f64;
    let mut acc = grads.remove(0);
    for g in &grads {
        acc.add_assign(g)?;
    }
    acc.scale(1.0 / n);
    Ok(acc)
}
