//! Linear warmup followed by cosine decay to zero.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub const PEAK_LR: f64 = 3e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_steps: usize, total_steps: usize) -> Self {
        Self {
            peak,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
        }
    }

    /// Learning rate at `step`; steps past the end are clamped to `total_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let step = step.min(self.total_steps);
        let (w, t) = (self.warmup_steps, self.total_steps);
        if step < w {
            self.peak * step as f64 / w as f64
        } else if t == w {
            self.peak
        } else {
            self.peak * 0.5 * (1.0 + (PI * (step - w) as f64 / (t - w) as f64).cos())
        }
    }
}
