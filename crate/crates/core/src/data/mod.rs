//! Masks, synthetic imagery and file I/O.

pub mod io;
pub mod mask;
pub mod synth;

pub use io::{load_image, load_mask, save_image, save_mask};
pub use mask::{gen_freeform_mask, ratio, Band};
pub use synth::{render_synth, synth_corpus, Pose, ShapeKind, SynthSpec};
