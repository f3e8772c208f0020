//! TOML job files for the training subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ict_core::data::io::load_image;
use ict_core::data::synth::synth_corpus;
use ict_core::image::RgbImage;
use ict_core::train::{TransformerTrainConfig, UpsamplerTrainConfig};
use ict_core::transformer::TransformerConfig;
use ict_core::upsampler::UpsamplerConfig;
use serde::Deserialize;

/// Either a directory of PNG/PPM files or a generated synthetic set.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub dir: Option<PathBuf>,
    pub synthetic: Option<usize>,
    pub image_side: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic: None,
            image_side: 64,
            seed: 1,
        }
    }
}

impl CorpusConfig {
    pub fn load(&self, base: &Path) -> anyhow::Result<Vec<RgbImage>> {
        match (&self.dir, self.synthetic) {
            (Some(dir), None) => load_dir(&base.join(dir)),
            (None, Some(n)) => Ok(synth_corpus(n, self.image_side, self.seed)),
            _ => bail!("corpus needs exactly one of `dir` or `synthetic`"),
        }
    }
}

/// Every `.png`/`.ppm` in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> anyhow::Result<Vec<RgbImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pnm"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no images in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| load_image(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerJob {
    pub corpus: CorpusConfig,
    /// Checkpoint holding the fitted vocabulary.
    pub vocab: PathBuf,
    pub out: PathBuf,
    /// CSV loss log, `step,loss`.
    pub history: Option<PathBuf>,
    pub init_seed: u64,
    pub model: TransformerConfig,
    pub train: TransformerTrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpsamplerJob {
    pub corpus: CorpusConfig,
    /// Model checkpoint to extend; the result is written to `out`.
    pub model: PathBuf,
    pub out: PathBuf,
    pub history: Option<PathBuf>,
    pub init_seed: u64,
    /// Fraction of priors drawn from the transformer instead of degraded ground truth.
    pub transformer_fraction: f64,
    pub top_k: Option<usize>,
    pub upsampler: UpsamplerConfig,
    pub train: UpsamplerTrainConfig,
}

pub fn read_job<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Relative paths in a job file resolve against the file's directory.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
