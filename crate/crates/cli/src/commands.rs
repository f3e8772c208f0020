//! Subcommand definitions and their implementations.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use ict_core::checkpoint::Checkpoint;
use ict_core::data::io::{encode_mask_png, encode_png, load_image, load_mask, save_image};
use ict_core::data::mask::{gen_freeform_mask, ratio, Band};
use ict_core::data::synth::{corpus_specs, render_synth, ShapeKind, SynthSpec};
use ict_core::metrics::{diversity, MetricReport};
use ict_core::pipeline::{insert_vocab, vocab_from_checkpoint, Model};
use ict_core::rng;
use ict_core::sampler::SamplingConfig;
use ict_core::train::{train_transformer, train_upsampler, PriorMix, TrainEvent};
use ict_core::transformer::TransformerWeights;
use ict_core::upsampler::{DiscriminatorWeights, UpsamplerWeights};
use ict_core::vocab::{downsample, fit_kmeans, KMeansOptions, VisualVocabulary, VOCAB_SIZE};

use crate::config::{read_job, resolve, CorpusConfig, TransformerJob, UpsamplerJob};
use crate::service;

pub const CHECKPOINT_ENV: &str = "ICT_CHECKPOINT_DIR";
pub const DEFAULT_MODEL_FILE: &str = "model.ictc";

#[derive(Debug, Parser)]
#[command(name = "ict", version, about = "Pluralistic image completion with a token transformer and guided upsampler")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the colour vocabulary to a corpus and write it as a checkpoint.
    FitVocab(FitVocabArgs),
    /// Train the token transformer from a TOML job file.
    TrainTransformer(JobArgs),
    /// Train the guided upsampler and discriminator from a TOML job file.
    TrainUpsampler(JobArgs),
    /// Sample completions for a masked image.
    Complete(CompleteArgs),
    /// Write the per-cell confidence map for a masked image.
    ProbMap(ProbMapArgs),
    /// Print a JSON quality report for a prediction.
    Metrics(MetricsArgs),
    /// Generate a free-form hole mask.
    GenMask(GenMaskArgs),
    /// Render synthetic training images.
    GenSynth(GenSynthArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Model checkpoint; defaults to $ICT_CHECKPOINT_DIR/model.ictc.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

impl ModelArg {
    /// Explicit path, else the environment default, else a usage error (exit 2).
    fn path(&self) -> PathBuf {
        if let Some(p) = &self.checkpoint {
            return p.clone();
        }
        match std::env::var_os(CHECKPOINT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(DEFAULT_MODEL_FILE),
            _ => Cli::command()
                .error(
                    ErrorKind::MissingRequiredArgument,
                    format!("--checkpoint is required when {CHECKPOINT_ENV} is unset"),
                )
                .exit(),
        }
    }

    fn load(&self) -> anyhow::Result<Model> {
        let path = self.path();
        Model::load(&path).with_context(|| format!("loading {}", path.display()))
    }
}

#[derive(Debug, Args)]
pub struct FitVocabArgs {
    /// Directory of PNG/PPM images.
    #[arg(long, conflicts_with = "synthetic")]
    pub corpus: Option<PathBuf>,
    /// Use this many generated synthetic images instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub image_side: usize,
    #[arg(long, default_value_t = 1)]
    pub corpus_seed: u64,
    /// Images are downsampled to this side before clustering.
    #[arg(long, default_value_t = 16)]
    pub side: usize,
    #[arg(long, default_value_t = VOCAB_SIZE)]
    pub size: usize,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct JobArgs {
    /// TOML job file.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Single-channel PNG; non-zero marks a hole.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArg,
}

#[derive(Debug, Args)]
pub struct ProbMapArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArg,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Extra samples for the diversity score (needs --mask).
    #[arg(long, num_args = 1..)]
    pub samples: Vec<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenMaskArgs {
    /// Hole ratio band, e.g. 40-60 or 0.2-0.4.
    #[arg(long, default_value = "40-60")]
    pub band: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value = "mask.png")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Only this shape: pentagram, polygon-N, stripes, gradient. Default is the mixed corpus.
    #[arg(long)]
    pub kind: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Start without a model (every model endpoint answers 503) when absent
    /// and $ICT_CHECKPOINT_DIR is unset.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Concurrent sampling jobs; defaults to the CPU count.
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::FitVocab(a) => fit_vocab(a),
        Command::TrainTransformer(a) => train_transformer_job(&a.config),
        Command::TrainUpsampler(a) => train_upsampler_job(&a.config),
        Command::Complete(a) => complete(a),
        Command::ProbMap(a) => prob_map(a),
        Command::Metrics(a) => metrics(a),
        Command::GenMask(a) => gen_mask(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::Serve(a) => serve(a),
    }
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn fit_vocab(a: FitVocabArgs) -> anyhow::Result<()> {
    let corpus = CorpusConfig {
        dir: a.corpus,
        synthetic: a.synthetic,
        image_side: a.image_side,
        seed: a.corpus_seed,
    }
    .load(Path::new("."))?;
    let mut pixels = Vec::new();
    for img in &corpus {
        pixels.extend(downsample(img, a.side)?.pixels());
    }
    let fit = fit_kmeans(&pixels, KMeansOptions::new(a.size, a.iters, a.seed).restarts(a.restarts))?;
    eprintln!("fitted {} centres, objective {:.3}", fit.centers.len(), fit.objective);
    let vocab = VisualVocabulary::new(fit.centers)?;
    let mut c = Checkpoint::new();
    insert_vocab(&mut c, &vocab);
    c.metadata.insert("vocab.seed".into(), a.seed.to_string());
    c.save(&a.out)?;
    Ok(())
}

fn train_transformer_job(path: &Path) -> anyhow::Result<()> {
    let job: TransformerJob = read_job(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let corpus = job.corpus.load(base)?;
    let vocab_path = resolve(base, &job.vocab);
    let vocab = vocab_from_checkpoint(&Checkpoint::load(&vocab_path).with_context(|| format!("loading {}", vocab_path.display()))?)?;
    let mut cfg = job.model;
    cfg.vocab_size = vocab.len();
    let mut weights = TransformerWeights::init(cfg, job.init_seed)?;
    let out = resolve(base, &job.out);
    let history = train_transformer(&corpus, &vocab, &mut weights, &job.train, |ev, w| {
        match ev {
            TrainEvent::Step { step, loss, lr } => {
                if step % 10 == 0 || step + 1 == job.train.steps {
                    eprintln!("step {step} loss {loss:.4} lr {lr:.3e}");
                }
            }
            TrainEvent::Checkpoint { epoch } => {
                eprintln!("epoch {epoch}: writing {}", out.display());
                Model::new(vocab.clone(), w.clone())?.save(&out)?;
            }
        }
        Ok(())
    })?;
    let mut model = Model::new(vocab, weights)?;
    if out.exists() {
        // Keep any stage-two weights already stored at the destination.
        if let Ok(prev) = Model::load(&out) {
            if prev.vocab == model.vocab {
                model.upsampler = prev.upsampler;
                model.discriminator = prev.discriminator;
            }
        }
    }
    let seeds = [("transformer.init_seed", job.init_seed), ("transformer.train_seed", job.train.seed)];
    save_with_seeds(&model, &out, &seeds)?;
    if let Some(h) = &job.history {
        write(&resolve(base, h), history.to_csv().as_bytes())?;
    }
    Ok(())
}

/// Save `model` with the seeds that produced it recorded as metadata.
fn save_with_seeds(model: &Model, out: &Path, seeds: &[(&str, u64)]) -> anyhow::Result<()> {
    let mut c = model.to_checkpoint();
    for (k, v) in seeds {
        c.metadata.insert((*k).into(), v.to_string());
    }
    c.save(out)?;
    Ok(())
}

fn train_upsampler_job(path: &Path) -> anyhow::Result<()> {
    let job: UpsamplerJob = read_job(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let corpus = job.corpus.load(base)?;
    let model_path = resolve(base, &job.model);
    let model = Model::load(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let mut train = job.train.clone();
    train.side = model.transformer.config().side;
    let mut gen = UpsamplerWeights::init(job.upsampler, job.init_seed);
    let mut disc = DiscriminatorWeights::init(job.upsampler, rng::derive(job.init_seed, &[1]));
    let mix = if job.transformer_fraction > 0.0 {
        PriorMix::Transformer {
            weights: &model.transformer,
            fraction: job.transformer_fraction,
            top_k: job.top_k.unwrap_or(50).min(model.vocab.len()),
        }
    } else {
        PriorMix::Degraded
    };
    let history = train_upsampler(&corpus, Some(&model.vocab), &mut gen, &mut disc, &train, mix)?;
    if let Some(last) = history.l1.last() {
        eprintln!("{} steps, final l1 {last:.4}", history.g_steps);
    }
    let out = resolve(base, &job.out);
    let seeds = [("upsampler.init_seed", job.init_seed), ("upsampler.train_seed", train.seed)];
    save_with_seeds(&model.clone().with_upsampler(gen, Some(disc)), &out, &seeds)?;
    if let Some(h) = &job.history {
        write(&resolve(base, h), history.to_csv().as_bytes())?;
    }
    Ok(())
}

fn complete(a: CompleteArgs) -> anyhow::Result<()> {
    let model = a.model.load()?;
    let image = load_image(&a.image)?;
    let mask = load_mask(&a.mask)?;
    let cfg = SamplingConfig::new(a.top_k, a.seed, a.n);
    cfg.validate(model.vocab.len())?;
    let out = model.complete(&image, &mask, &cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for (i, img) in out.images.iter().enumerate() {
        write(&a.out_dir.join(format!("sample_{i:02}.png")), &encode_png(img)?)?;
        write(&a.out_dir.join(format!("prior_{i:02}.png")), &encode_png(&out.priors[i])?)?;
    }
    write(&a.out_dir.join("prob_map.png"), &out.prob_map.to_png()?)?;
    if let Some(scores) = &out.scores {
        write(&a.out_dir.join("scores.json"), serde_json::to_string_pretty(scores)?.as_bytes())?;
    }
    eprintln!("{} samples in {:.0} ms", out.images.len(), out.elapsed_ms);
    Ok(())
}

fn prob_map(a: ProbMapArgs) -> anyhow::Result<()> {
    let model = a.model.load()?;
    let map = model.probability_map(&load_image(&a.image)?, &load_mask(&a.mask)?)?;
    write(&a.out, &map.to_png()?)
}

fn metrics(a: MetricsArgs) -> anyhow::Result<()> {
    let pred = load_image(&a.pred)?;
    let mut report = MetricReport::compute(&pred, &load_image(&a.truth)?)?;
    if !a.samples.is_empty() {
        let Some(mask) = &a.mask else {
            bail!("--samples needs --mask");
        };
        let mut all = vec![pred];
        for p in &a.samples {
            all.push(load_image(p)?);
        }
        report.diversity = Some(diversity(&all, &load_mask(mask)?)?);
    }
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => write(p, json.as_bytes()),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn gen_mask(a: GenMaskArgs) -> anyhow::Result<()> {
    let band = Band::parse(&a.band)?;
    let mask = gen_freeform_mask(a.size, a.size, band, a.seed)?;
    write(&a.out, &encode_mask_png(&mask)?)?;
    eprintln!("hole ratio {:.4}", ratio(&mask));
    Ok(())
}

fn gen_synth(a: GenSynthArgs) -> anyhow::Result<()> {
    let specs: Vec<SynthSpec> = match &a.kind {
        Some(k) => {
            let kind = ShapeKind::parse(k).with_context(|| format!("unknown shape kind `{k}`"))?;
            (0..a.count)
                .map(|i| SynthSpec::random(kind, a.side, rng::derive(a.seed, &[i as u64])))
                .collect()
        }
        None => corpus_specs(a.count, a.side, a.seed),
    };
    std::fs::create_dir_all(&a.out_dir)?;
    for (i, s) in specs.iter().enumerate() {
        save_image(&render_synth(s), a.out_dir.join(format!("synth_{i:04}.png")))?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let path = a.checkpoint.clone().or_else(|| {
        std::env::var_os(CHECKPOINT_ENV)
            .filter(|d| !d.is_empty())
            .map(|d| PathBuf::from(d).join(DEFAULT_MODEL_FILE))
    });
    let model = match path {
        Some(p) => Some(Model::load(&p).with_context(|| format!("loading {}", p.display()))?),
        None => {
            eprintln!("no checkpoint given; serving without a model");
            None
        }
    };
    let workers = a.workers.unwrap_or_else(service::default_workers);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(SocketAddr::new(a.host, a.port), model, workers))
}

