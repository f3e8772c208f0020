//! Guided upsampling network and its patch discriminator.
//!
//! The generator sees the bilinearly enlarged prior stacked with the masked
//! input (six channels, pixels in `[−1,1]`) and contains no normalisation
//! layers, so initialisation is fan-in scaled.

use ict_ndgrad::{Array, BoundParams, ParamStore, Tape, Var};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::{MaskedImage, RgbImage};
use crate::rng;
use crate::{Error, Result};

pub const ALPHA_L1: f64 = 1.0;
pub const ALPHA_ADV: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.2;
const RES_BLOCKS: usize = 4;

/// Separable bilinear resize with half-pixel centres and edge clamping.
///
/// Sample positions are kept as exact integer ratios so that the result
/// commutes bit-exactly with horizontal flips.
pub fn bilinear_upsample(image: &RgbImage, width: usize, height: usize) -> Result<RgbImage> {
    let (w, h) = image.dims();
    if w == 0 || h == 0 || width < w || height < h {
        return Err(Error::Dimensions(format!(
            "cannot upsample {w}×{h} to {width}×{height}"
        )));
    }
    let xs = taps(w, width);
    let ys = taps(h, height);
    let mut rows = vec![[0.0; 3]; width * h];
    for y in 0..h {
        for (x, tap) in xs.iter().enumerate() {
            rows[y * width + x] = tap.mix(|i| image.pixel(i, y));
        }
    }
    Ok(RgbImage::from_fn(width, height, |x, y| ys[y].mix(|i| rows[i * width + x])))
}

struct Tap {
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
}

impl Tap {
    fn mix(&self, px: impl Fn(usize) -> [f64; 3]) -> [f64; 3] {
        let (a, b) = (px(self.lo), px(self.hi));
        [0, 1, 2].map(|c| a[c] * self.w_lo + b[c] * self.w_hi)
    }
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    // Source coordinate of output x is n / d with n = (2x+1)·src − dst, d = 2·dst.
    let d = 2 * dst as i64;
    let last = src as i64 - 1;
    (0..dst as i64)
        .map(|x| {
            let n = (2 * x + 1) * src as i64 - dst as i64;
            if n <= 0 {
                Tap { lo: 0, hi: 0, w_lo: 1.0, w_hi: 0.0 }
            } else if n >= d * last {
                let l = last as usize;
                Tap { lo: l, hi: l, w_lo: 1.0, w_hi: 0.0 }
            } else {
                let (i, r) = (n / d, n % d);
                Tap {
                    lo: i as usize,
                    hi: i as usize + 1,
                    w_lo: (d - r) as f64 / d as f64,
                    w_hi: r as f64 / d as f64,
                }
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpsamplerConfig {
    /// Generator width after the first convolution; later stages use 2× and 4×.
    pub gen_channels: usize,
    /// Discriminator width of the first stage; later stages use 2×, 4×, 8×.
    pub disc_channels: usize,
}

impl Default for UpsamplerConfig {
    fn default() -> Self {
        Self {
            gen_channels: 16,
            disc_channels: 16,
        }
    }
}

struct ConvSpec {
    name: String,
    cin: usize,
    cout: usize,
    k: usize,
    gain: f64,
}

fn conv(name: impl Into<String>, cin: usize, cout: usize, k: usize, gain: f64) -> ConvSpec {
    ConvSpec {
        name: name.into(),
        cin,
        cout,
        k,
        gain,
    }
}

fn generator_convs(c: usize) -> Vec<ConvSpec> {
    let g = std::f64::consts::SQRT_2;
    let mut v = vec![
        conv("gen.enc", 6, c, 3, g),
        conv("gen.down0", c, 2 * c, 4, g),
        conv("gen.down1", 2 * c, 4 * c, 4, g),
        conv("gen.down2", 4 * c, 4 * c, 4, g),
    ];
    for r in 0..RES_BLOCKS {
        v.push(conv(format!("gen.res{r}.conv0"), 4 * c, 4 * c, 3, g));
        v.push(conv(format!("gen.res{r}.conv1"), 4 * c, 4 * c, 3, 1.0));
    }
    v.push(conv("gen.up0", 4 * c, 4 * c, 3, g));
    v.push(conv("gen.up1", 4 * c, 2 * c, 3, g));
    v.push(conv("gen.up2", 2 * c, c, 3, g));
    v.push(conv("gen.out", c, 3, 3, 1.0));
    v
}

fn discriminator_convs(c: usize) -> Vec<ConvSpec> {
    let g = std::f64::consts::SQRT_2;
    vec![
        conv("disc.conv0", 3, c, 4, g),
        conv("disc.conv1", c, 2 * c, 4, g),
        conv("disc.conv2", 2 * c, 4 * c, 4, g),
        conv("disc.conv3", 4 * c, 8 * c, 4, g),
        conv("disc.conv4", 8 * c, 1, 4, 1.0),
    ]
}

fn init_convs(specs: &[ConvSpec], seed: u64) -> ParamStore {
    let mut prng = rng::from_seed(seed);
    let mut params = ParamStore::new();
    for s in specs {
        let fan_in = (s.cin * s.k * s.k) as f64;
        let normal = Normal::new(0.0, s.gain / fan_in.sqrt()).expect("valid std");
        params.insert(
            format!("{}.w", s.name),
            Array::from_fn(&[s.cout, s.cin, s.k, s.k], |_| normal.sample(&mut prng)),
        );
        params.insert(format!("{}.b", s.name), Array::zeros(&[s.cout]));
    }
    params
}

fn check_convs(specs: &[ConvSpec], params: &ParamStore, what: &str) -> Result<()> {
    if params.len() != 2 * specs.len() {
        return Err(Error::Invalid(format!(
            "{what}: expected {} tensors, found {}",
            2 * specs.len(),
            params.len()
        )));
    }
    for s in specs {
        for (suffix, shape) in [("w", vec![s.cout, s.cin, s.k, s.k]), ("b", vec![s.cout])] {
            let name = format!("{}.{suffix}", s.name);
            let a = params
                .get(&name)
                .ok_or_else(|| Error::Invalid(format!("{what}: missing tensor `{name}`")))?;
            if a.shape() != shape.as_slice() {
                return Err(Error::Invalid(format!(
                    "{what}: `{name}` has shape {:?}, expected {shape:?}",
                    a.shape()
                )));
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::Invalid(format!("{what}: non-finite weights")));
    }
    Ok(())
}

fn conv_layer(tape: &mut Tape, p: &BoundParams, name: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
    let y = tape.conv2d(x, p.var(&format!("{name}.w"))?, stride, padding)?;
    Ok(tape.add_channel_bias(y, p.var(&format!("{name}.b"))?)?)
}

fn lrelu(tape: &mut Tape, x: Var) -> Result<Var> {
    Ok(tape.leaky_relu(x, LEAKY_SLOPE)?)
}

/// Generator parameters δ.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsamplerWeights {
    config: UpsamplerConfig,
    params: ParamStore,
}

impl UpsamplerWeights {
    pub fn init(config: UpsamplerConfig, seed: u64) -> Self {
        Self {
            config,
            params: init_convs(&generator_convs(config.gen_channels), seed),
        }
    }

    pub fn from_params(config: UpsamplerConfig, params: ParamStore) -> Result<Self> {
        check_convs(&generator_convs(config.gen_channels), &params, "upsampler")?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &UpsamplerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Full-resolution prediction in `[0,255]` from the enlarged prior and the masked input.
    pub fn forward(&self, prior_up: &RgbImage, masked: &MaskedImage) -> Result<RgbImage> {
        let input = generator_input(prior_up, masked)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.leaf(input);
        let y = generator_on_tape(&mut tape, &p, x)?;
        RgbImage::from_chw_signed(tape.value(y))
    }
}

/// `prior ⌢ masked` as a `6×H×W` array in `[−1,1]`.
pub fn generator_input(prior_up: &RgbImage, masked: &MaskedImage) -> Result<Array> {
    let (w, h) = masked.image().dims();
    if prior_up.dims() != (w, h) {
        return Err(Error::Dimensions(format!(
            "prior {:?} vs image {:?}",
            prior_up.dims(),
            (w, h)
        )));
    }
    if w % 8 != 0 || h % 8 != 0 || w == 0 || h == 0 {
        return Err(Error::Dimensions(format!("upsampler needs sides divisible by 8, got {w}×{h}")));
    }
    let mut data = prior_up.to_chw_signed().into_data();
    data.extend(masked.image().to_chw_signed().into_data());
    Ok(Array::new(&[6, h, w], data)?)
}

/// Encoder (3 stride-2 stages), residual blocks, decoder (3 nearest-×2 + conv stages), tanh.
pub fn generator_on_tape(tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
    let mut h = conv_layer(tape, p, "gen.enc", x, 1, 1)?;
    h = lrelu(tape, h)?;
    for i in 0..3 {
        h = conv_layer(tape, p, &format!("gen.down{i}"), h, 2, 1)?;
        h = lrelu(tape, h)?;
    }
    for r in 0..RES_BLOCKS {
        let a = conv_layer(tape, p, &format!("gen.res{r}.conv0"), h, 1, 1)?;
        let a = lrelu(tape, a)?;
        let a = conv_layer(tape, p, &format!("gen.res{r}.conv1"), a, 1, 1)?;
        h = tape.add(h, a)?;
    }
    for i in 0..3 {
        h = tape.nearest_upsample2x(h)?;
        h = conv_layer(tape, p, &format!("gen.up{i}"), h, 1, 1)?;
        h = lrelu(tape, h)?;
    }
    let out = conv_layer(tape, p, "gen.out", h, 1, 1)?;
    Ok(tape.tanh(out)?)
}

/// Patch discriminator parameters ω.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorWeights {
    config: UpsamplerConfig,
    params: ParamStore,
}

impl DiscriminatorWeights {
    pub fn init(config: UpsamplerConfig, seed: u64) -> Self {
        Self {
            config,
            params: init_convs(&discriminator_convs(config.disc_channels), seed),
        }
    }

    pub fn from_params(config: UpsamplerConfig, params: ParamStore) -> Result<Self> {
        check_convs(&discriminator_convs(config.disc_channels), &params, "discriminator")?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &UpsamplerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Patch probabilities in `(0,1)` for an image in `[0,255]`.
    pub fn patch_scores(&self, image: &RgbImage) -> Result<Array> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.leaf(image.to_chw_signed());
        let z = discriminator_on_tape(&mut tape, &p, x)?;
        let s = tape.sigmoid(z)?;
        Ok(tape.value(s).clone())
    }

    /// Mean patch probability, used to rank samples.
    pub fn score(&self, image: &RgbImage) -> Result<f64> {
        let s = self.patch_scores(image)?;
        Ok(s.sum() / s.len() as f64)
    }
}

/// Five 4×4 convolutions (strides 2,2,2,1,1) returning patch logits.
pub fn discriminator_on_tape(tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
    let mut h = x;
    for (i, stride) in [2, 2, 2, 1].into_iter().enumerate() {
        h = conv_layer(tape, p, &format!("disc.conv{i}"), h, stride, 1)?;
        h = lrelu(tape, h)?;
    }
    conv_layer(tape, p, "disc.conv4", h, 1, 1)
}

/// Mean absolute difference.
pub fn l1_on_tape(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let a = tape.abs(d)?;
    Ok(tape.mean(a)?)
}

pub fn l1_loss(pred: &Array, target: &Array) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimensions(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Err(Error::Dimensions("empty images".into()));
    }
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// `−[mean log D(real) + mean log(1 − D(fake))]` from patch logits.
pub fn d_loss_on_tape(tape: &mut Tape, z_real: Var, z_fake: Var) -> Result<Var> {
    let lr = tape.log_sigmoid(z_real)?;
    let lr = tape.mean(lr)?;
    let neg = tape.scale(z_fake, -1.0)?;
    let lf = tape.log_sigmoid(neg)?;
    let lf = tape.mean(lf)?;
    let s = tape.add(lr, lf)?;
    Ok(tape.scale(s, -1.0)?)
}

/// Non-saturating generator loss `−mean log D(fake)`.
pub fn g_loss_on_tape(tape: &mut Tape, z_fake: Var) -> Result<Var> {
    let l = tape.log_sigmoid(z_fake)?;
    let l = tape.mean(l)?;
    Ok(tape.scale(l, -1.0)?)
}

/// `(d_loss, g_loss)` for images in `[0,255]`.
pub fn adversarial_losses(pred: &RgbImage, real: &RgbImage, disc: &DiscriminatorWeights) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let p = disc.params().bind(&mut tape);
    let xr = tape.leaf(real.to_chw_signed());
    let xf = tape.leaf(pred.to_chw_signed());
    let zr = discriminator_on_tape(&mut tape, &p, xr)?;
    let zf = discriminator_on_tape(&mut tape, &p, xf)?;
    let d = d_loss_on_tape(&mut tape, zr, zf)?;
    let g = g_loss_on_tape(&mut tape, zf)?;
    Ok((tape.value(d).data()[0], tape.value(g).data()[0]))
}

pub fn combined_loss(l1: f64, g_adv: f64) -> f64 {
    ALPHA_L1 * l1 + ALPHA_ADV * g_adv
}

pub fn combined_on_tape(tape: &mut Tape, l1: Var, g_adv: Var) -> Result<Var> {
    let a = tape.scale(l1, ALPHA_L1)?;
    let b = tape.scale(g_adv, ALPHA_ADV)?;
    Ok(tape.add(a, b)?)
}

/// True if any parameter looks like a normalisation layer.
pub fn has_normalization(params: &ParamStore) -> bool {
    params.names().any(|n| {
        let n = n.to_ascii_lowercase();
        n.contains("norm") || n.contains("gamma") || n.contains("beta") || n.split('.').any(|s| s == "in")
    })
}
