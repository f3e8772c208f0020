//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use ict_cli::service::router;
use ict_cli::wire::{decode_b64, encode_b64, CompletionResponse};
use ict_core::checkpoint::Checkpoint;
use ict_core::data::io::{decode_png, encode_mask_png, encode_png, save_image, save_mask};
use ict_core::data::mask::{gen_freeform_mask, Band};
use ict_core::data::synth::{render_synth, synth_corpus, ShapeKind, SynthSpec};
use ict_core::image::{Mask, MaskedImage, RgbImage};
use ict_core::metrics::{diversity, mae, psnr, ssim};
use ict_core::ndgrad::gradcheck::run_suite;
use ict_core::ndgrad::{Array, ParamStore, Tape};
use ict_core::pipeline::Model;
use ict_core::rng;
use ict_core::sampler::{gibbs_complete, gibbs_trace, probability_map, sample_n, softmax, SamplingConfig};
use ict_core::train::{
    train_transformer, train_upsampler, LrSchedule, PriorMix, TransformerTrainConfig, UpsamplerTrainConfig, PEAK_LR,
};
use ict_core::transformer::{layer_forward, mlm_loss, TransformerConfig, TransformerWeights, LN_EPS};
use ict_core::upsampler::{d_loss_on_tape, DiscriminatorWeights, UpsamplerConfig, UpsamplerWeights, ALPHA_ADV, ALPHA_L1};
use ict_core::vocab::{apply_token_mask, downsample, fit_kmeans, KMeansOptions, TokenGrid, VisualVocabulary};
use rand::Rng;
use serde_json::json;
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// Straight-loop transformer, written against the parameter names only.

struct Reference<'a> {
    p: &'a ParamStore,
    cfg: TransformerConfig,
}

fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

impl<'a> Reference<'a> {
    fn new(w: &'a TransformerWeights) -> Self {
        Self { p: w.params(), cfg: *w.config() }
    }

    fn get(&self, name: &str) -> &Array {
        self.p.get(name).unwrap_or_else(|| panic!("missing {name}"))
    }

    fn matvec(&self, x: &[f64], name: &str) -> Vec<f64> {
        let w = self.get(name);
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j] += x[i] * w.data()[i * cols + j];
            }
        }
        out
    }

    fn bias(&self, x: &mut [f64], name: &str) {
        for (v, b) in x.iter_mut().zip(self.get(name).data()) {
            *v += b;
        }
    }

    fn norm(&self, x: &[f64], pre: &str) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let (g, b) = (self.get(&format!("{pre}.gamma")), self.get(&format!("{pre}.beta")));
        (0..x.len())
            .map(|i| (x[i] - mean) / (var + LN_EPS).sqrt() * g.data()[i] + b.data()[i])
            .collect()
    }

    fn layer(&self, l: usize, e: &[Vec<f64>], causal: bool) -> Vec<Vec<f64>> {
        let n = e.len();
        let dh = self.cfg.width / self.cfg.heads;
        let pre = format!("layers.{l}");
        let mut cat = vec![Vec::with_capacity(self.cfg.width); n];
        for h in 0..self.cfg.heads {
            let proj = |m: &str| -> Vec<Vec<f64>> {
                e.iter().map(|row| self.matvec(row, &format!("{pre}.attn.{m}.{h}"))).collect()
            };
            let (q, k, v) = (proj("q"), proj("k"), proj("v"));
            for i in 0..n {
                let visible = if causal { i + 1 } else { n };
                let s: Vec<f64> = (0..visible)
                    .map(|j| (0..dh).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..visible {
                        acc += (s[j] - m).exp() / z * v[j][c];
                    }
                    cat[i].push(acc);
                }
            }
        }
        (0..n)
            .map(|i| {
                let mut m = self.matvec(&cat[i], &format!("{pre}.attn.out.w"));
                self.bias(&mut m, &format!("{pre}.attn.out.b"));
                let m = self.norm(&m, &format!("{pre}.ln1"));
                let f: Vec<f64> = m.iter().zip(&e[i]).map(|(a, b)| a + b).collect();
                let mut h = self.matvec(&f, &format!("{pre}.mlp.fc1.w"));
                self.bias(&mut h, &format!("{pre}.mlp.fc1.b"));
                let h: Vec<f64> = h.into_iter().map(erf_gelu).collect();
                let mut o = self.matvec(&h, &format!("{pre}.mlp.fc2.w"));
                self.bias(&mut o, &format!("{pre}.mlp.fc2.b"));
                let o = self.norm(&o, &format!("{pre}.ln2"));
                o.iter().zip(&f).map(|(a, b)| a + b).collect()
            })
            .collect()
    }

    fn logits(&self, tokens: &[u16], causal: bool) -> Vec<Vec<f64>> {
        let (tok, pos) = (self.get("tok_emb"), self.get("pos_emb"));
        let d = self.cfg.width;
        let mut e: Vec<Vec<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| (0..d).map(|c| tok.data()[t as usize * d + c] + pos.data()[i * d + c]).collect())
            .collect();
        for l in 0..self.cfg.layers {
            e = self.layer(l, &e, causal);
        }
        e.iter()
            .map(|row| {
                let mut o = self.matvec(row, "head.w");
                self.bias(&mut o, "head.b");
                o
            })
            .collect()
    }
}

fn small_cfg(vocab_size: usize, side: usize) -> TransformerConfig {
    TransformerConfig { layers: 2, width: 32, heads: 4, side, vocab_size }
}

fn random_tokens(n: usize, vocab: usize, seed: u64) -> Vec<u16> {
    let mut p = rng::from_seed(seed);
    (0..n).map(|_| p.random_range(0..vocab as u16)).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn nearest_copy(g: &TokenGrid) -> Vec<u16> {
    let s = g.side() as i64;
    let known: Vec<usize> = (0..g.len()).filter(|&i| !g.is_masked(i)).collect();
    (0..g.len())
        .map(|i| {
            if !g.is_masked(i) {
                return g.token(i);
            }
            let (x, y) = (i as i64 % s, i as i64 / s);
            let mut best = (i64::MAX, 0u16);
            for &j in &known {
                let (a, b) = (j as i64 % s, j as i64 / s);
                let d = (a - x).pow(2) + (b - y).pow(2);
                if d < best.0 {
                    best = (d, g.token(j));
                }
            }
            best.1
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Criteria.

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let results = run_suite(10, 1e-5).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let (worst_name, worst) = results.iter().fold(("", 0.0f64), |a, &(n, e)| if e > a.1 { (n, e) } else { a });
    check(
        worst < 1e-4 && elapsed < Duration::from_secs(120),
        format!("{} ops x 10 seeds, worst {worst_name} rel err {worst:.2e}, {:.1}s", results.len(), elapsed.as_secs_f64()),
    )
}

fn loss_identities() -> Outcome {
    let grid = TokenGrid::filled(16, 512, 3).map_err(|e| e.to_string())?;
    let pi: Vec<usize> = (0..256).collect();
    let uniform = mlm_loss(&Array::zeros(&[256, 512]), &grid, &pi).map_err(|e| e.to_string())?;
    let mut t = Tape::new();
    let half = t.leaf(Array::zeros(&[1, 2, 2]));
    let half2 = t.leaf(Array::zeros(&[1, 2, 2]));
    let d = d_loss_on_tape(&mut t, half, half2).map_err(|e| e.to_string())?;
    let d = t.value(d).data()[0];
    let ok = (uniform - 512f64.ln()).abs() < 1e-9
        && (d - 2.0 * 2f64.ln()).abs() < 1e-9
        && ALPHA_L1 == 1.0
        && ALPHA_ADV == 0.1;
    check(ok, format!("uniform mlm {uniform:.12}, d_loss(D=0.5) {d:.12}, alphas ({ALPHA_L1}, {ALPHA_ADV})"))
}

fn schedule_endpoints() -> Outcome {
    let s = LrSchedule::new(PEAK_LR, 100, 1000);
    let (a, b, c) = (s.lr_at(0), s.lr_at(100), s.lr_at(1000));
    check(a == 0.0 && b == 3e-4 && c == 0.0, format!("lr(0)={a:e} lr(warmup)={b:e} lr(total)={c:e}"))
}

fn vocabulary_invariants() -> Outcome {
    let mut pixels = Vec::new();
    for img in synth_corpus(64, 64, 2) {
        pixels.extend(downsample(&img, 16).map_err(|e| e.to_string())?.pixels());
    }
    let mut p = rng::from_seed(77);
    pixels.extend((0..4096).map(|_| [0, 1, 2].map(|_| p.random_range(0.0..=255.0))));
    let fit = fit_kmeans(&pixels, KMeansOptions::new(512, 20, 4)).map_err(|e| e.to_string())?;
    let monotone = fit.history.windows(2).all(|w| w[1] <= w[0]);
    let vocab = VisualVocabulary::new(fit.centers.clone()).map_err(|e| e.to_string())?;

    let mut identity = true;
    for half in 0..2u16 {
        let g = TokenGrid::new(16, 512, (0..256).map(|t| t + 256 * half).collect()).map_err(|e| e.to_string())?;
        identity &= vocab.quantize(&vocab.dequantize(&g).map_err(|e| e.to_string())?).map_err(|e| e.to_string())? == g;
    }

    let pts: Vec<[f64; 3]> = (0..1000).map(|_| [0, 1, 2].map(|_| p.random_range(0.0..=255.0))).collect();
    let mut brute = 0;
    for px in &pts {
        let img = RgbImage::filled(1, 1, *px);
        let got = vocab.quantize(&img).map_err(|e| e.to_string())?.token(0) as usize;
        let mut best = (f64::INFINITY, 0);
        for (k, c) in fit.centers.iter().enumerate() {
            let d: f64 = (0..3).map(|i| (c[i] - px[i]).powi(2)).sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        brute += (got == best.1) as usize;
    }
    check(
        monotone && identity && brute == 1000,
        format!(
            "{} Lloyd passes monotone={monotone}, 512-token identity={identity}, brute-force agreement {brute}/1000",
            fit.history.len()
        ),
    )
}

fn bidirectionality() -> Outcome {
    let cfg = small_cfg(16, 8);
    let (mut lib_moves, mut causal_still, mut agree) = (0, 0, 0);
    let mut worst_ref = 0.0f64;
    for inst in 0..20u64 {
        let w = TransformerWeights::init(cfg, 100 + inst).map_err(|e| e.to_string())?;
        let r = Reference::new(&w);
        let tokens = random_tokens(64, 16, 200 + inst);
        let j = 1 + (inst as usize * 7) % 63;
        let mut bumped = tokens.clone();
        bumped[j] = (bumped[j] + 1) % 16;
        let ga = TokenGrid::new(8, 16, tokens.clone()).map_err(|e| e.to_string())?;
        let gb = TokenGrid::new(8, 16, bumped.clone()).map_err(|e| e.to_string())?;
        let (la, lb) = (w.forward(&ga).map_err(|e| e.to_string())?, w.forward(&gb).map_err(|e| e.to_string())?);
        let moved = (0..j).all(|i| (0..16).map(|k| (la.data()[i * 16 + k] - lb.data()[i * 16 + k]).abs()).sum::<f64>() > 1e-12);
        lib_moves += moved as usize;

        let full = r.logits(&tokens, false);
        let dev = (0..64 * 16).map(|k| (full[k / 16][k % 16] - la.data()[k]).abs()).fold(0.0, f64::max);
        worst_ref = worst_ref.max(dev);
        agree += (dev < 1e-9) as usize;

        let (ca, cb) = (r.logits(&tokens, true), r.logits(&bumped, true));
        causal_still += (0..j).all(|i| ca[i] == cb[i]) as usize;
    }

    let w = TransformerWeights::init(cfg, 9).map_err(|e| e.to_string())?;
    let r = Reference::new(&w);
    let mut p = rng::from_seed(10);
    let e0 = Array::from_fn(&[64, 32], |_| p.random_range(-1.0..1.0));
    let mut t = Tape::new();
    let bound = w.params().bind(&mut t);
    let e = t.leaf(e0.clone());
    let out = layer_forward(&mut t, &bound, &cfg, 1, e).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = e0.data().chunks(32).map(<[f64]>::to_vec).collect();
    let want = r.layer(1, &rows, false);
    let layer_dev = (0..64 * 32).map(|k| (want[k / 32][k % 32] - t.value(out).data()[k]).abs()).fold(0.0, f64::max);

    check(
        lib_moves == 20 && causal_still == 20 && agree == 20 && layer_dev < 1e-10,
        format!(
            "earlier logits moved {lib_moves}/20, causal oracle unchanged {causal_still}/20, \
             oracle agreement {agree}/20 (max {worst_ref:.1e}), layer deviation {layer_dev:.1e}"
        ),
    )
}

fn two_process_run(dir: &std::path::Path, out: &str) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_ict"))
        .args(["complete", "--image", "in.png", "--mask", "mask.png", "--out-dir", out])
        .args(["--n", "3", "--top-k", "3", "--seed", "11", "--checkpoint", "model.ictc"])
        .current_dir(dir)
        .env_remove("ICT_CHECKPOINT_DIR")
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("ict complete exited with {status}"))
    }
}

fn sampling_contracts() -> Outcome {
    // 𝒦=1 against an independent iterated argmax.
    let cfg = small_cfg(16, 8);
    let w = TransformerWeights::init(cfg, 21).map_err(|e| e.to_string())?;
    let r = Reference::new(&w);
    let pi: Vec<usize> = (0..64).filter(|i| i % 3 == 1).collect();
    let grid = TokenGrid::new(8, 16, random_tokens(64, 16, 22)).map_err(|e| e.to_string())?.with_masked(&pi);
    let mut cur = grid.tokens().to_vec();
    for &p in &pi {
        cur[p] = argmax(&r.logits(&cur, false)[p]) as u16;
    }
    let greedy: Vec<TokenGrid> = (0..5)
        .map(|s| gibbs_complete(&grid, &w, 1, s * 1000 + 3))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let k1 = greedy.iter().all(|g| g.tokens() == cur.as_slice());

    // Bit-exact reproducibility across two processes.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    common::tiny_model().save(dir.path().join("model.ictc")).map_err(|e| e.to_string())?;
    save_image(&common::test_image(32), dir.path().join("in.png")).map_err(|e| e.to_string())?;
    save_mask(&common::test_mask(32), dir.path().join("mask.png")).map_err(|e| e.to_string())?;
    two_process_run(dir.path(), "a")?;
    two_process_run(dir.path(), "b")?;
    let mut files = 0;
    let mut same = true;
    for entry in std::fs::read_dir(dir.path().join("a")).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let a = std::fs::read(dir.path().join("a").join(&name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("b").join(&name)).map_err(|e| e.to_string())?;
        same &= a == b;
        files += 1;
    }

    // Every draw inside the top-𝒦 set of its own conditional.
    let mut draws = 0;
    let mut inside = true;
    for seed in 0..20 {
        let (_, trace) = gibbs_trace(&grid, &w, 4, &mut rng::from_seed(seed)).map_err(|e| e.to_string())?;
        for d in trace {
            let mut order: Vec<usize> = (0..d.probs.len()).collect();
            order.sort_by(|&a, &b| d.probs[b].partial_cmp(&d.probs[a]).unwrap().then(a.cmp(&b)));
            inside &= order[..4].contains(&(d.token as usize));
            draws += 1;
        }
    }

    // Reduced vocabulary: chain frequencies against exact enumeration.
    let tiny = TransformerConfig { layers: 1, width: 8, heads: 2, side: 2, vocab_size: 4 };
    let mut wt = TransformerWeights::init(tiny, 5).map_err(|e| e.to_string())?;
    for v in wt.params_mut().get_mut("head.w").unwrap().data_mut() {
        *v *= 60.0;
    }
    let base = TokenGrid::new(2, 4, vec![1, 0, 0, 2]).map_err(|e| e.to_string())?.with_masked(&[1, 2]);
    let rt = Reference::new(&wt);
    let mut exact = [0.0; 16];
    let mut toks = base.tokens().to_vec();
    let p1 = softmax(&rt.logits(&toks, false)[1]);
    for a in 0..4 {
        toks[1] = a as u16;
        let p2 = softmax(&rt.logits(&toks, false)[2]);
        for b in 0..4 {
            exact[a * 4 + b] = p1[a] * p2[b];
        }
    }
    let n = 10_000;
    let mut counts = [0usize; 16];
    for s in 0..n {
        let g = gibbs_complete(&base, &wt, 4, s as u64).map_err(|e| e.to_string())?;
        counts[g.token(1) as usize * 4 + g.token(2) as usize] += 1;
    }
    let mut worst_z = 0.0f64;
    for k in 0..16 {
        let sigma = (exact[k] * (1.0 - exact[k]) / n as f64).sqrt();
        let dev = (counts[k] as f64 / n as f64 - exact[k]).abs();
        worst_z = worst_z.max(if sigma > 0.0 { dev / sigma } else if dev == 0.0 { 0.0 } else { f64::INFINITY });
    }

    check(
        k1 && same && files >= 5 && inside && worst_z <= 3.0,
        format!(
            "K=1 equals iterated argmax over 5 seeds={k1}, two-process files identical={same} ({files} files), \
             {draws} draws within top-4={inside}, enumeration worst |z|={worst_z:.2} over {n} draws"
        ),
    )
}

// Settings for the desk-scale shape experiment.
const SHAPE_CORPUS: usize = 256;
const SHAPE_STEPS: usize = 1500;
const SHAPE_LR: f64 = PEAK_LR;

struct ShapeModel {
    vocab: VisualVocabulary,
    weights: TransformerWeights,
    train_secs: f64,
}

struct HeldOut {
    truth: TokenGrid,
    masked: TokenGrid,
}

fn train_shape_model() -> Result<ShapeModel, String> {
    let t0 = Instant::now();
    let corpus = synth_corpus(SHAPE_CORPUS, 64, 1);
    let mut pixels = Vec::new();
    for img in &corpus {
        pixels.extend(downsample(img, 16).map_err(|e| e.to_string())?.pixels());
    }
    let vocab = VisualVocabulary::fit(&pixels, 20, 3).map_err(|e| e.to_string())?;
    let mut weights = TransformerWeights::init(TransformerConfig::default(), 7).map_err(|e| e.to_string())?;
    let cfg = TransformerTrainConfig {
        steps: SHAPE_STEPS,
        peak_lr: SHAPE_LR,
        seed: 11,
        bands: vec![Band::SMALL, Band::LARGE],
        ..Default::default()
    };
    train_transformer(&corpus, &vocab, &mut weights, &cfg, |_, _| Ok(())).map_err(|e| e.to_string())?;
    Ok(ShapeModel { vocab, weights, train_secs: t0.elapsed().as_secs_f64() })
}

fn held_out(vocab: &VisualVocabulary, count: u64, mask_for: impl Fn(u64) -> Mask) -> Result<Vec<HeldOut>, String> {
    (0..count)
        .map(|i| {
            let img = render_synth(&SynthSpec::random(ShapeKind::Pentagram, 64, rng::derive(0xE7A1, &[i])));
            let truth = vocab.quantize(&downsample(&img, 16).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let masked = apply_token_mask(&truth, &mask_for(i)).map_err(|e| e.to_string())?;
            Ok(HeldOut { truth, masked })
        })
        .collect()
}

fn freeform(i: u64) -> Mask {
    gen_freeform_mask(64, 64, Band::LARGE, rng::derive(0xE7A2, &[i])).expect("valid band")
}

fn structural_claim(m: &ShapeModel, cases: &[HeldOut]) -> Outcome {
    let (mut hit, mut base, mut total) = (0, 0, 0);
    for c in cases {
        let out = gibbs_complete(&c.masked, &m.weights, 1, 0).map_err(|e| e.to_string())?;
        let copy = nearest_copy(&c.masked);
        for p in c.masked.masked_positions() {
            hit += (out.token(p) == c.truth.token(p)) as usize;
            base += (copy[p] == c.truth.token(p)) as usize;
            total += 1;
        }
    }
    let (acc, copy) = (hit as f64 / total as f64, base as f64 / total as f64);
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    check(
        acc >= 0.85 && acc - copy >= 0.15 && m.train_secs <= 3600.0,
        format!(
            "top-1 accuracy {:.1}% vs copy-nearest {:.1}% over {total} masked tokens; \
             training {SHAPE_STEPS} steps took {:.0}s on {cores} core(s)",
            100.0 * acc,
            100.0 * copy,
            m.train_secs
        ),
    )
}

fn pluralism(m: &ShapeModel, cases: &[HeldOut]) -> Outcome {
    let mut good = 0;
    let mut detail = Vec::new();
    for (i, c) in cases.iter().take(10).enumerate() {
        let mask = c.masked.mask_grid();
        let images = |k: usize| -> Result<Vec<RgbImage>, String> {
            let grids = sample_n(&c.masked, &m.weights, &SamplingConfig::new(k, 500 + i as u64, 2)).map_err(|e| e.to_string())?;
            grids.iter().map(|g| m.vocab.dequantize(g).map_err(|e| e.to_string())).collect()
        };
        let d1 = diversity(&images(1)?, &mask).map_err(|e| e.to_string())?;
        let d50 = diversity(&images(50)?, &mask).map_err(|e| e.to_string())?;
        good += (d1 == 0.0 && d50 > d1) as usize;
        detail.push(format!("{d50:.3}"));
    }
    check(good == 10, format!("{good}/10 inputs with diversity(K=50) > diversity(K=1) = 0; K=50 values [{}]", detail.join(", ")))
}

fn ring(i: u64) -> Mask {
    let (cx, cy) = (32.0 + (i % 3) as f64 * 2.0 - 2.0, 32.0 + (i % 5) as f64 - 2.0);
    let (r0, r1) = (8.0 + (i % 2) as f64 * 2.0, 26.0);
    Mask::from_fn(64, 64, |x, y| {
        let r = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
        (r0..r1).contains(&r)
    })
}

fn probability_direction(m: &ShapeModel, cases: &[HeldOut]) -> Outcome {
    let mut good = 0;
    let mut pairs = Vec::new();
    for c in cases {
        let g = &c.masked;
        let s = g.side();
        let masked = |x: i64, y: i64| x >= 0 && y >= 0 && x < s as i64 && y < s as i64 && g.is_masked(y as usize * s + x as usize);
        let (mut boundary, mut interior) = (Vec::new(), Vec::new());
        for p in g.masked_positions() {
            let (x, y) = ((p % s) as i64, (p / s) as i64);
            if [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().all(|(dx, dy)| masked(x + dx, y + dy)) {
                interior.push(p);
            } else {
                boundary.push(p);
            }
        }
        let map = probability_map(g, &m.weights).map_err(|e| e.to_string())?;
        let (b, i) = (map.mean_over(&boundary), map.mean_over(&interior));
        let (Some(b), Some(i)) = (b, i) else {
            return Err("ring mask without both boundary and interior cells".into());
        };
        good += (b >= i) as usize;
        pairs.push(format!("{b:.2}/{i:.2}"));
    }
    check(good >= 8, format!("boundary >= interior on {good}/10 ring masks (boundary/interior: {})", pairs.join(" ")))
}

fn upsampler_signal() -> Outcome {
    let corpus = synth_corpus(8, 64, 5);
    let mut pixels = Vec::new();
    for img in &corpus {
        pixels.extend(downsample(img, 16).map_err(|e| e.to_string())?.pixels());
    }
    let fit = fit_kmeans(&pixels, KMeansOptions::new(64, 10, 1)).map_err(|e| e.to_string())?;
    let vocab = VisualVocabulary::new(fit.centers).map_err(|e| e.to_string())?;
    let ucfg = UpsamplerConfig::default();
    let mut summary = Vec::new();
    let mut improved = 0;
    let mut last_gen = None;
    for seed in 0..3u64 {
        let mut gen = UpsamplerWeights::init(ucfg, seed);
        let mut disc = DiscriminatorWeights::init(ucfg, seed + 100);
        let cfg = UpsamplerTrainConfig { steps: 200, seed, ..Default::default() };
        let h = train_upsampler(&corpus, Some(&vocab), &mut gen, &mut disc, &cfg, PriorMix::Degraded).map_err(|e| e.to_string())?;
        let early = h.l1[..10].iter().sum::<f64>() / 10.0;
        let late = h.l1[189..200].iter().sum::<f64>() / 11.0;
        improved += (late < early) as usize;
        summary.push(format!("seed {seed}: {early:.4} -> {late:.4}"));
        last_gen = Some((gen, disc));
    }

    let (gen, disc) = last_gen.expect("three seeds ran");
    let tcfg = small_cfg(vocab.len(), 16);
    let model = Model::new(vocab, TransformerWeights::init(tcfg, 3).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?
        .with_upsampler(gen, Some(disc));
    let img = render_synth(&SynthSpec::random(ShapeKind::Pentagram, 64, 8));
    let mask = freeform(3);
    let done = model.complete(&img, &mask, &SamplingConfig::new(5, 2, 2)).map_err(|e| e.to_string())?;
    let mut exact = true;
    for out in &done.images {
        for y in 0..64 {
            for x in 0..64 {
                if !mask.get(x, y) {
                    exact &= out.pixel(x, y) == img.pixel(x, y);
                }
            }
        }
    }
    let masked_img = MaskedImage::new(&img, &mask).map_err(|e| e.to_string())?;
    let again = masked_img.composite(&img, &done.images[0]).map_err(|e| e.to_string())?;
    exact &= again == done.images[0];
    check(
        improved == 3 && exact,
        format!("L1 early -> late ({}); composites exact on unmasked pixels={exact}", summary.join(", ")),
    )
}

fn metric_goldens() -> Outcome {
    let a = common::test_image(48);
    let b = RgbImage::from_fn(48, 48, |x, y| a.pixel(x, y).map(|v| if v < 255.0 { v + 1.0 } else { v - 1.0 }));
    let p = psnr(&a, &b).map_err(|e| e.to_string())?;
    let s = ssim(&a, &a).map_err(|e| e.to_string())?;
    let m0 = mae(&a, &a).map_err(|e| e.to_string())?;
    let m1 = mae(&a, &b).map_err(|e| e.to_string())?;
    let m1r = mae(&b, &a).map_err(|e| e.to_string())?;
    let c = RgbImage::from_fn(48, 48, |x, y| a.pixel(y, x));
    let triangle = mae(&a, &c).map_err(|e| e.to_string())?
        <= mae(&a, &b).map_err(|e| e.to_string())? + mae(&b, &c).map_err(|e| e.to_string())?;

    let model = common::tiny_model();
    let bytes = model.to_checkpoint().to_bytes().map_err(|e| e.to_string())?;
    let loaded = Model::from_checkpoint(&Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let again = loaded.to_checkpoint().to_bytes().map_err(|e| e.to_string())?;
    let round = bytes == again;

    check(
        (p - 48.1308).abs() <= 1e-3 && s == 1.0 && m0 == 0.0 && (m1 - 1.0 / 255.0).abs() < 1e-15 && m1r == m1 && triangle && round,
        format!("PSNR {p:.4} dB, SSIM(a,a) {s}, MAE(a,a)={m0} MAE(a,a±1)={m1:.6} symmetric={} triangle={triangle}, checkpoint round trip bit-exact={round} ({} bytes)", m1r == m1, bytes.len()),
    )
}

async fn post(app: axum::Router, body: serde_json::Value) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(Method::POST)
        .uri("/v1/complete")
        .header("content-type", "application/json")
        .body(Body::from(serde_json::to_vec(&body).unwrap()))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn service_contract() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let app = router(Some(common::tiny_model()), 2);
        let (img, mask) = (common::test_image(32), common::test_mask(32));
        let body = |mask_side: usize| {
            json!({
                "image": encode_b64(&encode_png(&img).unwrap()),
                "mask": encode_b64(&encode_mask_png(&common::test_mask(mask_side)).unwrap()),
                "num_samples": 4,
                "top_k": 3,
                "seed": 5,
            })
        };
        let (status, bytes) = post(app.clone(), body(32)).await;
        if status != StatusCode::OK {
            return Err(format!("complete returned {status}"));
        }
        let resp: CompletionResponse = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
        let mut faithful = true;
        for s in &resp.images {
            let out = decode_png(&decode_b64("image", s).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            for y in 0..32 {
                for x in 0..32 {
                    if !mask.get(x, y) {
                        faithful &= out.pixel(x, y) == img.pixel(x, y);
                    }
                }
            }
        }
        let (mismatch, _) = post(app, body(16)).await;
        check(
            resp.images.len() == 4 && faithful && mismatch == StatusCode::UNPROCESSABLE_ENTITY,
            format!("{} of 4 samples, unmasked fidelity={faithful}, mismatched mask -> {}", resp.images.len(), mismatch.as_u16()),
        )
    })
}

fn main() {
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failures += 1;
                println!("FAIL {name}: {d}");
            }
        }
    };

    report("gradient suite", gradient_suite());
    report("loss identities", loss_identities());
    report("schedule endpoints", schedule_endpoints());
    report("vocabulary invariants", vocabulary_invariants());
    report("bidirectionality", bidirectionality());
    report("sampling contracts", sampling_contracts());

    match train_shape_model() {
        Ok(m) => {
            let cases = held_out(&m.vocab, 20, freeform);
            let rings = held_out(&m.vocab, 10, ring);
            match (cases, rings) {
                (Ok(cases), Ok(rings)) => {
                    report("shape completion", structural_claim(&m, &cases));
                    report("pluralism", pluralism(&m, &cases));
                    report("probability map direction", probability_direction(&m, &rings));
                }
                (Err(e), _) | (_, Err(e)) => {
                    for name in ["shape completion", "pluralism", "probability map direction"] {
                        report(name, Err(e.clone()));
                    }
                }
            }
        }
        Err(e) => {
            for name in ["shape completion", "pluralism", "probability map direction"] {
                report(name, Err(format!("training failed: {e}")));
            }
        }
    }

    report("upsampler training signal", upsampler_signal());
    report("metric goldens", metric_goldens());
    report("service contract", service_contract());

    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
