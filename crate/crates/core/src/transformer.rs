//! Bidirectional token transformer.
//!
//! Each layer normalises the sublayer output before the residual add:
//! `F = LN(MSA(E)) + E`, then `E' = LN(MLP(F)) + F`. Attention is unmasked, so
//! every position sees the whole grid.

use ict_ndgrad::{Array, BoundParams, ParamStore, Tape, Var};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::vocab::{TokenGrid, VOCAB_SIZE};
use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    /// Grid side; the sequence length is `side²`.
    pub side: usize,
    pub vocab_size: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            width: 128,
            heads: 4,
            side: 16,
            vocab_size: VOCAB_SIZE,
        }
    }
}

impl TransformerConfig {
    pub fn seq_len(&self) -> usize {
        self.side * self.side
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn mask_id(&self) -> u16 {
        self.vocab_size as u16
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.heads == 0 || self.side == 0 {
            return Err(Error::Invalid(format!("degenerate transformer config {self:?}")));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Invalid(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.vocab_size == 0 || self.vocab_size >= u16::MAX as usize {
            return Err(Error::Invalid(format!("vocabulary size {}", self.vocab_size)));
        }
        Ok(())
    }

    /// Every parameter name with its shape, in registration order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, dh, v) = (self.width, self.head_dim(), self.vocab_size);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v + 1, d]),
            ("pos_emb".to_string(), vec![self.seq_len(), d]),
        ];
        for l in 0..self.layers {
            let p = format!("layers.{l}");
            for j in 0..self.heads {
                for m in ["q", "k", "v"] {
                    out.push((format!("{p}.attn.{m}.{j}"), vec![d, dh]));
                }
            }
            out.push((format!("{p}.attn.out.w"), vec![d, d]));
            out.push((format!("{p}.attn.out.b"), vec![d]));
            out.push((format!("{p}.ln1.gamma"), vec![d]));
            out.push((format!("{p}.ln1.beta"), vec![d]));
            out.push((format!("{p}.mlp.fc1.w"), vec![d, 4 * d]));
            out.push((format!("{p}.mlp.fc1.b"), vec![4 * d]));
            out.push((format!("{p}.mlp.fc2.w"), vec![4 * d, d]));
            out.push((format!("{p}.mlp.fc2.b"), vec![d]));
            out.push((format!("{p}.ln2.gamma"), vec![d]));
            out.push((format!("{p}.ln2.beta"), vec![d]));
        }
        out.push(("head.w".to_string(), vec![d, v]));
        out.push(("head.b".to_string(), vec![v]));
        out
    }
}

/// Transformer parameters θ together with their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeights {
    config: TransformerConfig,
    params: ParamStore,
}

impl TransformerWeights {
    /// Normal(0, 0.02) matrices and embeddings, zero biases, unit LN gains.
    pub fn init(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut prng = rng::from_seed(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamStore::new();
        for (name, shape) in config.parameter_shapes() {
            let value = if name.ends_with(".gamma") {
                Array::ones(&shape)
            } else if name.ends_with(".b") || name.ends_with(".beta") {
                Array::zeros(&shape)
            } else {
                Array::from_fn(&shape, |_| normal.sample(&mut prng))
            };
            params.insert(name, value);
        }
        Ok(Self { config, params })
    }

    /// Wrap an existing parameter set, checking names and shapes exactly.
    pub fn from_params(config: TransformerConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != params.len() {
            return Err(Error::Invalid(format!(
                "expected {} transformer tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let a = params
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("missing transformer tensor `{name}`")))?;
            if a.shape() != shape.as_slice() {
                return Err(Error::Invalid(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    a.shape()
                )));
            }
        }
        if !params.is_finite() {
            return Err(Error::Invalid("non-finite transformer weights".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    fn check_grid(&self, grid: &TokenGrid) -> Result<()> {
        if grid.len() != self.config.seq_len() || grid.vocab_size() != self.config.vocab_size {
            return Err(Error::Dimensions(format!(
                "grid of {} tokens over {} ids; model expects {} over {}",
                grid.len(),
                grid.vocab_size(),
                self.config.seq_len(),
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Logits for every position, `𝕃×V`.
    pub fn forward(&self, grid: &TokenGrid) -> Result<Array> {
        self.run(grid, None)
    }

    /// Logits for the listed positions only, `rows×V`.
    pub fn forward_rows(&self, grid: &TokenGrid, rows: &[usize]) -> Result<Array> {
        self.run(grid, Some(rows))
    }

    fn run(&self, grid: &TokenGrid, rows: Option<&[usize]>) -> Result<Array> {
        self.check_grid(grid)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let logits = forward_on_tape(&mut tape, &p, &self.config, grid, rows)?;
        Ok(tape.value(logits).clone())
    }

    /// MLM loss of predicting `targets` on the masked set of `input`, with
    /// gradients for every parameter.
    pub fn loss_and_grad(&self, input: &TokenGrid, targets: &TokenGrid) -> Result<(f64, ParamStore)> {
        self.check_grid(input)?;
        let pi = input.masked_positions();
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let logits = forward_on_tape(&mut tape, &p, &self.config, input, Some(&pi))?;
        let loss = masked_cross_entropy(&mut tape, logits, targets, &pi)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((value, p.gradients(&grads, &tape)))
    }
}

/// `E_i = tok_emb[token_i] + pos_emb[i]`.
pub fn embed(tape: &mut Tape, p: &BoundParams, grid: &TokenGrid) -> Result<Var> {
    let ids: Vec<usize> = grid.tokens().iter().map(|&t| t as usize).collect();
    let tok = tape.gather(p.var("tok_emb")?, &ids)?;
    Ok(tape.add(tok, p.var("pos_emb")?)?)
}

/// Multi-head self-attention over all positions; also returns each head's
/// attention matrix.
pub fn msa(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &TransformerConfig,
    layer: usize,
    e: Var,
) -> Result<(Var, Vec<Var>)> {
    let pre = format!("layers.{layer}.attn");
    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut attn = Vec::with_capacity(cfg.heads);
    for j in 0..cfg.heads {
        let q = tape.matmul(e, p.var(&format!("{pre}.q.{j}"))?)?;
        let k = tape.matmul(e, p.var(&format!("{pre}.k.{j}"))?)?;
        let v = tape.matmul(e, p.var(&format!("{pre}.v.{j}"))?)?;
        let scores = tape.matmul_nt(q, k)?;
        let scores = tape.scale(scores, scale)?;
        let a = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(a, v)?);
        attn.push(a);
    }
    let cat = tape.concat_cols(&heads)?;
    let out = tape.matmul(cat, p.var(&format!("{pre}.out.w"))?)?;
    Ok((tape.add_row(out, p.var(&format!("{pre}.out.b"))?)?, attn))
}

pub fn layer_forward(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &TransformerConfig,
    layer: usize,
    e: Var,
) -> Result<Var> {
    let pre = format!("layers.{layer}");
    let var = |name: &str| p.var(&format!("{pre}.{name}"));
    let (m, _) = msa(tape, p, cfg, layer, e)?;
    let m = tape.layer_norm(m, var("ln1.gamma")?, var("ln1.beta")?, LN_EPS)?;
    let f = tape.add(m, e)?;
    let h = tape.matmul(f, var("mlp.fc1.w")?)?;
    let h = tape.add_row(h, var("mlp.fc1.b")?)?;
    let h = tape.gelu(h)?;
    let o = tape.matmul(h, var("mlp.fc2.w")?)?;
    let o = tape.add_row(o, var("mlp.fc2.b")?)?;
    let o = tape.layer_norm(o, var("ln2.gamma")?, var("ln2.beta")?, LN_EPS)?;
    Ok(tape.add(o, f)?)
}

/// Embed, run every layer and project `rows` (all positions when `None`) to logits.
pub fn forward_on_tape(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &TransformerConfig,
    grid: &TokenGrid,
    rows: Option<&[usize]>,
) -> Result<Var> {
    let mut e = embed(tape, p, grid)?;
    for l in 0..cfg.layers {
        e = layer_forward(tape, p, cfg, l, e)?;
    }
    if let Some(rows) = rows {
        e = tape.select_rows(e, rows)?;
    }
    let logits = tape.matmul(e, p.var("head.w")?)?;
    Ok(tape.add_row(logits, p.var("head.b")?)?)
}

/// Mean cross-entropy over Π. `logits` has one row per entry of `pi`.
pub fn masked_cross_entropy(tape: &mut Tape, logits: Var, targets: &TokenGrid, pi: &[usize]) -> Result<Var> {
    if pi.is_empty() {
        return Err(Error::NothingMasked);
    }
    let t = pi
        .iter()
        .map(|&i| {
            if targets.is_masked(i) {
                Err(Error::StillMasked)
            } else {
                Ok(targets.token(i) as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(tape.cross_entropy(logits, &t)?)
}

/// `(1/K) Σ −log softmax(logits[π_k])[target_{π_k}]` over full `𝕃×V` logits.
pub fn mlm_loss(logits: &Array, targets: &TokenGrid, pi: &[usize]) -> Result<f64> {
    if pi.is_empty() {
        return Err(Error::NothingMasked);
    }
    let mut tape = Tape::new();
    let all = tape.leaf(logits.clone());
    let rows = tape.select_rows(all, pi)?;
    let loss = masked_cross_entropy(&mut tape, rows, targets, pi)?;
    Ok(tape.value(loss).data()[0])
}
