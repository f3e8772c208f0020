use crate::kernels::{self, ConvGeom};
use crate::{Array, GradError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddChannelBias(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatChannels(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Upsample2x(Var),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
}

/// Linear record of executed operations.
///
/// Every op appends one node; node order is a topological order, so the
/// backward pass simply walks the record from the end.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient of a scalar with respect to every node of the tape that produced it.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, materialising zeros when it is unreachable.
    pub fn wrt(&self, var: Var, tape: &Tape) -> Array {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array::zeros(tape.value(var).shape()))
    }
}

fn mismatch(op: &'static str, a: &Array, b: &Array) -> GradError {
    GradError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn accumulate(grads: &mut [Option<Array>], var: Var, g: Array) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Array {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, av.data(), false, bv.data(), false, 0.0, &mut out);
        Ok(self.push(Array::new(&[m, n], out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2("matmul_nt")?;
        let (n, k2) = bv.dims2("matmul_nt")?;
        if k != k2 {
            return Err(mismatch("matmul_nt", av, bv));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, av.data(), false, bv.data(), true, 0.0, &mut out);
        Ok(self.push(Array::new(&[m, n], out)?, Op::MatMulNt(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            Ok(())
        } else {
            Err(mismatch(op, av, bv))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Add a `[d]` bias to every row of an `[..., d]` array.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let d = bv.len();
        if bv.rank() != 1 || av.shape().last() != Some(&d) {
            return Err(mismatch("add_row", av, bv));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    /// Add a `[C]` bias to each channel plane of a `C×H×W` array.
    pub fn add_channel_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let (c, h, w) = av.dims3("add_channel_bias")?;
        if bv.shape() != [c] {
            return Err(mismatch("add_channel_bias", av, bv));
        }
        let mut out = av.clone();
        for (plane, b) in out.data_mut().chunks_exact_mut(h * w).zip(bv.data()) {
            for o in plane {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddChannelBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        Ok(self.push(out, Op::Scale(a, factor)))
    }

    /// Softmax over the last axis, stabilised by per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        av.validate("softmax_rows")?;
        let d = *av.shape().last().ok_or(GradError::Empty { op: "softmax_rows" })?;
        if d == 0 {
            return Err(GradError::Empty { op: "softmax_rows" });
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            softmax_in_place(row);
        }
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = gv.len();
        if gv.rank() != 1 || bv.shape() != gv.shape() || xv.shape().last() != Some(&d) {
            return Err(mismatch("layer_norm", xv, gv));
        }
        let rows = xv.len() / d;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * gv.data()[j] + bv.data()[j]);
            }
        }
        let out = Array::new(xv.shape(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// `x·Φ(x)` with the exact normal CDF.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(kernels::gelu);
        Ok(self.push(out, Op::Gelu(a)))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        Ok(self.push(out, Op::LeakyRelu(a, slope)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        Ok(self.push(out, Op::Tanh(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(kernels::sigmoid);
        Ok(self.push(out, Op::Sigmoid(a)))
    }

    /// `ln σ(x)`, computed as `−softplus(−x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| -kernels::softplus(-x));
        Ok(self.push(out, Op::LogSigmoid(a)))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::abs);
        Ok(self.push(out, Op::Abs(a)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Array::scalar(self.value(a).sum());
        Ok(self.push(out, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(GradError::Empty { op: "mean" });
        }
        let out = Array::scalar(av.sum() / av.len() as f64);
        Ok(self.push(out, Op::Mean(a)))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (k, v) = lv.dims2("cross_entropy")?;
        if k == 0 {
            return Err(GradError::Empty { op: "cross_entropy" });
        }
        if targets.len() != k {
            return Err(GradError::ShapeMismatch {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= v) {
            return Err(GradError::IndexOutOfRange {
                op: "cross_entropy",
                index: t,
                extent: v,
            });
        }
        lv.validate("cross_entropy")?;
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        for (row, (&t, logit_row)) in probs
            .chunks_exact_mut(v)
            .zip(targets.iter().zip(lv.data().chunks_exact(v)))
        {
            total += log_sum_exp(logit_row) - logit_row[t];
            softmax_in_place(row);
        }
        let out = Array::scalar(total / k as f64);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Rows of `table` at `indices` (embedding lookup).
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (r, d) = tv.dims2("gather")?;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= r {
                return Err(GradError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    extent: r,
                });
            }
            out.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let out = Array::new(&[indices.len(), d], out)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Rows of a 2-D array in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (r, d) = xv.dims2("select_rows")?;
        let mut out = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            if i >= r {
                return Err(GradError::IndexOutOfRange {
                    op: "select_rows",
                    index: i,
                    extent: r,
                });
            }
            out.extend_from_slice(&xv.data()[i * d..(i + 1) * d]);
        }
        let out = Array::new(&[rows.len(), d], out)?;
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Concatenate 2-D arrays with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(GradError::Empty { op: "concat_cols" })?;
        let (m, _) = self.value(*first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.value(p).dims2("concat_cols")?;
            if pm != m {
                return Err(mismatch("concat_cols", self.value(*first), self.value(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Array::new(&[m, total], out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stack two `C×H×W` arrays along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ca, ha, wa) = av.dims3("concat_channels")?;
        let (cb, hb, wb) = bv.dims3("concat_channels")?;
        if (ha, wa) != (hb, wb) {
            return Err(mismatch("concat_channels", av, bv));
        }
        let mut out = Vec::with_capacity(av.len() + bv.len());
        out.extend_from_slice(av.data());
        out.extend_from_slice(bv.data());
        let out = Array::new(&[ca + cb, ha, wa], out)?;
        Ok(self.push(out, Op::ConcatChannels(a, b)))
    }

    /// Cross-correlation of a `C×H×W` input with `F×C×kh×kw` kernels, zero padded.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let (c, h, w) = iv.dims3("conv2d")?;
        let [f, kc, kh, kw] = *kv.shape() else {
            return Err(GradError::InvalidGeometry {
                op: "conv2d",
                detail: format!("kernel must be rank 4, got {:?}", kv.shape()),
            });
        };
        if kc != c {
            return Err(mismatch("conv2d", iv, kv));
        }
        if stride == 0 || kh == 0 || kw == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(GradError::InvalidGeometry {
                op: "conv2d",
                detail: format!(
                    "input {h}×{w}, kernel {kh}×{kw}, stride {stride}, padding {padding}"
                ),
            });
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let cols = kernels::im2col(iv.data(), &geom);
        let mut out = vec![0.0; f * geom.cols()];
        kernels::gemm(
            f,
            geom.rows(),
            geom.cols(),
            kv.data(),
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        let out = Array::new(&[f, geom.out_h, geom.out_w], out)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
        ))
    }

    /// Nearest-neighbour ×2 upsampling of a `C×H×W` array.
    pub fn nearest_upsample2x(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (c, h, w) = av.dims3("nearest_upsample2x")?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let src = &av.data()[ch * h * w..(ch + 1) * h * w];
            let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
        let out = Array::new(&[c, oh, ow], out)?;
        Ok(self.push(out, Op::Upsample2x(a)))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Takes `&self`: the tape is not consumed and can be replayed again.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(GradError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2("matmul")?;
                let n = bv.shape()[1];
                let mut da = vec![0.0; m * k];
                kernels::gemm(m, n, k, g.data(), false, bv.data(), true, 0.0, &mut da);
                let mut db = vec![0.0; k * n];
                kernels::gemm(k, m, n, av.data(), true, g.data(), false, 0.0, &mut db);
                accumulate(grads, *a, Array::new(&[m, k], da)?);
                accumulate(grads, *b, Array::new(&[k, n], db)?);
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2("matmul_nt")?;
                let n = bv.shape()[0];
                let mut da = vec![0.0; m * k];
                kernels::gemm(m, n, k, g.data(), false, bv.data(), false, 0.0, &mut da);
                let mut db = vec![0.0; n * k];
                kernels::gemm(n, m, k, g.data(), true, av.data(), false, 0.0, &mut db);
                accumulate(grads, *a, Array::new(&[m, k], da)?);
                accumulate(grads, *b, Array::new(&[n, k], db)?);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.zip_map(bv, |x, y| x * y));
                accumulate(grads, *b, g.zip_map(av, |x, y| x * y));
            }
            Op::AddRow(a, bias) => {
                let d = self.value(*bias).len();
                let mut db = vec![0.0; d];
                for row in g.data().chunks_exact(d) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *bias, Array::new(&[d], db)?);
            }
            Op::AddChannelBias(a, bias) => {
                let (c, h, w) = g.dims3("add_channel_bias")?;
                let db: Vec<f64> = g.data().chunks_exact(h * w).map(|p| p.iter().sum()).collect();
                accumulate(grads, *a, g.clone());
                accumulate(grads, *bias, Array::new(&[c], db)?);
            }
            Op::Scale(a, factor) => accumulate(grads, *a, g.map(|v| v * factor)),
            Op::Softmax(a) => {
                let d = *out.shape().last().unwrap_or(&1);
                let mut dx = g.clone();
                for (dx_row, y_row) in dx.data_mut().chunks_exact_mut(d).zip(out.data().chunks_exact(d)) {
                    let dot: f64 = dx_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                    for (v, y) in dx_row.iter_mut().zip(y_row) {
                        *v = y * (*v - dot);
                    }
                }
                accumulate(grads, *a, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let d = gv.len();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = vec![0.0; g.len()];
                let mut dxhat = vec![0.0; d];
                for (r, (g_row, h_row)) in g.data().chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                    for j in 0..d {
                        dgamma[j] += g_row[j] * h_row[j];
                        dbeta[j] += g_row[j];
                        dxhat[j] = g_row[j] * gv.data()[j];
                    }
                    let mean_dh = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dh_h = dxhat.iter().zip(h_row).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    let dst = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        dst[j] = inv_std[r] * (dxhat[j] - mean_dh - h_row[j] * mean_dh_h);
                    }
                }
                accumulate(grads, *x, Array::new(g.shape(), dx)?);
                accumulate(grads, *gamma, Array::new(&[d], dgamma)?);
                accumulate(grads, *beta, Array::new(&[d], dbeta)?);
            }
            Op::Gelu(a) => {
                let dx = g.zip_map(self.value(*a), |gv, x| gv * kernels::gelu_grad(x));
                accumulate(grads, *a, dx);
            }
            Op::LeakyRelu(a, slope) => {
                let dx = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { gv * slope });
                accumulate(grads, *a, dx);
            }
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(grads, *a, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
            Op::LogSigmoid(a) => {
                let dx = g.zip_map(self.value(*a), |gv, x| gv * kernels::sigmoid(-x));
                accumulate(grads, *a, dx);
            }
            Op::Abs(a) => {
                let dx = g.zip_map(self.value(*a), |gv, x| gv * x.signum() * f64::from(x != 0.0));
                accumulate(grads, *a, dx);
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                accumulate(grads, *a, Array::full(self.value(*a).shape(), s));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let s = g.data()[0] / av.len() as f64;
                accumulate(grads, *a, Array::full(av.shape(), s));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let lv = self.value(*logits);
                let (k, v) = lv.dims2("cross_entropy")?;
                let s = g.data()[0] / k as f64;
                let mut dx = probs.clone();
                for (row, &t) in dx.chunks_exact_mut(v).zip(targets) {
                    row[t] -= 1.0;
                    for x in row.iter_mut() {
                        *x *= s;
                    }
                }
                accumulate(grads, *logits, Array::new(lv.shape(), dx)?);
            }
            Op::Gather { table, indices } => {
                let tv = self.value(*table);
                let d = tv.shape()[1];
                let mut dt = Array::zeros(tv.shape());
                for (row, &ix) in g.data().chunks_exact(d).zip(indices) {
                    for (acc, v) in dt.data_mut()[ix * d..(ix + 1) * d].iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::SelectRows { x, rows } => {
                let xv = self.value(*x);
                let d = xv.shape()[1];
                let mut dx = Array::zeros(xv.shape());
                for (row, &ix) in g.data().chunks_exact(d).zip(rows) {
                    for (acc, v) in dx.data_mut()[ix * d..(ix + 1) * d].iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2("concat_cols")?;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    let mut dp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, Array::new(&[m, w], dp)?);
                    offset += w;
                }
            }
            Op::ConcatChannels(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let split = av.len();
                accumulate(grads, *a, Array::new(av.shape(), g.data()[..split].to_vec())?);
                accumulate(grads, *b, Array::new(bv.shape(), g.data()[split..].to_vec())?);
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                let kv = self.value(*kernel);
                let f = kv.shape()[0];
                let mut dk = vec![0.0; kv.len()];
                kernels::gemm(f, geom.cols(), geom.rows(), g.data(), false, cols, true, 0.0, &mut dk);
                let mut dcols = vec![0.0; cols.len()];
                kernels::gemm(geom.rows(), f, geom.cols(), kv.data(), true, g.data(), false, 0.0, &mut dcols);
                let dx = kernels::col2im(&dcols, geom);
                accumulate(grads, *kernel, Array::new(kv.shape(), dk)?);
                accumulate(grads, *input, Array::new(self.value(*input).shape(), dx)?);
            }
            Op::Upsample2x(a) => {
                let av = self.value(*a);
                let (c, h, w) = av.dims3("nearest_upsample2x")?;
                let ow = 2 * w;
                let mut dx = vec![0.0; av.len()];
                for ch in 0..c {
                    let src = &g.data()[ch * 4 * h * w..(ch + 1) * 4 * h * w];
                    let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
                    for (idx, v) in src.iter().enumerate() {
                        let (y, x) = (idx / ow, idx % ow);
                        dst[(y / 2) * w + x / 2] += v;
                    }
                }
                accumulate(grads, *a, Array::new(av.shape(), dx)?);
            }
        }
        Ok(())
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
