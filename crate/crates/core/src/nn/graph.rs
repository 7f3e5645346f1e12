//! Tape-based reverse-mode autodiff over 2-D tensors.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological sort and `backward` is a single reverse sweep.

use super::gemm::{gemm, View, ViewMut};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// Stabilizer used in cosine and layer-norm denominators.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
        stride: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Abs(Var),
    Softmax(Var),
    MeanRows(Var),
    MeanCols(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    CosineRows(Var, Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    MaskRows {
        x: Var,
        emb: Var,
        mask: Vec<bool>,
    },
    Dropout(Var, Vec<f64>),
    BceWithLogits(Var, Vec<f64>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// The tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("internal shape bookkeeping")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

fn add_into(dst: &mut Option<Vec<f64>>, len: usize, f: impl Fn(usize) -> f64) {
    let g = dst.get_or_insert_with(|| vec![0.0; len]);
    for (i, gi) in g.iter_mut().enumerate() {
        *gi += f(i);
    }
}

fn grad_buf(dst: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    dst.get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, `None` when nothing flowed into `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            View::dense(self.value(a).data(), m, k),
            View::dense(self.value(b).data(), k, n),
            ViewMut::dense(&mut out, m, n),
            0.0,
        );
        Ok(self.push(mat(m, n, out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        self.push(mat(n, m, out), Op::Transpose(a), &[a])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(op, self.value(a), self.value(b)));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, op, &[a, b])
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(row).shape() != [1, n] {
            return Err(shape_err("add_row", self.value(a), self.value(row)));
        }
        let r = self.value(row).data();
        let x = self.value(a).data();
        let out = (0..m * n).map(|i| x[i] + r[i % n]).collect();
        Ok(self.push(mat(m, n, out), Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, gelu, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, log_sigmoid, Op::LogSigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    /// Time-major 1-D convolution: `x` is `[L, C_in]`, `w` is
    /// `[kernel * C_in, C_out]`, `b` is `[1, C_out]`; no padding.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (l, cin) = self.dims(x);
        let (kc, cout) = self.dims(w);
        if kc != kernel * cin || self.value(b).shape() != [1, cout] || stride == 0 {
            return Err(shape_err("conv1d", self.value(x), self.value(w)));
        }
        if l < kernel {
            return Err(Error::TooShort { len: l, min: kernel });
        }
        let lout = (l - kernel) / stride + 1;
        let bias = self.value(b).data();
        let mut out: Vec<f64> = (0..lout * cout).map(|i| bias[i % cout]).collect();
        // Patch t is the contiguous run of rows t*stride .. t*stride+kernel.
        let patches = View {
            data: self.value(x).data(),
            offset: 0,
            rows: lout,
            cols: kernel * cin,
            rs: stride * cin,
            cs: 1,
        };
        gemm(
            patches,
            View::dense(self.value(w).data(), kc, cout),
            ViewMut::dense(&mut out, lout, cout),
            1.0,
        );
        Ok(self.push(
            mat(lout, cout, out),
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                stride,
            },
            &[x, w, b],
        ))
    }

    /// Row-wise layer normalization with affine `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(gamma).shape() != [1, n] || self.value(beta).shape() != [1, n] {
            return Err(shape_err("layer_norm", self.value(x), self.value(gamma)));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + bt[j];
            }
        }
        Ok(self.push(
            mat(m, n, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut out = self.value(a).data().to_vec();
        for r in 0..m {
            softmax_in_place(&mut out[r * n..(r + 1) * n]);
        }
        self.push(mat(m, n, out), Op::Softmax(a), &[a])
    }

    /// Mean over rows: `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; n];
        for r in 0..m {
            for j in 0..n {
                out[j] += x[r * n + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= m.max(1) as f64);
        self.push(mat(1, n, out), Op::MeanRows(a), &[a])
    }

    /// Mean over columns: `[m, n] -> [m, 1]`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let x = self.value(a).data();
        let out = (0..m)
            .map(|r| x[r * n..(r + 1) * n].iter().sum::<f64>() / n.max(1) as f64)
            .collect();
        self.push(mat(m, 1, out), Op::MeanCols(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: vec![],
                rhs: vec![],
            });
        };
        let m = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != m {
                return Err(shape_err("concat_cols", self.value(first), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        Ok(self.push(mat(m, total, out), Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start > end || end > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, end],
            });
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&x.row_slice(r)[start..end]);
        }
        Ok(self.push(mat(m, end - start, out), Op::SliceCols(a, start), &[a]))
    }

    /// Row-wise cosine similarity `[m, n] x [m, n] -> [m, 1]`; each norm is
    /// clamped below at [`NORM_EPS`].
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_rows", a, b)?;
        let (m, n) = self.dims(a);
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        let out = (0..m)
            .map(|r| {
                let (ra, rb) = (&xa[r * n..(r + 1) * n], &xb[r * n..(r + 1) * n]);
                cosine(ra, rb)
            })
            .collect();
        Ok(self.push(mat(m, 1, out), Op::CosineRows(a, b), &[a, b]))
    }

    /// Fused multi-head scaled dot-product attention on `[T, D]` inputs.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (t, d) = self.dims(q);
        if heads == 0 || d % heads != 0 {
            return Err(shape_err("attention", self.value(q), self.value(k)));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * t * t];
        let mut out = vec![0.0; t * d];
        let (xq, xk, xv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        for h in 0..heads {
            let p = &mut probs[h * t * t..(h + 1) * t * t];
            gemm(
                head_view(xq, t, d, h, dh),
                head_view(xk, t, d, h, dh).t(),
                ViewMut::dense(p, t, t),
                0.0,
            );
            for r in 0..t {
                let row = &mut p[r * t..(r + 1) * t];
                row.iter_mut().for_each(|s| *s *= scale);
                softmax_in_place(row);
            }
            gemm(
                View::dense(p, t, t),
                head_view(xv, t, d, h, dh),
                head_view_mut(&mut out, t, d, h, dh),
                0.0,
            );
        }
        let needs = [q, k, v].iter().any(|x| self.requires_grad(*x));
        if !needs {
            probs = Vec::new();
        }
        Ok(self.push(
            mat(t, d, out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Replaces the rows where `mask` is set with the `[1, n]` row `emb`.
    pub fn mask_rows(&mut self, x: Var, emb: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if mask.len() != m || self.value(emb).shape() != [1, n] {
            return Err(shape_err("mask_rows", self.value(x), self.value(emb)));
        }
        let e = self.value(emb).data();
        let xs = self.value(x).data();
        let mut out = xs.to_vec();
        for (r, &on) in mask.iter().enumerate() {
            if on {
                out[r * n..(r + 1) * n].copy_from_slice(e);
            }
        }
        Ok(self.push(
            mat(m, n, out),
            Op::MaskRows {
                x,
                emb,
                mask: mask.to_vec(),
            },
            &[x, emb],
        ))
    }

    /// Inverted dropout with an externally drawn keep mask.
    pub fn dropout(&mut self, a: Var, p: f64, keep: impl FnMut() -> bool) -> Var {
        if p <= 0.0 {
            return a;
        }
        let mut keep = keep;
        let n = self.value(a).len();
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n).map(|_| if keep() { scale } else { 0.0 }).collect();
        let ta = self.value(a);
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Dropout(a, mask), &[a])
    }

    /// Mean binary cross-entropy over all logits against `targets` in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let x = self.value(logits).data();
        if x.len() != targets.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: self.value(logits).shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let n = x.len().max(1) as f64;
        let loss = x
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits(logits, targets.to_vec()),
            &[logits],
        ))
    }

    /// Mean softmax cross-entropy over the rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m || targets.iter().flatten().any(|&c| c >= n) {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: vec![m, n],
                rhs: vec![targets.len()],
            });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            let row = &mut probs[r * n..(r + 1) * n];
            softmax_in_place(row);
            if let Some(c) = t {
                loss -= row[*c].max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { loss / count as f64 };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Back-propagates from a single-element `root` with seed gradient 1.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.value(root).shape().to_vec(),
                rhs: vec![1],
            });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = node.grad.as_deref() else {
                continue;
            };
            backprop(before, &node.op, &node.value, dy);
        }
        Ok(())
    }
}

fn head_view(data: &[f64], t: usize, d: usize, h: usize, dh: usize) -> View<'_> {
    View {
        data,
        offset: h * dh,
        rows: t,
        cols: dh,
        rs: d,
        cs: 1,
    }
}

fn head_view_mut(data: &mut [f64], t: usize, d: usize, h: usize, dh: usize) -> ViewMut<'_> {
    ViewMut {
        data,
        offset: h * dh,
        rows: t,
        cols: dh,
        rs: d,
        cs: 1,
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

/// Cosine similarity with norms clamped at [`NORM_EPS`].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
    dot / (na * nb)
}

fn backprop(nodes: &mut [Node], op: &Op, value: &Tensor, dy: &[f64]) {
    // Parents always precede the node, so they live in `nodes`.
    macro_rules! want {
        ($v:expr) => {
            nodes[$v.0].requires_grad
        };
    }
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            let n = nodes[b.0].value.cols();
            if want!(a) {
                let bv = nodes[b.0].value.data().to_vec();
                let g = grad_buf(&mut nodes[a.0].grad, m * k);
                gemm(
                    View::dense(dy, m, n),
                    View::dense(&bv, k, n).t(),
                    ViewMut::dense(g, m, k),
                    1.0,
                );
            }
            if want!(b) {
                let av = nodes[a.0].value.data().to_vec();
                let g = grad_buf(&mut nodes[b.0].grad, k * n);
                gemm(
                    View::dense(&av, m, k).t(),
                    View::dense(dy, m, n),
                    ViewMut::dense(g, k, n),
                    1.0,
                );
            }
        }
        Op::Transpose(a) => {
            let (m, n) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            add_into(&mut nodes[a.0].grad, m * n, |i| dy[(i % n) * m + i / n]);
        }
        Op::Add(a, b) => {
            for p in [a, b] {
                if want!(p) {
                    add_into(&mut nodes[p.0].grad, dy.len(), |i| dy[i]);
                }
            }
        }
        Op::Sub(a, b) => {
            if want!(a) {
                add_into(&mut nodes[a.0].grad, dy.len(), |i| dy[i]);
            }
            if want!(b) {
                add_into(&mut nodes[b.0].grad, dy.len(), |i| -dy[i]);
            }
        }
        Op::Mul(a, b) => {
            if want!(a) {
                let bv = nodes[b.0].value.data().to_vec();
                add_into(&mut nodes[a.0].grad, dy.len(), |i| dy[i] * bv[i]);
            }
            if want!(b) {
                let av = nodes[a.0].value.data().to_vec();
                add_into(&mut nodes[b.0].grad, dy.len(), |i| dy[i] * av[i]);
            }
        }
        Op::AddRow(a, row) => {
            if want!(a) {
                add_into(&mut nodes[a.0].grad, dy.len(), |i| dy[i]);
            }
            if want!(row) {
                let n = nodes[row.0].value.len();
                let g = grad_buf(&mut nodes[row.0].grad, n);
                for (i, d) in dy.iter().enumerate() {
                    g[i % n] += d;
                }
            }
        }
        Op::Scale(a, c) => add_into(&mut nodes[a.0].grad, dy.len(), |i| dy[i] * c),
        Op::Conv1d {
            x,
            w,
            b,
            kernel,
            stride,
        } => {
            let (l, cin) = (nodes[x.0].value.rows(), nodes[x.0].value.cols());
            let cout = value.cols();
            let lout = value.rows();
            let kc = kernel * cin;
            if want!(b) {
                let g = grad_buf(&mut nodes[b.0].grad, cout);
                for (i, d) in dy.iter().enumerate() {
                    g[i % cout] += d;
                }
            }
            if want!(w) {
                let xv = nodes[x.0].value.data().to_vec();
                let patches = View {
                    data: &xv,
                    offset: 0,
                    rows: lout,
                    cols: kc,
                    rs: stride * cin,
                    cs: 1,
                };
                let g = grad_buf(&mut nodes[w.0].grad, kc * cout);
                gemm(
                    patches.t(),
                    View::dense(dy, lout, cout),
                    ViewMut::dense(g, kc, cout),
                    1.0,
                );
            }
            if want!(x) {
                let wv = nodes[w.0].value.data().to_vec();
                let mut dp = vec![0.0; lout * kc];
                gemm(
                    View::dense(dy, lout, cout),
                    View::dense(&wv, kc, cout).t(),
                    ViewMut::dense(&mut dp, lout, kc),
                    0.0,
                );
                let g = grad_buf(&mut nodes[x.0].grad, l * cin);
                for t in 0..lout {
                    let base = t * stride * cin;
                    for (j, v) in dp[t * kc..(t + 1) * kc].iter().enumerate() {
                        g[base + j] += v;
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let n = value.cols();
            let m = value.rows();
            if want!(beta) {
                let g = grad_buf(&mut nodes[beta.0].grad, n);
                for (i, d) in dy.iter().enumerate() {
                    g[i % n] += d;
                }
            }
            if want!(gamma) {
                let g = grad_buf(&mut nodes[gamma.0].grad, n);
                for (i, d) in dy.iter().enumerate() {
                    g[i % n] += d * xhat[i];
                }
            }
            if want!(x) {
                let gv = nodes[gamma.0].value.data().to_vec();
                let g = grad_buf(&mut nodes[x.0].grad, m * n);
                let mut dxhat = vec![0.0; n];
                for r in 0..m {
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for j in 0..n {
                        let v = dy[r * n + j] * gv[j];
                        dxhat[j] = v;
                        s1 += v;
                        s2 += v * xhat[r * n + j];
                    }
                    let (s1, s2) = (s1 / n as f64, s2 / n as f64);
                    for j in 0..n {
                        g[r * n + j] += rstd[r] * (dxhat[j] - s1 - xhat[r * n + j] * s2);
                    }
                }
            }
        }
        Op::Gelu(a) => {
            let xv = nodes[a.0].value.data().to_vec();
            add_into(&mut nodes[a.0].grad, dy.len(), |i| dy[i] * gelu_grad(xv[i]));
        }
        Op::Relu(a) => {
            let xv = nodes[a.0].value.data().to_vec();
            add_into(&mut nodes[a.0].grad, dy.len(), |i| {
                if xv[i] > 0.0 {
                    dy[i]
                } else {
                    0.0
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = value.data();
            add_into(&mut nodes[a.0].grad, dy.len(), |i| dy[i] * y[i] * (1.0 - y[i]));
        }
        Op::LogSigmoid(a) => {
            let xv = nodes[a.0].value.data().to_vec();
            add_into(&mut nodes[a.0].grad, dy.len(), |i| dy[i] * sigmoid(-xv[i]));
        }
        Op::Abs(a) => {
            let xv = nodes[a.0].value.data().to_vec();
            add_into(&mut nodes[a.0].grad, dy.len(), |i| {
                if xv[i] > 0.0 {
                    dy[i]
                } else if xv[i] < 0.0 {
                    -dy[i]
                } else {
                    0.0
                }
            });
        }
        Op::Softmax(a) => {
            let n = value.cols();
            let y = value.data();
            let g = grad_buf(&mut nodes[a.0].grad, y.len());
            for r in 0..value.rows() {
                let s: f64 = (0..n).map(|j| dy[r * n + j] * y[r * n + j]).sum();
                for j in 0..n {
                    g[r * n + j] += y[r * n + j] * (dy[r * n + j] - s);
                }
            }
        }
        Op::MeanRows(a) => {
            let (m, n) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            let inv = 1.0 / m.max(1) as f64;
            add_into(&mut nodes[a.0].grad, m * n, |i| dy[i % n] * inv);
        }
        Op::MeanCols(a) => {
            let (m, n) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            let inv = 1.0 / n.max(1) as f64;
            add_into(&mut nodes[a.0].grad, m * n, |i| dy[i / n] * inv);
        }
        Op::Sum(a) => {
            let n = nodes[a.0].value.len();
            add_into(&mut nodes[a.0].grad, n, |_| dy[0]);
        }
        Op::ConcatCols(parts) => {
            let total = value.cols();
            let mut off = 0;
            for p in parts {
                let (m, n) = (nodes[p.0].value.rows(), nodes[p.0].value.cols());
                if want!(p) {
                    add_into(&mut nodes[p.0].grad, m * n, |i| dy[(i / n) * total + off + i % n]);
                }
                off += n;
            }
        }
        Op::SliceCols(a, start) => {
            let (m, n) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            let w = value.cols();
            let g = grad_buf(&mut nodes[a.0].grad, m * n);
            for r in 0..m {
                for j in 0..w {
                    g[r * n + start + j] += dy[r * w + j];
                }
            }
        }
        Op::CosineRows(a, b) => {
            let (m, n) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            let mut ga = vec![0.0; m * n];
            let mut gb = vec![0.0; m * n];
            for r in 0..m {
                let (ra, rb) = (&av[r * n..(r + 1) * n], &bv[r * n..(r + 1) * n]);
                let na_raw = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb_raw = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
                let (na, nb) = (na_raw.max(NORM_EPS), nb_raw.max(NORM_EPS));
                let c = value.data()[r];
                let d = dy[r];
                for j in 0..n {
                    // The clamped branch treats the norm as a constant.
                    let ta = if na_raw > NORM_EPS { c * ra[j] / (na * na) } else { 0.0 };
                    let tb = if nb_raw > NORM_EPS { c * rb[j] / (nb * nb) } else { 0.0 };
                    ga[r * n + j] = d * (rb[j] / (na * nb) - ta);
                    gb[r * n + j] = d * (ra[j] / (na * nb) - tb);
                }
            }
            if want!(a) {
                add_into(&mut nodes[a.0].grad, m * n, |i| ga[i]);
            }
            if want!(b) {
                add_into(&mut nodes[b.0].grad, m * n, |i| gb[i]);
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            probs,
        } => {
            let (t, d) = (value.rows(), value.cols());
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let qv = nodes[q.0].value.data().to_vec();
            let kv = nodes[k.0].value.data().to_vec();
            let vv = nodes[v.0].value.data().to_vec();
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            let mut dp = vec![0.0; t * t];
            for h in 0..*heads {
                let p = &probs[h * t * t..(h + 1) * t * t];
                // dV_h = P^T dO_h
                gemm(
                    View::dense(p, t, t).t(),
                    head_view(dy, t, d, h, dh),
                    head_view_mut(&mut dv, t, d, h, dh),
                    0.0,
                );
                // dP = dO_h V_h^T
                gemm(
                    head_view(dy, t, d, h, dh),
                    head_view(&vv, t, d, h, dh).t(),
                    ViewMut::dense(&mut dp, t, t),
                    0.0,
                );
                for r in 0..t {
                    let pr = &p[r * t..(r + 1) * t];
                    let row = &mut dp[r * t..(r + 1) * t];
                    let s: f64 = row.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for (x, pv) in row.iter_mut().zip(pr) {
                        *x = pv * (*x - s) * scale;
                    }
                }
                gemm(
                    View::dense(&dp, t, t),
                    head_view(&kv, t, d, h, dh),
                    head_view_mut(&mut dq, t, d, h, dh),
                    0.0,
                );
                gemm(
                    View::dense(&dp, t, t).t(),
                    head_view(&qv, t, d, h, dh),
                    head_view_mut(&mut dk, t, d, h, dh),
                    0.0,
                );
            }
            for (p, g) in [(q, dq), (k, dk), (v, dv)] {
                if want!(p) {
                    add_into(&mut nodes[p.0].grad, t * d, |i| g[i]);
                }
            }
        }
        Op::MaskRows { x, emb, mask } => {
            let n = value.cols();
            if want!(x) {
                add_into(&mut nodes[x.0].grad, dy.len(), |i| {
                    if mask[i / n] {
                        0.0
                    } else {
                        dy[i]
                    }
                });
            }
            if want!(emb) {
                let g = grad_buf(&mut nodes[emb.0].grad, n);
                for (r, &on) in mask.iter().enumerate() {
                    if on {
                        for j in 0..n {
                            g[j] += dy[r * n + j];
                        }
                    }
                }
            }
        }
        Op::Dropout(a, mask) => {
            add_into(&mut nodes[a.0].grad, dy.len(), |i| dy[i] * mask[i]);
        }
        Op::BceWithLogits(a, targets) => {
            let xv = nodes[a.0].value.data().to_vec();
            let inv = dy[0] / xv.len().max(1) as f64;
            add_into(&mut nodes[a.0].grad, xv.len(), |i| {
                (sigmoid(xv[i]) - targets[i]) * inv
            });
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
            count,
        } => {
            if *count == 0 {
                return;
            }
            let n = nodes[logits.0].value.cols();
            let inv = dy[0] / *count as f64;
            add_into(&mut nodes[logits.0].grad, probs.len(), |i| {
                match targets[i / n] {
                    None => 0.0,
                    Some(c) => (probs[i] - if i % n == c { 1.0 } else { 0.0 }) * inv,
                }
            });
        }
    }
}
