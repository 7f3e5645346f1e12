//! Parameterized layers. Each layer records the [`ParamId`]s it owns and
//! builds its forward pass on a [`Graph`] through a [`Binding`].

use super::graph::{Graph, Var};
use super::params::{Binding, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Weights N(0, std²) with `std = gain / sqrt(input)`, zero bias.
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        gain: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let std = gain / (input as f64).sqrt();
        let w = ps.add_normal(format!("{name}.w"), input, output, std, rng)?;
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[1, output]))?;
        Ok(Self {
            w,
            b,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.w))?;
        g.add_row(y, p.var(self.b))
    }

    pub fn num_params(&self) -> usize {
        self.input * self.output + self.output
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let fan_in = kernel * cin;
        let std = (2.0 / fan_in as f64).sqrt();
        let w = ps.add_normal(format!("{name}.w"), fan_in, cout, std, rng)?;
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[1, cout]))?;
        Ok(Self {
            w,
            b,
            kernel,
            stride,
        })
    }

    /// `x` is time-major `[L, C_in]`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        g.conv1d(x, p.var(self.w), p.var(self.b), self.kernel, self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = ps.add(format!("{name}.g"), Tensor::full(&[1, dim], 1.0))?;
        let beta = ps.add(format!("{name}.b"), Tensor::zeros(&[1, dim]))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta))
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.wq"), dim, dim, 1.0, rng)?,
            k: Linear::new(ps, &format!("{name}.wk"), dim, dim, 1.0, rng)?,
            v: Linear::new(ps, &format!("{name}.wv"), dim, dim, 1.0, rng)?,
            o: Linear::new(ps, &format!("{name}.wo"), dim, dim, 1.0, rng)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, x)?;
        let v = self.v.forward(g, p, x)?;
        let a = g.attention(q, k, v, self.heads)?;
        self.o.forward(g, p, a)
    }
}

/// Pre-norm transformer encoder block:
/// `x + attn(ln1(x))`, then `y + ffn(ln2(y))` with a GELU MLP.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl TransformerBlock {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim)?,
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), dim, heads, rng)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim)?,
            ff1: Linear::new(ps, &format!("{name}.ff1"), dim, ffn, 1.0, rng)?,
            ff2: Linear::new(ps, &format!("{name}.ff2"), ffn, dim, 1.0, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, p, x)?;
        let a = self.attn.forward(g, p, h)?;
        let y = g.add(x, a)?;
        let h = self.ln2.forward(g, p, y)?;
        let h = self.ff1.forward(g, p, h)?;
        let h = g.gelu(h);
        let h = self.ff2.forward(g, p, h)?;
        g.add(y, h)
    }
}

/// Sinusoidal positional table, `[t, dim]`.
pub fn sinusoidal_positions(t: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; t * dim];
    for pos in 0..t {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            let a = pos as f64 * freq;
            data[pos * dim + 2 * i] = a.sin();
            data[pos * dim + 2 * i + 1] = a.cos();
        }
    }
    Tensor::matrix(t, dim, data).expect("table shape")
}
