//! Convolutional front-end plus transformer stack shared by teacher and
//! student.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, Binding, Conv1d, Graph, LayerNorm, ParamStore, Tensor, TransformerBlock, Var};
use crate::rng::Rng;
use crate::wave::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub conv: Vec<ConvSpec>,
    /// Dropout on the front-end features and block outputs in training mode.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 4,
            ffn_dim: 128,
            conv: vec![
                ConvSpec {
                    channels: 32,
                    kernel: 8,
                    stride: 4,
                },
                ConvSpec {
                    channels: 64,
                    kernel: 4,
                    stride: 4,
                },
                ConvSpec {
                    channels: 64,
                    kernel: 4,
                    stride: 4,
                },
            ],
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let last = self.conv.last().ok_or_else(|| Error::Config("encoder needs a conv front-end".into()))?;
        if last.channels != self.dim {
            return Err(Error::Config(format!(
                "last conv layer has {} channels but the model dim is {}",
                last.channels, self.dim
            )));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("dim {} not divisible into {} heads", self.dim, self.heads)));
        }
        if self.conv.iter().any(|c| c.kernel == 0 || c.stride == 0 || c.channels == 0) {
            return Err(Error::Config("conv layers need positive kernel, stride and channels".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Product of the conv strides (samples per frame).
    pub fn total_stride(&self) -> usize {
        self.conv.iter().map(|c| c.stride).product()
    }

    /// Frames produced for an input of `len` samples (0 when too short).
    pub fn frames(&self, len: usize) -> usize {
        let mut l = len;
        for c in &self.conv {
            if l < c.kernel {
                return 0;
            }
            l = (l - c.kernel) / c.stride + 1;
        }
        l
    }

    /// Shortest input that yields one frame.
    pub fn min_samples(&self) -> usize {
        self.conv.iter().rev().fold(1, |need, c| (need - 1) * c.stride + c.kernel)
    }

    /// Sample index at the centre of frame `t`'s receptive field.
    pub fn frame_centre(&self, t: usize) -> usize {
        t * self.total_stride() + self.min_samples() / 2
    }
}

/// Whether stochastic layers are active.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, g: &mut Graph, x: Var, p: f64) -> Var {
        match self {
            Mode::Eval => x,
            Mode::Train(rng) => {
                use rand::Rng as _;
                g.dropout(x, p, || rng.random::<f64>() >= p)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub frontend: Vec<Conv1d>,
    pub feat_norm: LayerNorm,
    pub blocks: Vec<TransformerBlock>,
}

/// Zero-mean, unit-variance copy of the samples as a `[L, 1]` column.
pub fn normalized_input(wave: &Waveform) -> Tensor {
    let n = wave.len().max(1) as f64;
    let mean = wave.samples.iter().sum::<f64>() / n;
    let var = wave.samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-5);
    let data: Vec<f64> = wave.samples.iter().map(|x| (x - mean) * inv).collect();
    Tensor::matrix(data.len(), 1, data).expect("column shape")
}

impl Encoder {
    pub fn new(ps: &mut ParamStore, config: &EncoderConfig, n_blocks: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut cin = 1;
        let mut frontend = Vec::new();
        for (i, c) in config.conv.iter().enumerate() {
            frontend.push(Conv1d::new(ps, &format!("frontend.{i}"), cin, c.channels, c.kernel, c.stride, rng)?);
            cin = c.channels;
        }
        let feat_norm = LayerNorm::new(ps, "feat_norm", config.dim)?;
        let blocks = (0..n_blocks)
            .map(|i| TransformerBlock::new(ps, &format!("blocks.{i}"), config.dim, config.heads, config.ffn_dim, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            frontend,
            feat_norm,
            blocks,
        })
    }

    pub fn frames(&self, len: usize) -> usize {
        self.config.frames(len)
    }

    /// Front-end features `[T, D]` before positions are added.
    pub fn features(&self, g: &mut Graph, p: &Binding, wave: &Waveform, mode: &mut Mode<'_>) -> Result<Var> {
        let min = self.config.min_samples();
        if wave.len() < min {
            return Err(Error::TooShort { len: wave.len(), min });
        }
        let mut x = g.constant(normalized_input(wave));
        for conv in &self.frontend {
            x = conv.forward(g, p, x)?;
            x = g.gelu(x);
        }
        let x = self.feat_norm.forward(g, p, x)?;
        Ok(mode.dropout(g, x, self.config.dropout))
    }

    /// Adds positions and runs the blocks; returns every block output.
    pub fn transform(&self, g: &mut Graph, p: &Binding, x: Var, mode: &mut Mode<'_>) -> Result<Vec<Var>> {
        let t = g.value(x).rows();
        let pe = g.constant(sinusoidal_positions(t, self.config.dim));
        let mut h = g.add(x, pe)?;
        let mut out = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = block.forward(g, p, h)?;
            h = mode.dropout(g, h, self.config.dropout);
            out.push(h);
        }
        Ok(out)
    }
}
