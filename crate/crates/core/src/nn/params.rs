use rand::Rng as _;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a fresh name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.push(Param { name, value });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Registers a `rows x cols` matrix drawn from N(0, std²).
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.add(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrites same-named parameters from `src` (shapes must agree) and
    /// returns how many were copied.
    pub fn copy_matching(&mut self, src: &ParamStore, filter: impl Fn(&str) -> Option<String>) -> Result<usize> {
        let mut copied = 0;
        for p in &src.params {
            let Some(dst_name) = filter(&p.name) else {
                continue;
            };
            let Some(id) = self.find(&dst_name) else {
                continue;
            };
            let dst = &mut self.params[id.0];
            if dst.value.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "copy_matching",
                    lhs: dst.value.shape().to_vec(),
                    rhs: p.value.shape().to_vec(),
                });
            }
            dst.value = p.value.clone();
            copied += 1;
        }
        Ok(copied)
    }

    /// Places every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Binding { vars }
    }
}

/// Graph leaves for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Wraps leaves that were placed on the graph in parameter order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in parameter order, zero-filled where nothing flowed.
    pub fn grads(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| {
                g.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(v).len()])
            })
            .collect()
    }
}
