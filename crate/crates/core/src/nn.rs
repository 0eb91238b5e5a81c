//! Parameterized building blocks recorded onto a [`Graph`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{ParamId, ParameterStore};
use crate::tensor::{Graph, Tensor, Var};

/// Scaled uniform initialization, `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// Store parameters materialized as graph leaves, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Inserts every parameter as a gradient-tracking leaf.
    pub fn bind(g: &mut Graph, store: &ParameterStore) -> Self {
        Self(store.iter().map(|(_, t)| g.param(t.clone())).collect())
    }

    /// Inserts parameters as constants (inference only).
    pub fn bind_frozen(g: &mut Graph, store: &ParameterStore) -> Self {
        Self(store.iter().map(|(_, t)| g.constant(t.clone())).collect())
    }

    /// Wraps vars that are already on the graph, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Gradients for every bound parameter, zero-filled where untouched.
    pub fn gradients(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.0
            .iter()
            .map(|&v| {
                g.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
            })
            .collect()
    }
}

/// Inverted dropout driven by its own random stream.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Self { rate, rng }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = g.shape(x).to_vec();
        let rng = &mut self.rng;
        let mask = Tensor::from_fn(&shape, |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        g.mul_const(x, &mask)
    }
}

pub(crate) fn dropout(d: &mut Option<&mut Dropout>, g: &mut Graph, x: Var) -> Result<Var> {
    match d {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

/// Affine map over the last axis: `x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.insert(
            format!("{name}.weight"),
            xavier_uniform(&[in_dim, out_dim], in_dim, out_dim, rng),
        )?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.get(self.weight))?;
        g.add_bias(y, p.get(self.bias))
    }

    pub fn num_params(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.insert(format!("{name}.gain"), Tensor::full(&[dim], 1.0))?,
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layernorm(x, p.get(self.gain), p.get(self.bias))
    }
}

/// 1-D convolution with bias, `kernel: [C_out, C_in, K]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub padding: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        (c_in, c_out, width): (usize, usize, usize),
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let kernel = store.insert(
            format!("{name}.kernel"),
            xavier_uniform(&[c_out, c_in, width], c_in * width, c_out * width, rng),
        )?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[c_out]))?;
        Ok(Self {
            kernel,
            bias,
            padding,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.conv1d(x, p.get(self.kernel), Some(p.get(self.bias)), 1, self.padding)
    }
}
