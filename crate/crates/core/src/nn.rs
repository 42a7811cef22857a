//! Parameterised layers. Each layer only remembers the names of its
//! parameters; values live in a [`ParamStore`].

use crate::error::{Error, Result};
use crate::tensor::{Graph, Init, ParamStore, Var};

pub const LN_EPS: f64 = 1e-5;
pub const EMBED_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: String,
    bias: Option<String>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers `{prefix}.weight` as `[in×out]` and, optionally, `{prefix}.bias`.
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let weight = format!("{prefix}.weight");
        store.init(&weight, &[in_dim, out_dim], Init::Uniform { fan_in: in_dim }, seed);
        let bias = bias.then(|| {
            let b = format!("{prefix}.bias");
            store.init(&b, &[out_dim], Init::Zeros, seed);
            b
        });
        Self { weight, bias, in_dim, out_dim }
    }

    /// Applies to the last axis of `x`.
    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let shape = x.shape();
        if shape.last() != Some(&self.in_dim) {
            return Err(Error::shape(format!("{}: input {shape:?}, expected last dim {}", self.weight, self.in_dim)));
        }
        let rows = shape.iter().product::<usize>() / self.in_dim;
        let mut y = x.reshape(&[rows, self.in_dim])?.matmul(g.param(store, &self.weight)?)?;
        if let Some(b) = &self.bias {
            y = y.add(g.param(store, b)?)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        y.reshape(&out_shape)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize) -> Self {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        store.init(&gamma, &[dim], Init::Ones, seed);
        store.init(&beta, &[dim], Init::Zeros, seed);
        Self { gamma, beta }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        x.layer_norm(g.param(store, &self.gamma)?, g.param(store, &self.beta)?, LN_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: String,
    bias: String,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        seed: u64,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let weight = format!("{prefix}.weight");
        let bias = format!("{prefix}.bias");
        store.init(&weight, &[c_out, c_in, kernel], Init::Uniform { fan_in: c_in * kernel }, seed);
        store.init(&bias, &[c_out], Init::Zeros, seed);
        Self { weight, bias, stride, padding }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        x.conv1d(g.param(store, &self.weight)?, Some(g.param(store, &self.bias)?), self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: String,
    pub rows: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, seed: u64, name: &str, rows: usize, dim: usize) -> Self {
        store.init(name, &[rows, dim], Init::Normal { std: EMBED_STD }, seed);
        Self { table: name.to_string(), rows }
    }

    pub fn lookup<'g>(&self, g: &'g Graph, store: &ParamStore, ids: &[usize]) -> Result<Var<'g>> {
        g.param(store, &self.table)?.index_rows(ids)
    }
}

/// Two-layer feed-forward block with GELU.
#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(store, seed, &format!("{prefix}.fc1"), dim, hidden, true),
            fc2: Linear::new(store, seed, &format!("{prefix}.fc2"), hidden, dim, true),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.fc1.forward(g, store, x)?.gelu()?;
        self.fc2.forward(g, store, h)
    }
}

/// Multi-head self-attention over a batch of equal-length sequences.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    qkv: Linear,
    proj: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Attention output together with the post-softmax weights `[B×heads×N×N]`.
pub struct AttentionOutput<'g> {
    pub out: Var<'g>,
    pub weights: Var<'g>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, seed: u64, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(format!("{prefix}: dim {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            qkv: Linear::new(store, seed, &format!("{prefix}.qkv"), dim, 3 * dim, true),
            proj: Linear::new(store, seed, &format!("{prefix}.proj"), dim, dim, true),
            heads,
            dim,
        })
    }

    /// `x` is `[B×N×C]`. Each of `biases` is added to the scaled scores
    /// before the softmax; their shapes must be suffixes of `[B×heads×N×N]`.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x: Var<'g>,
        biases: &[Var<'g>],
    ) -> Result<AttentionOutput<'g>> {
        let shape = x.shape();
        let [b, n, c] = shape[..] else {
            return Err(Error::shape(format!("attention input {shape:?}, expected [B, N, C]")));
        };
        if c != self.dim {
            return Err(Error::shape(format!("attention width {c}, expected {}", self.dim)));
        }
        let (h, hd) = (self.heads, c / self.heads);
        let qkv = self.qkv.forward(g, store, x)?.reshape(&[b, n, 3, h, hd])?.permute(&[2, 0, 3, 1, 4])?; // [3, B, h, N, hd]
        let part = |i: usize| qkv.narrow(0, i, 1)?.reshape(&[b * h, n, hd]);
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let mut scores = q.scale(1.0 / (hd as f64).sqrt())?.batch_matmul(k, true)?.reshape(&[b, h, n, n])?;
        for bias in biases {
            scores = scores.add(*bias)?;
        }
        let weights = scores.softmax()?;
        let out = weights
            .reshape(&[b * h, n, n])?
            .batch_matmul(v, false)?
            .reshape(&[b, h, n, hd])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, n, c])?;
        Ok(AttentionOutput { out: self.proj.forward(g, store, out)?, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::tensor::{param_gradcheck, Tensor};

    #[test]
    fn linear_keeps_leading_axes() {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, 0, "l", 3, 5, true);
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 4, 3]));
        assert_eq!(lin.forward(&g, &store, x).unwrap().shape(), vec![2, 4, 5]);
        assert!(lin.forward(&g, &store, g.constant(Tensor::zeros(&[2, 4]))).is_err());
    }

    #[test]
    fn attention_rows_are_distributions_and_gradcheck() {
        let mut store = ParamStore::new();
        let att = MultiHeadAttention::new(&mut store, 1, "att", 4, 2).unwrap();
        let x: Vec<f64> = (0..2 * 3 * 4).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let x = Tensor::new(&[2, 3, 4], x).unwrap();
        {
            let g = Graph::new();
            let o = att.forward(&g, &store, g.constant(x.clone()), &[]).unwrap();
            assert_eq!(o.weights.shape(), vec![2, 2, 3, 3]);
            for row in o.weights.value().data().chunks(3) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        // nonzero biases so every parameter influences the output
        for (_, t) in store.iter_mut() {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.05 * ((i % 7) as f64 - 3.0);
            }
        }
        let w = Tensor::new(&[2, 3, 4], (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let report = param_gradcheck(
            |g, s| {
                let o = att.forward(g, s, g.constant(x.clone()), &[])?.out;
                o.mul(g.constant(w.clone()))?.sum()
            },
            &store,
            1e-5,
            None,
            0,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}
