//! Parameterized building blocks recorded onto a [`Graph`].

use rand::Rng;
use seqmot_tensor::{xavier_uniform, Graph, ParamStore, Tensor, Var};

use crate::Result;

/// Parameter handles for one forward pass, indexed by store slot.
pub struct Bound<'g> {
    graph: &'g Graph,
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn new(graph: &'g Graph, store: &ParamStore) -> Self {
        Bound {
            graph,
            vars: store.tensors().iter().map(|t| graph.param(t.clone())).collect(),
        }
    }

    /// Same values recorded as constants; no gradients are tracked.
    pub fn frozen(graph: &'g Graph, store: &ParamStore) -> Self {
        Bound {
            graph,
            vars: store.tensors().iter().map(|t| graph.constant(t.clone())).collect(),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn get(&self, slot: usize) -> Var<'g> {
        self.vars[slot]
    }

    pub fn vars(&self) -> &[Var<'g>] {
        &self.vars
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: usize,
    bias: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        let weight = store.insert(format!("{name}.weight"), xavier_uniform(inputs, outputs, rng))?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[outputs]))?;
        Ok(Linear { weight, bias })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        Ok(x.matmul(p.get(self.weight))?.add(p.get(self.bias))?)
    }
}

/// Shared per-row MLP with ReLU between layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
    relu_last: bool,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: &[usize], relu_last: bool, rng: &mut R) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, relu_last })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, mut x: Var<'g>) -> Result<Var<'g>> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, x)?;
            if i + 1 < n || self.relu_last {
                x = x.relu();
            }
        }
        Ok(x)
    }
}

/// Layer normalization over the last axis with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: usize,
    beta: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.insert(format!("{name}.gamma"), Tensor::full(&[dim], 1.0))?;
        let beta = store.insert(format!("{name}.beta"), Tensor::zeros(&[dim]))?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        Ok(x.layer_norm(Self::EPS)?.mul(p.get(self.gamma))?.add(p.get(self.beta))?)
    }
}

/// Pre-norm transformer encoder layer: multi-head self-attention followed by
/// a position-wise feed-forward block, both residual.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    norm1: LayerNorm,
    qkv: Linear,
    out: Linear,
    norm2: LayerNorm,
    ffn: Mlp,
    heads: usize,
    dim: usize,
}

impl AttentionLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(AttentionLayer {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[dim, ffn_dim, dim], false, rng)?,
            heads,
            dim,
        })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let h = self.norm1.forward(p, x)?;
        let qkv = self.qkv.forward(p, h)?;
        let mut heads = Vec::with_capacity(self.heads);
        for k in 0..self.heads {
            let q = qkv.slice(1, k * head_dim, (k + 1) * head_dim)?;
            let kk = qkv.slice(1, self.dim + k * head_dim, self.dim + (k + 1) * head_dim)?;
            let v = qkv.slice(1, 2 * self.dim + k * head_dim, 2 * self.dim + (k + 1) * head_dim)?;
            let attn = q.matmul(kk.transpose()?)?.scale(scale).softmax()?;
            heads.push(attn.matmul(v)?);
        }
        let merged = Var::concat(&heads, 1)?;
        let x = x.add(self.out.forward(p, merged)?)?;
        let h = self.norm2.forward(p, x)?;
        Ok(x.add(self.ffn.forward(p, h)?)?)
    }
}
