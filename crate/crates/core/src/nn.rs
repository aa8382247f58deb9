//! Layers built on [`Graph`] ops.
//!
//! Layers only hold [`ParamId`]s; values live in a [`ParamStore`] passed to
//! every forward call, which keeps layers `Sync` and lets the same layer run
//! against a student or an EMA copy of its parameters.

use crate::autograd::{Graph, Var};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            w: store.register(&format!("{name}.w"), &[in_dim, out_dim], Init::Uniform(bound)),
            b: store.register(&format!("{name}.b"), &[out_dim], Init::Uniform(bound)),
            in_dim,
            out_dim,
        }
    }

    /// `x [.., in] -> [.., out]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Var {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let y = g.matmul(x, w);
        g.add_bcast(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.register(&format!("{name}.gamma"), &[dim], Init::Ones),
            beta: store.register(&format!("{name}.beta"), &[dim], Init::Zeros),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Var {
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Linear layers with GELU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, p, h);
            if i + 1 < self.layers.len() {
                h = g.gelu(h);
            }
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        Self {
            w: store.register(
                &format!("{name}.w"),
                &[out_channels, in_channels, kernel, kernel],
                Init::Uniform(bound),
            ),
            b: store.register(&format!("{name}.b"), &[out_channels], Init::Uniform(bound)),
            stride,
            pad,
            out_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Var {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads >= 1 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim),
            k: Linear::new(store, &format!("{name}.k"), dim, dim),
            v: Linear::new(store, &format!("{name}.v"), dim, dim),
            o: Linear::new(store, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }

    fn split_heads(&self, g: &mut Graph, x: Var) -> Var {
        let s = g.shape(x).to_vec();
        let (b, l) = (s[0], s[1]);
        let dh = self.dim / self.heads;
        let x = g.reshape(x, &[b, l, self.heads, dh]);
        let x = g.permute(x, &[0, 2, 1, 3]);
        g.reshape(x, &[b * self.heads, l, dh])
    }

    /// `queries [B, Lq, d]` attend over `context [B, Lk, d]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, queries: Var, context: Var) -> Var {
        let (b, lq) = (g.shape(queries)[0], g.shape(queries)[1]);
        let dh = self.dim / self.heads;
        let q = self.q.forward(g, p, queries);
        let k = self.k.forward(g, p, context);
        let v = self.v.forward(g, p, context);
        let q = self.split_heads(g, q);
        let k = self.split_heads(g, k);
        let v = self.split_heads(g, v);
        let scores = g.bmm(q, k, true);
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let att = g.softmax(scores);
        let out = g.bmm(att, v, false);
        let out = g.reshape(out, &[b, self.heads, lq, dh]);
        let out = g.permute(out, &[0, 2, 1, 3]);
        let out = g.reshape(out, &[b, lq, self.dim]);
        self.o.forward(g, p, out)
    }
}

/// A fixed set of learnable query tokens attending over a feature sequence:
/// `LN(q + MHA(q, features))`. No positional information is added, so the
/// output does not depend on the order of the features.
#[derive(Clone, Debug)]
pub struct QueryAggregator {
    queries: ParamId,
    attn: MultiHeadAttention,
    norm: LayerNorm,
    pub tokens: usize,
}

impl QueryAggregator {
    pub fn new(store: &mut ParamStore, name: &str, tokens: usize, dim: usize, heads: usize) -> Self {
        assert!(tokens >= 1, "aggregator needs at least one query");
        Self {
            queries: store.register(&format!("{name}.queries"), &[tokens, dim], Init::Normal(0.02)),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads),
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            tokens,
        }
    }

    /// `features [B, L, d] -> [B, tokens, d]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, features: Var) -> Var {
        let b = g.shape(features)[0];
        let q = g.param(p, self.queries);
        let q = g.broadcast_batch(q, b);
        let a = self.attn.forward(g, p, q, features);
        let h = g.add(q, a);
        self.norm.forward(g, p, h)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: Mlp,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn_dim: usize) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[dim, ffn_dim, dim]),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Var {
        let h = self.ln1.forward(g, p, x);
        let a = self.attn.forward(g, p, h, h);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, p, x);
        let f = self.ffn.forward(g, p, h);
        g.add(x, f)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ffn: Mlp,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn_dim: usize) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), dim),
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[dim, ffn_dim, dim]),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var, memory: Var) -> Var {
        let h = self.ln1.forward(g, p, x);
        let a = self.self_attn.forward(g, p, h, h);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, p, x);
        let c = self.cross_attn.forward(g, p, h, memory);
        let x = g.add(x, c);
        let h = self.ln3.forward(g, p, x);
        let f = self.ffn.forward(g, p, h);
        g.add(x, f)
    }
}

/// Standard sine/cosine position table `[len, dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * freq;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new([len, dim], data)
}
