//! Modality tokenizers. Each one turns a modality into a short feature
//! sequence and compresses it into a fixed number of tokens with a
//! [`QueryAggregator`].

use crate::autograd::{Graph, Var};
use crate::nn::{Conv2d, Linear, Mlp, QueryAggregator};
use crate::params::ParamStore;
use crate::schema::IMAGE_VIEWS;
use crate::tactile::{Region, TactileEncoder};
use crate::tensor::Tensor;

/// Shared three-block strided CNN over all camera views. Two coordinate
/// channels are appended to the RGB input so features know where they came
/// from; the per-view aggregators then need no positional encoding.
#[derive(Clone, Debug)]
pub struct ImageTokenizer {
    convs: Vec<Conv2d>,
    proj: Linear,
    aggregators: Vec<QueryAggregator>,
    channels: usize,
}

impl ImageTokenizer {
    pub fn new(store: &mut ParamStore, channels: usize, dim: usize, heads: usize, tokens: usize) -> Self {
        let convs = vec![
            Conv2d::new(store, "image.conv0", 5, channels, 3, 2, 1),
            Conv2d::new(store, "image.conv1", channels, channels, 3, 2, 1),
            Conv2d::new(store, "image.conv2", channels, channels, 3, 2, 1),
        ];
        let aggregators = (0..IMAGE_VIEWS)
            .map(|v| QueryAggregator::new(store, &format!("image.agg{v}"), tokens, dim, heads))
            .collect();
        Self { convs, proj: Linear::new(store, "image.proj", channels, dim), aggregators, channels }
    }

    fn coords(n: usize, h: usize, w: usize) -> Tensor {
        let mut data = Vec::with_capacity(n * 2 * h * w);
        let lin = |i: usize, len: usize| if len > 1 { -1.0 + 2.0 * i as f64 / (len - 1) as f64 } else { 0.0 };
        for _ in 0..n {
            for r in 0..h {
                data.extend((0..w).map(|_| lin(r, h)));
            }
            for _ in 0..h {
                data.extend((0..w).map(|c| lin(c, w)));
            }
        }
        Tensor::new([n, 2, h, w], data)
    }

    /// `views`: one `[N, 3, H, W]` var per view. Returns one `[N, k, d]` per view.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, views: &[Var]) -> Vec<Var> {
        let s = g.shape(views[0]).to_vec();
        let (n, h, w) = (s[0], s[2], s[3]);
        let rgb = g.concat(views, 0);
        let coords = g.constant(Self::coords(views.len() * n, h, w));
        let mut x = g.concat(&[rgb, coords], 1);
        for conv in &self.convs {
            x = conv.forward(g, p, x);
            x = g.gelu(x);
        }
        let fs = g.shape(x).to_vec();
        let len = fs[2] * fs[3];
        let x = g.reshape(x, &[views.len() * n, self.channels, len]);
        let x = g.permute(x, &[0, 2, 1]);
        let feats = self.proj.forward(g, p, x);
        (0..views.len())
            .map(|v| {
                let f = g.narrow(feats, 0, v * n, n);
                self.aggregators[v].forward(g, p, f)
            })
            .collect()
    }
}

/// Low-dimensional state: rows of `width` values are mapped to one feature
/// each by a shared MLP, then aggregated.
#[derive(Clone, Debug)]
pub struct StateTokenizer {
    mlp: Mlp,
    aggregator: QueryAggregator,
    rows: usize,
    width: usize,
}

impl StateTokenizer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        width: usize,
        hidden: usize,
        dim: usize,
        heads: usize,
        tokens: usize,
    ) -> Self {
        Self {
            mlp: Mlp::new(store, &format!("{name}.mlp"), &[width, hidden, dim]),
            aggregator: QueryAggregator::new(store, &format!("{name}.agg"), tokens, dim, heads),
            rows,
            width,
        }
    }

    /// `x [N, rows * width] -> [N, k, d]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, x: Var) -> Var {
        let n = g.shape(x)[0];
        let x = g.reshape(x, &[n, self.rows, self.width]);
        let f = self.mlp.forward(g, p, x);
        self.aggregator.forward(g, p, f)
    }
}

/// Region latents of each hand, projected to the trunk width and aggregated
/// per hand.
#[derive(Clone, Debug)]
pub struct TactileTokenizer {
    proj: Linear,
    aggregators: [QueryAggregator; 2],
}

impl TactileTokenizer {
    pub fn new(store: &mut ParamStore, latent_dim: usize, dim: usize, heads: usize, tokens: usize) -> Self {
        Self {
            proj: Linear::new(store, "tactile_tok.proj", latent_dim, dim),
            aggregators: [
                QueryAggregator::new(store, "tactile_tok.agg_left", tokens, dim, heads),
                QueryAggregator::new(store, "tactile_tok.agg_right", tokens, dim, heads),
            ],
        }
    }

    /// `tactile [N, 2124]` -> left and right `[N, k, d]` token sets.
    pub fn forward(
        &self,
        g: &mut Graph,
        policy: &ParamStore,
        encoder: &TactileEncoder,
        tactile_params: &ParamStore,
        tactile: Var,
    ) -> [Var; 2] {
        let z = encoder.forward(g, tactile_params, tactile);
        let f = self.proj.forward(g, policy, z);
        let per_hand = Region::ALL.len();
        let left = g.narrow(f, 1, 0, per_hand);
        let right = g.narrow(f, 1, per_hand, per_hand);
        [self.aggregators[0].forward(g, policy, left), self.aggregators[1].forward(g, policy, right)]
    }
}
