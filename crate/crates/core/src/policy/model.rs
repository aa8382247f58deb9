use std::sync::atomic::{AtomicUsize, Ordering};

use crate::autograd::{Graph, Var};
use crate::data::Observation;
use crate::error::Result;
use crate::nn::{sinusoidal_positions, DecoderLayer, EncoderLayer, LayerNorm, Mlp, MultiHeadAttention};
use crate::params::{Init, ParamId, ParamStore, StoreTag};
use crate::schema::{ActionModality, ActionSchema, ModalitySchema, IMAGE_VIEWS, TACTILE_BOTH_HANDS};
use crate::tactile::{RegionId, RegionLayout, TactileEncoder};
use crate::tensor::Tensor;

use super::config::PolicyConfig;
use super::tokenizers::{ImageTokenizer, StateTokenizer, TactileTokenizer};

/// A readout head: learnable queries cross-attend over decoder tokens, then an
/// MLP maps each query to `out_dim` values. One query per predicted step.
#[derive(Clone, Debug)]
pub struct Expert {
    queries: ParamId,
    attn: MultiHeadAttention,
    norm: LayerNorm,
    mlp: Mlp,
    steps: usize,
    out_dim: usize,
}

impl Expert {
    fn new(store: &mut ParamStore, name: &str, cfg: &PolicyConfig, steps: usize, out_dim: usize) -> Self {
        Self {
            queries: store.register(&format!("{name}.queries"), &[steps, cfg.d_model], Init::Normal(0.02)),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg.d_model, cfg.heads),
            norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.d_model),
            mlp: Mlp::new(store, &format!("{name}.mlp"), &[cfg.d_model, cfg.expert_hidden, out_dim]),
            steps,
            out_dim,
        }
    }

    /// `context [N, L, d] -> [N, steps, out_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, context: Var) -> Var {
        let n = g.shape(context)[0];
        let q = g.param(p, self.queries);
        let q = g.broadcast_batch(q, n);
        let a = self.attn.forward(g, p, q, context);
        let h = g.add(q, a);
        let h = self.norm.forward(g, p, h);
        let y = self.mlp.forward(g, p, h);
        debug_assert_eq!(g.shape(y), &[n, self.steps, self.out_dim]);
        y
    }
}

/// Student parameters: everything except the tactile encoder lives in
/// `policy`; the tactile encoder (the part mirrored by the EMA teacher) lives
/// in `tactile`.
#[derive(Clone, Debug)]
pub struct PolicyParams {
    pub policy: ParamStore,
    pub tactile: ParamStore,
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyOutput {
    /// `[N, h, dim(m)]` per modality, in [`ActionModality::ALL`] order.
    pub actions: [Var; 4],
    pub dreams: Option<DreamOutput>,
}

#[derive(Clone, Copy, Debug)]
pub struct DreamOutput {
    /// `[N, tau, 2 J]`.
    pub force: Var,
    /// `[N, tau, 12, d_z]` for latent dreaming.
    pub latent: Option<Var>,
    /// `[N, tau, 2124]` for raw tactile dreaming.
    pub raw_tactile: Option<Var>,
}

/// Action chunks as plain tensors, `[N, h, dim(m)]` per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionChunks(pub Vec<Tensor>);

impl ActionChunks {
    pub fn get(&self, m: ActionModality) -> &Tensor {
        &self.0[ActionModality::ALL.iter().position(|&x| x == m).unwrap()]
    }
}

#[derive(Debug)]
pub struct Policy {
    config: PolicyConfig,
    schema: ModalitySchema,
    images: ImageTokenizer,
    body: StateTokenizer,
    hand_proprio: StateTokenizer,
    hand_force: Option<StateTokenizer>,
    tactile_tok: Option<TactileTokenizer>,
    tactile: TactileEncoder,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    decoder_queries: ParamId,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
    action_experts: Vec<Expert>,
    force_dream: Option<Expert>,
    latent_dream: Option<Expert>,
    raw_dream: Option<Expert>,
    dream_calls: AtomicUsize,
}

impl Policy {
    /// Builds the architecture and freshly initialised parameters.
    pub fn new(config: &PolicyConfig, schema: &ModalitySchema, seed: u64) -> Result<(Self, PolicyParams)> {
        config.validate()?;
        schema.validate()?;
        let c = config;
        let mut ps = ParamStore::new(StoreTag::Policy, seed);
        let mut ts = ParamStore::new(StoreTag::Tactile, seed);
        let tactile = TactileEncoder::new(&mut ts, &c.tactile, &RegionLayout::default())?;
        let d = c.d_model;
        let images = ImageTokenizer::new(&mut ps, c.image_channels, d, c.heads, c.image_tokens);
        let body = StateTokenizer::new(&mut ps, "body", 1, schema.body_dim, c.state_hidden, d, c.heads, c.state_tokens);
        let hand_proprio =
            StateTokenizer::new(&mut ps, "hand_proprio", 2, schema.hand_joints, c.state_hidden, d, c.heads, c.state_tokens);
        let (hand_force, tactile_tok) = if c.variant.touch_inputs() {
            (
                Some(StateTokenizer::new(
                    &mut ps,
                    "hand_force",
                    2,
                    schema.hand_joints,
                    c.state_hidden,
                    d,
                    c.heads,
                    c.state_tokens,
                )),
                Some(TactileTokenizer::new(&mut ps, c.tactile.latent_dim, d, c.heads, c.tactile_tokens)),
            )
        } else {
            (None, None)
        };
        let encoder = (0..c.encoder_layers)
            .map(|i| EncoderLayer::new(&mut ps, &format!("encoder.{i}"), d, c.heads, c.ffn_dim))
            .collect();
        let encoder_norm = LayerNorm::new(&mut ps, "encoder.norm", d);
        let decoder_queries =
            ps.register("decoder.queries", &[c.output_tokens.total(), d], Init::Normal(0.02));
        let decoder = (0..c.decoder_layers)
            .map(|i| DecoderLayer::new(&mut ps, &format!("decoder.{i}"), d, c.heads, c.ffn_dim))
            .collect();
        let decoder_norm = LayerNorm::new(&mut ps, "decoder.norm", d);
        let actions = schema.actions();
        let action_experts = ActionModality::ALL
            .iter()
            .map(|&m| Expert::new(&mut ps, &format!("expert.{}", m.name()), c, c.horizon, actions.dim(m)))
            .collect();
        let dreams = c.variant.dreams();
        let force_dream = dreams.then(|| Expert::new(&mut ps, "dream.force", c, c.dream_horizon, schema.hand_dim()));
        let latent_dream = (c.variant == super::Variant::DreamLatent).then(|| {
            Expert::new(&mut ps, "dream.latent", c, c.dream_horizon, RegionId::COUNT * c.tactile.latent_dim)
        });
        let raw_dream = (c.variant == super::Variant::DreamRaw)
            .then(|| Expert::new(&mut ps, "dream.raw_tactile", c, c.dream_horizon, TACTILE_BOTH_HANDS));
        let policy = Self {
            config: c.clone(),
            schema: schema.clone(),
            images,
            body,
            hand_proprio,
            hand_force,
            tactile_tok,
            tactile,
            encoder,
            encoder_norm,
            decoder_queries,
            decoder,
            decoder_norm,
            action_experts,
            force_dream,
            latent_dream,
            raw_dream,
            dream_calls: AtomicUsize::new(0),
        };
        Ok((policy, PolicyParams { policy: ps, tactile: ts }))
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn schema(&self) -> &ModalitySchema {
        &self.schema
    }

    pub fn action_schema(&self) -> ActionSchema {
        self.schema.actions()
    }

    pub fn tactile_encoder(&self) -> &TactileEncoder {
        &self.tactile
    }

    /// Number of times any dream expert has been evaluated.
    pub fn dream_calls(&self) -> usize {
        self.dream_calls.load(Ordering::SeqCst)
    }

    /// Inserts an observation as constants.
    pub fn observation_vars(g: &mut Graph, obs: &Observation) -> ObservationVars {
        ObservationVars {
            images: obs.images.iter().map(|t| g.constant(t.clone())).collect(),
            body: g.constant(obs.body.clone()),
            hand_proprio: g.constant(obs.hand_proprio.clone()),
            hand_force: g.constant(obs.hand_force.clone()),
            tactile: g.constant(obs.tactile.clone()),
        }
    }

    /// Encoder input `[N, L_in, d]` in the fixed order head-left, head-right,
    /// wrist-left, wrist-right, body, hand proprio, then (with touch inputs)
    /// hand force, left tactile, right tactile.
    pub fn observation_tokens(&self, g: &mut Graph, p: &PolicyParams, obs: &ObservationVars) -> Var {
        assert_eq!(obs.images.len(), IMAGE_VIEWS);
        let mut parts = self.images.forward(g, &p.policy, &obs.images);
        parts.push(self.body.forward(g, &p.policy, obs.body));
        parts.push(self.hand_proprio.forward(g, &p.policy, obs.hand_proprio));
        if let (Some(force), Some(tac)) = (&self.hand_force, &self.tactile_tok) {
            parts.push(force.forward(g, &p.policy, obs.hand_force));
            let [l, r] = tac.forward(g, &p.policy, &self.tactile, &p.tactile, obs.tactile);
            parts.push(l);
            parts.push(r);
        }
        g.concat(&parts, 1)
    }

    /// Runs the trunk: `tokens [N, L_in, d] -> decoder output [N, L_out, d]`.
    pub fn trunk(&self, g: &mut Graph, p: &PolicyParams, tokens: Var) -> Var {
        let n = g.shape(tokens)[0];
        let d = self.config.d_model;
        let l_in = g.shape(tokens)[1];
        let pos_in = g.constant(sinusoidal_positions(l_in, d));
        let mut x = g.add_bcast(tokens, pos_in);
        for layer in &self.encoder {
            x = layer.forward(g, &p.policy, x);
        }
        let memory = self.encoder_norm.forward(g, &p.policy, x);
        let l_out = self.config.output_tokens.total();
        let q = g.param(&p.policy, self.decoder_queries);
        let pos_out = g.constant(sinusoidal_positions(l_out, d));
        let q = g.add(q, pos_out);
        let mut y = g.broadcast_batch(q, n);
        for layer in &self.decoder {
            y = layer.forward(g, &p.policy, y, memory);
        }
        self.decoder_norm.forward(g, &p.policy, y)
    }

    /// Each action expert reads only its own span of decoder tokens.
    pub fn decode_actions(&self, g: &mut Graph, p: &PolicyParams, decoded: Var) -> [Var; 4] {
        let mut out = Vec::with_capacity(4);
        for (expert, &m) in self.action_experts.iter().zip(ActionModality::ALL.iter()) {
            let span = self.config.output_tokens.span(m);
            let ctx = g.narrow(decoded, 1, span.start, span.len());
            out.push(expert.forward(g, &p.policy, ctx));
        }
        [out[0], out[1], out[2], out[3]]
    }

    /// Dream experts attend over every decoder token. `None` when the variant
    /// has no dream heads.
    pub fn decode_dreams(&self, g: &mut Graph, p: &PolicyParams, decoded: Var) -> Option<DreamOutput> {
        let force_expert = self.force_dream.as_ref()?;
        self.dream_calls.fetch_add(1, Ordering::SeqCst);
        let n = g.shape(decoded)[0];
        let tau = self.config.dream_horizon;
        let force = force_expert.forward(g, &p.policy, decoded);
        let latent = self.latent_dream.as_ref().map(|e| {
            let z = e.forward(g, &p.policy, decoded);
            g.reshape(z, &[n, tau, RegionId::COUNT, self.config.tactile.latent_dim])
        });
        let raw_tactile = self.raw_dream.as_ref().map(|e| e.forward(g, &p.policy, decoded));
        Some(DreamOutput { force, latent, raw_tactile })
    }

    /// Full training-time forward pass.
    pub fn forward(&self, g: &mut Graph, p: &PolicyParams, obs: &ObservationVars) -> PolicyOutput {
        let tokens = self.observation_tokens(g, p, obs);
        let decoded = self.trunk(g, p, tokens);
        let actions = self.decode_actions(g, p, decoded);
        let dreams = self.decode_dreams(g, p, decoded);
        PolicyOutput { actions, dreams }
    }

    /// Inference: action chunks only, dream experts are never touched.
    pub fn act(&self, p: &PolicyParams, obs: &Observation) -> ActionChunks {
        let mut g = Graph::new();
        let vars = Self::observation_vars(&mut g, obs);
        let tokens = self.observation_tokens(&mut g, p, &vars);
        let decoded = self.trunk(&mut g, p, tokens);
        let actions = self.decode_actions(&mut g, p, decoded);
        ActionChunks(actions.iter().map(|&a| g.value(a).clone()).collect())
    }
}

#[derive(Clone, Debug)]
pub struct ObservationVars {
    pub images: Vec<Var>,
    pub body: Var,
    pub hand_proprio: Var,
    pub hand_force: Var,
    pub tactile: Var,
}
