#![allow(dead_code)]

use htd_core::data::{assemble_batch, valid_indices, Batch, Dataset, GeneratorConfig};
use htd_core::policy::{PolicyConfig, Variant};
use htd_core::schema::ModalitySchema;
use htd_core::tactile::TactileEncoderConfig;
use htd_core::training::{TrainConfig, TrainState};

pub fn tiny_generator() -> GeneratorConfig {
    GeneratorConfig {
        schema: ModalitySchema { image_height: 16, image_width: 16, ..Default::default() },
        episode_len: 16,
        ..Default::default()
    }
}

pub fn tiny_dataset(episodes: usize, seed: u64) -> Dataset {
    Dataset::synthetic(&tiny_generator(), episodes, seed).unwrap()
}

/// d = 8, one encoder and one decoder layer.
pub fn mini_policy(variant: Variant) -> PolicyConfig {
    PolicyConfig {
        variant,
        d_model: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_dim: 16,
        image_tokens: 1,
        state_tokens: 1,
        tactile_tokens: 1,
        horizon: 4,
        dream_horizon: 4,
        image_channels: 2,
        state_hidden: 8,
        expert_hidden: 8,
        tactile: TactileEncoderConfig { latent_dim: 4, conv_channels: 2, fusion_hidden: 8, ..Default::default() },
        ..Default::default()
    }
}

pub fn mini_train(variant: Variant) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        steps: 4,
        learning_rate: 1e-3,
        log_every: 1,
        checkpoint_every: 0,
        policy: mini_policy(variant),
        ..Default::default()
    }
    .with_variant(variant)
}

pub fn mini_state(variant: Variant) -> (TrainState, Dataset) {
    let ds = tiny_dataset(2, 3);
    (TrainState::new(mini_train(variant), &ds.schema).unwrap(), ds)
}

pub fn first_batch(state: &TrainState, ds: &Dataset, n: usize) -> Batch {
    let (h, tau) = (state.config.policy.horizon, state.config.policy.dream_horizon);
    let idx = valid_indices(&ds.episodes, h, tau);
    let step = (idx.len() / n).max(1);
    let pick: Vec<_> = idx.iter().step_by(step).take(n).copied().collect();
    assemble_batch(ds, &pick, h, tau).unwrap()
}

use htd_core::autograd::Var;
use htd_core::params::{ParamId, ParamKey};
use htd_core::training::LossVars;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Term {
    Bc,
    Force,
    Tactile,
    Total,
}

pub const TERMS: [Term; 4] = [Term::Bc, Term::Force, Term::Tactile, Term::Total];

fn term_var(g: &mut htd_core::autograd::Graph, v: &LossVars, term: Term) -> Var {
    match term {
        Term::Bc => {
            let a = g.add(v.actions[0], v.actions[1]);
            let a = g.add(a, v.actions[2]);
            g.add(a, v.actions[3])
        }
        Term::Force => v.force.expect("variant has no force term"),
        Term::Tactile => v.tact.expect("variant has no tactile term"),
        Term::Total => v.total,
    }
}

fn term_value(state: &TrainState, batch: &Batch, term: Term) -> f64 {
    let mut g = htd_core::autograd::Graph::new();
    let v = state.build_loss(&mut g, batch).unwrap();
    let t = term_var(&mut g, &v, term);
    g.value(t).item()
}

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// Central differences against the tape gradient for the largest-gradient
/// entry of every student tensor. Relative error uses a floor of 1e-6 on the
/// denominator.
pub fn grad_check(state: &mut TrainState, batch: &Batch, term: Term, eps: f64) -> GradCheck {
    let grads = {
        let mut g = htd_core::autograd::Graph::new();
        let v = state.build_loss(&mut g, batch).unwrap();
        let t = term_var(&mut g, &v, term);
        g.backward(t)
    };
    let mut out = GradCheck { checked: 0, max_rel: 0.0, worst: String::new() };
    for tactile in [false, true] {
        let store = if tactile { &state.params.tactile } else { &state.params.policy };
        let targets: Vec<(ParamId, ParamKey, String)> =
            store.ids().map(|id| (id, store.key(id), store.name(id).to_string())).collect();
        for (id, key, name) in targets {
            let analytic = grads.param(key).cloned();
            let k = analytic.as_ref().map_or(0, |a| {
                let d = a.data();
                (0..d.len()).max_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs())).unwrap()
            });
            let a = analytic.as_ref().map_or(0.0, |t| t.data()[k]);
            let nudge = |s: &mut TrainState, delta: f64| {
                let store = if tactile { &mut s.params.tactile } else { &mut s.params.policy };
                store.get_mut(id).data_mut()[k] += delta;
            };
            let orig = if tactile { state.params.tactile.get(id).data()[k] } else { state.params.policy.get(id).data()[k] };
            nudge(state, eps);
            let up = term_value(state, batch, term);
            nudge(state, -2.0 * eps);
            let down = term_value(state, batch, term);
            let store = if tactile { &mut state.params.tactile } else { &mut state.params.policy };
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            out.checked += 1;
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = format!("{name}[{k}]: tape {a:e}, numeric {numeric:e}");
            }
        }
    }
    out
}
