mod common;

use std::fs;

use common::{first_batch, mini_state, mini_train, tiny_dataset, Term};
use htd_core::autograd::Graph;
use htd_core::data::sample_training_batch;
use htd_core::params::StoreTag;
use htd_core::policy::Variant;
use htd_core::training::{
    load_checkpoint, resume, save_checkpoint, train, RunOptions, TargetMode, TrainConfig, TrainState, CHECKPOINT_DIR,
    METRICS_FILE,
};
use htd_core::HtdError;

#[test]
fn total_is_the_weighted_sum_of_terms() {
    for v in Variant::ALL {
        let (state, ds) = mini_state(v);
        let b = first_batch(&state, &ds, 2);
        let br = state.evaluate(&b).unwrap();
        let w = br.weighted_sum(&state.config.loss);
        assert!((br.total - w).abs() <= 1e-12 * br.total.abs().max(1.0), "{v}: {br:?}");
        if !v.dreams() {
            assert_eq!(br.force, 0.0);
            assert_eq!(br.tact, 0.0);
        }
    }
}

#[test]
fn doubling_lambda_tactile_doubles_its_contribution() {
    let (mut state, ds) = mini_state(Variant::DreamLatent);
    let b = first_batch(&state, &ds, 2);
    let lz = state.config.loss.lambda_tactile;
    let one = state.evaluate(&b).unwrap();
    state.config.loss.lambda_tactile = 2.0 * lz;
    let two = state.evaluate(&b).unwrap();
    assert_eq!(one.tact, two.tact);
    let d = two.total - one.total;
    assert!((d - lz * one.tact).abs() <= 1e-12 * one.total.abs(), "{d} vs {}", lz * one.tact);
}

#[test]
fn teacher_never_receives_gradient() {
    let (state, ds) = mini_state(Variant::DreamLatent);
    let b = first_batch(&state, &ds, 2);
    let (_, grads, _) = state.loss_and_grads(&b).unwrap();
    assert!(grads.params().all(|(k, _)| k.store != StoreTag::Teacher));
    assert!(grads.params().any(|(k, _)| k.store == StoreTag::Tactile));
}

#[test]
fn live_student_targets_send_gradient_into_the_encoder() {
    let (mut ema, ds) = mini_state(Variant::DreamLatent);
    let b = first_batch(&ema, &ds, 2);
    let (_, g_ema, _) = ema.loss_and_grads(&b).unwrap();
    ema.config.targets = TargetMode::LiveStudent;
    let (_, g_live, _) = ema.loss_and_grads(&b).unwrap();
    let differs = g_live
        .params()
        .filter(|(k, _)| k.store == StoreTag::Tactile)
        .any(|(k, t)| g_ema.param(*k).is_none_or(|e| e != t));
    assert!(differs);
}

#[test]
fn step_updates_student_then_teacher() {
    let (mut state, ds) = mini_state(Variant::DreamLatent);
    for id in state.teacher.params.ids().collect::<Vec<_>>() {
        for v in state.teacher.params.get_mut(id).data_mut() {
            *v += 0.25;
        }
    }
    let b = first_batch(&state, &ds, 2);
    let teacher_before = state.teacher.params.flat();
    state.train_step(&b).unwrap();
    let a = state.config.ema_decay;
    let expected: Vec<f64> =
        teacher_before.iter().zip(state.params.tactile.flat()).map(|(t, s)| a * t + (1.0 - a) * s).collect();
    assert_eq!(state.teacher.params.flat(), expected);
    assert_eq!(state.step, 1);
}

#[test]
fn zero_learning_rate_freezes_the_student_but_not_the_teacher() {
    let (mut state, ds) = mini_state(Variant::DreamLatent);
    state.config.learning_rate = 0.0;
    let id = state.teacher.params.ids().next().unwrap();
    state.teacher.params.get_mut(id).data_mut()[0] += 1.0;
    let (policy, tactile, teacher) = (state.params.policy.flat(), state.params.tactile.flat(), state.teacher.params.flat());
    let b = first_batch(&state, &ds, 2);
    state.train_step(&b).unwrap();
    assert_eq!(state.params.policy.flat(), policy);
    assert_eq!(state.params.tactile.flat(), tactile);
    assert_ne!(state.teacher.params.flat(), teacher);
}

#[test]
fn training_is_deterministic() {
    let ds = tiny_dataset(2, 3);
    let run = || train(mini_train(Variant::DreamLatent), &ds, RunOptions::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.state.params.policy.flat(), b.state.params.policy.flat());
}

#[test]
fn no_dream_and_zero_weight_dream_share_the_first_step() {
    let ds = tiny_dataset(2, 3);
    let nd = TrainState::new(mini_train(Variant::NoDream), &ds.schema).unwrap();
    let mut cfg = mini_train(Variant::DreamLatent);
    cfg.loss.lambda_force = 0.0;
    cfg.loss.lambda_tactile = 0.0;
    let dl = TrainState::new(cfg, &ds.schema).unwrap();
    let b = first_batch(&nd, &ds, 2);
    let (bn, gn, _) = nd.loss_and_grads(&b).unwrap();
    let (bd, gd, _) = dl.loss_and_grads(&b).unwrap();
    assert_eq!(bn.bc(), bd.bc());
    assert_eq!(bn.total, bd.total);
    for id in nd.params.policy.ids() {
        let name = nd.params.policy.name(id);
        let other = dl.params.policy.find(name).unwrap();
        assert_eq!(nd.params.policy.get(id), dl.params.policy.get(other), "{name}");
        let a = gn.param(nd.params.policy.key(id));
        let b = gd.param(dl.params.policy.key(other));
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn non_finite_loss_is_reported() {
    let (mut state, ds) = mini_state(Variant::DreamLatent);
    let id = state.params.policy.ids().next().unwrap();
    state.params.policy.get_mut(id).data_mut().fill(f64::NAN);
    let b = first_batch(&state, &ds, 2);
    assert!(matches!(state.train_step(&b), Err(HtdError::NonFinite { .. })));
}

#[test]
fn mismatched_horizon_is_rejected() {
    let (state, ds) = mini_state(Variant::DreamLatent);
    let b = htd_core::data::assemble_batch(&ds, &[(0, 0)], 2, 2).unwrap();
    assert!(matches!(state.evaluate(&b), Err(HtdError::Shape(_))));
}

#[test]
fn gradients_match_finite_differences() {
    for v in [Variant::DreamLatent, Variant::DreamRaw] {
        let (mut state, ds) = mini_state(v);
        let b = first_batch(&state, &ds, 2);
        for term in [Term::Bc, Term::Force, Term::Tactile, Term::Total] {
            let r = common::grad_check(&mut state, &b, term, 1e-5);
            assert!(r.max_rel < 1e-3, "{v} {term:?}: {r:?}");
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ds = tiny_dataset(2, 3);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mini_train(Variant::DreamLatent);
    cfg.steps = 3;
    let out = train(cfg, &ds, RunOptions::default()).unwrap();
    let ck = dir.path().join("ck");
    save_checkpoint(&out.state, Some(&ds.stats), &ck).unwrap();
    let (back, manifest) = load_checkpoint(&ck).unwrap();
    assert_eq!(manifest.step, 3);
    assert_eq!(manifest.normalization.as_ref(), Some(&ds.stats));
    assert_eq!(back.config, out.state.config);
    assert_eq!(back.params.policy.flat(), out.state.params.policy.flat());
    assert_eq!(back.params.tactile.flat(), out.state.params.tactile.flat());
    assert_eq!(back.teacher.params.flat(), out.state.teacher.params.flat());
    assert_eq!(back.rng, out.state.rng);
}

#[test]
fn resumed_run_reproduces_the_uninterrupted_one() {
    let ds = tiny_dataset(2, 3);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mini_train(Variant::DreamLatent);
    cfg.steps = 6;
    cfg.checkpoint_every = 3;
    let full = train(cfg, &ds, RunOptions { out_dir: Some(dir.path()), ..Default::default() }).unwrap();

    let (mut mid, _) = load_checkpoint(&dir.path().join("checkpoint_000003")).unwrap();
    assert_eq!(mid.step, 3);
    let b = sample_training_batch(&ds, mid.config.batch_size, 4, 4, &mut mid.rng).unwrap();
    let next = mid.train_step(&b).unwrap().breakdown;
    assert_eq!(next, full.history[3]);

    let (mid, _) = load_checkpoint(&dir.path().join("checkpoint_000003")).unwrap();
    let rest = resume(mid, &ds, RunOptions::default()).unwrap();
    assert_eq!(rest.history[..], full.history[3..]);
    assert_eq!(rest.state.params.policy.flat(), full.state.params.policy.flat());
}

#[test]
fn run_directory_holds_metrics_checkpoint_and_summary() {
    let ds = tiny_dataset(2, 3);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: TrainConfig = mini_train(Variant::DreamLatent);
    cfg.log_every = 2;
    let mut seen = Vec::new();
    let mut cb = |s: u64, _: &htd_core::training::StepReport| seen.push(s);
    train(cfg, &ds, RunOptions { out_dir: Some(dir.path()), on_step: Some(&mut cb) }).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let steps: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, vec!["1", "2", "4"]);
    assert!(metrics.lines().next().unwrap().starts_with("step,"));
    assert!(dir.path().join(CHECKPOINT_DIR).join("manifest.json").exists());
    let s = htd_core::eval::RunSummary::read(dir.path()).unwrap();
    assert_eq!(s.steps, 4);
    assert!(s.dream_force_mae.is_some() && s.collapse_metric.is_some());
}

#[test]
fn training_rejects_other_schemas() {
    let ds = tiny_dataset(2, 3);
    let mut other = ds.clone();
    other.schema.image_height = 8;
    let state = TrainState::new(mini_train(Variant::NoDream), &ds.schema).unwrap();
    assert!(matches!(resume(state, &other, RunOptions::default()), Err(HtdError::Schema(_))));
}

#[test]
fn teacher_graph_has_no_trainable_leaves() {
    let (state, ds) = mini_state(Variant::DreamLatent);
    let b = first_batch(&state, &ds, 1);
    let mut g = Graph::new();
    let z = state.latent_targets(&mut g, &b);
    assert!(!g.is_tracked(z));
}
