mod common;

use std::fs;

use htd_core::data::Dataset;
use htd_core::eval::{
    ablation_report, collapse_metric, export_latent_heatmap, heatmap_grid, read_heatmap_csv, rollout_dream_trace,
    DreamChunk, DreamSource, LatentTargets, OracleDreams, PolicyDreams, RunSummary, ZeroDreams,
};
use htd_core::policy::Variant;
use htd_core::training::{LossBreakdown, TrainState};
use htd_core::Result;

/// Encodes the chunk start and lead time in the dreamed force.
struct Tagged;

impl DreamSource for Tagged {
    fn dream(&self, ds: &Dataset, _e: usize, t: usize, tau: usize) -> Result<DreamChunk> {
        let w = ds.schema.hand_dim();
        Ok(DreamChunk { force: (1..=tau).map(|l| vec![(t * 100 + l) as f64; w]).collect(), latents: None })
    }
}

#[test]
fn oracle_has_zero_error_and_unit_similarity() {
    let (state, ds) = common::mini_state(Variant::DreamLatent);
    let targets = LatentTargets { encoder: state.policy.tactile_encoder(), params: state.target_encoder_params() };
    let trace = rollout_dream_trace(&OracleDreams { targets: Some(targets) }, &ds, 1, 4, 4, Some(targets)).unwrap();
    assert_eq!(trace.force_mae, [0.0, 0.0]);
    assert_eq!(trace.mean_similarity(), Some(1.0));
}

#[test]
fn zero_predictor_error_is_the_mean_absolute_force() {
    let ds = common::tiny_dataset(1, 4);
    let ep = &ds.episodes[0];
    let (tau, len, j) = (4, ep.len(), ds.schema.hand_joints);
    let trace = rollout_dream_trace(&ZeroDreams { latent_width: None }, &ds, 0, tau, tau, None).unwrap();
    let last = (len - 1 - tau) / tau * tau + tau;
    let mut expected = [0.0; 2];
    for k in 1..=last {
        let f = ep.hand_force_at(&ds.schema, k);
        for h in 0..2 {
            expected[h] += f[h * j..(h + 1) * j].iter().map(|v| (*v as f64).abs()).sum::<f64>();
        }
    }
    for h in 0..2 {
        expected[h] /= (last * j) as f64;
        assert!((trace.force_mae[h] - expected[h]).abs() < 1e-12, "{h}: {} vs {}", trace.force_mae[h], expected[h]);
    }
    assert!(trace.mean_similarity().is_none());
}

#[test]
fn stride_equal_to_tau_tiles_the_episode() {
    let ds = common::tiny_dataset(1, 4);
    let tau = 4;
    let trace = rollout_dream_trace(&Tagged, &ds, 0, tau, tau, None).unwrap();
    let steps: Vec<usize> = trace.steps.iter().map(|s| s.step).collect();
    assert_eq!(steps, (1..=12).collect::<Vec<_>>());
    for s in &trace.steps {
        let t = (s.step - 1) / tau * tau;
        assert_eq!(s.chunk_start, t);
        assert_eq!(s.pred_force[0], (t * 100 + s.step - t) as f64);
        let truth = ds.episodes[0].hand_force_at(&ds.schema, s.step);
        assert_eq!(s.true_force, truth.iter().map(|&v| v as f64).collect::<Vec<_>>());
    }
}

#[test]
fn overlapping_chunks_keep_the_latest_prediction() {
    let ds = common::tiny_dataset(1, 4);
    let (stride, tau) = (2, 5);
    let trace = rollout_dream_trace(&Tagged, &ds, 0, stride, tau, None).unwrap();
    let len = ds.episodes[0].len();
    for s in &trace.steps {
        let t = (0..s.step).rev().find(|t| t % stride == 0 && t + tau < len).unwrap();
        assert_eq!(s.chunk_start, t, "step {}", s.step);
        assert_eq!(s.pred_force[0], (t * 100 + s.step - t) as f64);
    }
}

#[test]
fn rollout_rejects_short_episodes_and_zero_stride() {
    let ds = common::tiny_dataset(1, 4);
    let len = ds.episodes[0].len();
    assert!(rollout_dream_trace(&Tagged, &ds, 0, 1, len, None).is_err());
    assert!(rollout_dream_trace(&Tagged, &ds, 0, 0, 2, None).is_err());
    assert!(rollout_dream_trace(&Tagged, &ds, 5, 1, 2, None).is_err());
}

#[test]
fn policy_dreams_align_with_the_model_horizon() {
    let (state, ds) = common::mini_state(Variant::DreamLatent);
    let source = PolicyDreams { policy: &state.policy, params: &state.params };
    let targets = LatentTargets { encoder: state.policy.tactile_encoder(), params: state.target_encoder_params() };
    let trace = rollout_dream_trace(&source, &ds, 0, 4, 4, Some(targets)).unwrap();
    let sim = trace.mean_similarity().unwrap();
    assert!(sim > 0.0 && sim <= 1.0);
    assert!(trace.force_mae.iter().all(|m| m.is_finite() && *m > 0.0));
    assert!(rollout_dream_trace(&source, &ds, 0, 4, 3, None).is_err());
}

#[test]
fn heatmap_grid_is_near_square() {
    assert_eq!(heatmap_grid(64), (8, 8));
    assert_eq!(heatmap_grid(16), (4, 4));
    assert_eq!(heatmap_grid(32), (4, 8));
    assert_eq!(heatmap_grid(7), (1, 7));
}

fn decode_png(path: &std::path::Path) -> (u32, u32, Vec<u8>) {
    let dec = png::Decoder::new(std::io::BufReader::new(fs::File::open(path).unwrap()));
    let mut reader = dec.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.color_type, png::ColorType::Grayscale);
    buf.truncate(info.buffer_size());
    (info.width, info.height, buf)
}

#[test]
fn constant_heatmap_is_mid_gray() {
    let dir = tempfile::tempdir().unwrap();
    export_latent_heatmap(&[0.3; 16], dir.path(), "flat").unwrap();
    let (w, h, px) = decode_png(&dir.path().join("flat.png"));
    assert_eq!((w, h), (64, 64));
    assert!(px.iter().all(|&p| p == 128));
}

#[test]
fn brightest_cell_is_the_largest_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut z: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
    z[9] = 5.0;
    z[2] = -5.0;
    export_latent_heatmap(&z, dir.path(), "z").unwrap();
    let (w, _, px) = decode_png(&dir.path().join("z.png"));
    let cell = |i: usize| px[(i / 4 * 16 + 8) * w as usize + (i % 4) * 16 + 8];
    assert_eq!(cell(9), 255);
    assert_eq!(cell(2), 0);
    assert_eq!(read_heatmap_csv(&dir.path().join("z.csv")).unwrap(), z);
}

#[test]
fn collapse_metric_hand_values() {
    let labels: Vec<[bool; 2]> = (0..8).map(|i| [i < 2, i >= 6]).collect();
    let indicator: Vec<Vec<f64>> =
        labels.iter().map(|c| (0..12).map(|s| if c[s / 6] { 1.0 } else { 0.0 }).collect()).collect();
    assert!((collapse_metric(&indicator, &labels).unwrap() - 0.75).abs() < 1e-12);
    let constant = vec![vec![1.0; 12]; 8];
    assert_eq!(collapse_metric(&constant, &labels).unwrap(), 0.0);
    assert!(collapse_metric(&constant, &vec![[false, false]; 8]).is_err());
}

fn summary(variant: Variant, total: f64) -> RunSummary {
    RunSummary {
        variant,
        steps: 10,
        initial: LossBreakdown { total: 2.0, ..Default::default() },
        last: LossBreakdown { total, act_hand: total, ..Default::default() },
        dream_force_mae: variant.dreams().then_some(0.5),
        latent_similarity: None,
        collapse_metric: None,
    }
}

#[test]
fn ablation_rows_reflect_the_logs() {
    let a = summary(Variant::NoDream, 1.0);
    let b = summary(Variant::DreamLatent, 1.0);
    let report = ablation_report(&[b.clone(), a.clone()]);
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].0, Variant::NoDream);
    assert_eq!(report.missing, vec![Variant::NoTouch, Variant::DreamRaw]);
    let text = report.render();
    let lines: Vec<&str> = text.lines().collect();
    let cols = |l: &str| l.split('\t').skip(2).take(4).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(cols(lines[1]), cols(lines[2]));
    assert_eq!(lines.last().unwrap(), &"# missing: no-touch, dream-raw");

    let all: Vec<RunSummary> = Variant::ALL.iter().map(|&v| summary(v, 1.0)).collect();
    assert!(ablation_report(&all).missing.is_empty());
    assert!(!ablation_report(&all).render().contains("# missing"));
}

#[test]
fn run_summary_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let s = summary(Variant::DreamRaw, 0.123456789);
    s.write(dir.path()).unwrap();
    assert_eq!(RunSummary::read(dir.path()).unwrap(), s);
}

#[test]
fn untrained_state_summary_covers_every_episode() {
    let (state, ds) = common::mini_state(Variant::DreamLatent);
    let s = htd_core::training::summarize(&state, &ds, &[]).unwrap();
    assert_eq!(s.steps, 0);
    assert!(s.dream_force_mae.unwrap() > 0.0);
    let blind = TrainState::new(common::mini_train(Variant::NoTouch), &ds.schema).unwrap();
    let s = htd_core::training::summarize(&blind, &ds, &[]).unwrap();
    assert!(s.dream_force_mae.is_none() && s.collapse_metric.is_none());
}
