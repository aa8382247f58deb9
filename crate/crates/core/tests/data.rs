mod common;

use std::fs;

use htd_core::data::{
    assemble_batch, read_dataset, read_manifest, sample_training_batch, valid_indices, valid_starts, write_dataset,
    Dataset, MANIFEST_FILE,
};
use htd_core::schema::{TACTILE_BOTH_HANDS, TACTILE_PER_HAND};
use htd_core::HtdError;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let ds = common::tiny_dataset(3, 11);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.schema, ds.schema);
    assert_eq!(back.stats, ds.stats);
    for (a, b) in ds.episodes.iter().zip(&back.episodes) {
        assert_eq!(a.meta, b.meta);
        assert_eq!(bits(&a.images), bits(&b.images));
        assert_eq!(bits(&a.body), bits(&b.body));
        assert_eq!(bits(&a.hand_proprio), bits(&b.hand_proprio));
        assert_eq!(bits(&a.hand_force), bits(&b.hand_force));
        assert_eq!(bits(&a.tactile), bits(&b.tactile));
        assert_eq!(bits(&a.action), bits(&b.action));
        assert_eq!(a.contact, b.contact);
        assert_eq!(a.phase, b.phase);
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = common::tiny_dataset(2, 5);
    let b = common::tiny_dataset(2, 5);
    let c = common::tiny_dataset(2, 6);
    assert_eq!(a, b);
    assert_ne!(a.episodes[0].tactile, c.episodes[0].tactile);
}

#[test]
fn truncated_blob_is_rejected() {
    let ds = common::tiny_dataset(1, 1);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    let blob = dir.path().join(&manifest.episodes[0].file);
    let mut bytes = fs::read(&blob).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&blob, bytes).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(HtdError::Data(_))));
}

#[test]
fn manifest_with_unknown_version_is_rejected() {
    let ds = common::tiny_dataset(1, 1);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    json["schema_version"] = serde_json::json!(999);
    fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
    assert!(read_manifest(dir.path()).is_err());
    assert!(read_dataset(dir.path()).is_err());
}

#[test]
fn manifest_describes_layout() {
    let ds = common::tiny_dataset(1, 1);
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(&ds, dir.path()).unwrap();
    assert_eq!(m.record_len, ds.schema.record_len());
    assert_eq!(m.region_layout.patches.len(), 17);
    let fields: usize = m.record_fields.iter().map(|f| f.len()).sum();
    assert_eq!(fields, m.record_len);
    assert!(m.record_fields.iter().any(|f| f.len() == TACTILE_BOTH_HANDS));
}

#[test]
fn window_boundary_is_exact() {
    let ds = common::tiny_dataset(1, 2);
    let len = ds.episodes[0].len();
    for (h, tau) in [(4, 4), (3, 6), (6, 2)] {
        let last = len - h.max(tau) - 1;
        assert_eq!(valid_starts(&ds.episodes[0], h, tau), last + 1);
        assert!(assemble_batch(&ds, &[(0, last)], h, tau).is_ok());
        assert!(assemble_batch(&ds, &[(0, last + 1)], h, tau).is_err());
    }
}

#[test]
fn batch_targets_are_the_next_steps() {
    let ds = common::tiny_dataset(2, 4);
    let s = &ds.schema;
    let (h, tau) = (3, 5);
    let index = [(1, 2), (0, 0)];
    let b = assemble_batch(&ds, &index, h, tau).unwrap();
    let a = s.actions().total_dim();
    for (i, &(e, t)) in index.iter().enumerate() {
        let ep = &ds.episodes[e];
        for l in 1..=h {
            let row = &b.actions.data()[(i * h + l - 1) * a..(i * h + l) * a];
            assert_eq!(row, ds.stats.action.normalize_row(ep.action_at(s, t + l)).as_slice());
        }
        for l in 1..=tau {
            let hd = s.hand_dim();
            let row = &b.future_force.data()[(i * tau + l - 1) * hd..(i * tau + l) * hd];
            assert_eq!(row, ds.stats.hand_force.normalize_row(ep.hand_force_at(s, t + l)).as_slice());
            let tr = &b.future_tactile.data()[(i * tau + l - 1) * TACTILE_BOTH_HANDS..(i * tau + l) * TACTILE_BOTH_HANDS];
            assert_eq!(tr, ds.stats.tactile.normalize_row(ep.tactile_at(t + l)).as_slice());
        }
        let cur = &b.obs.hand_force.data()[i * s.hand_dim()..(i + 1) * s.hand_dim()];
        assert_eq!(cur, ds.stats.hand_force.normalize_row(ep.hand_force_at(s, t)).as_slice());
    }
    assert_eq!(b.horizon(), h);
    assert_eq!(b.dream_horizon(), tau);
    assert_eq!(b.obs.images.len(), 4);
    assert_eq!(b.obs.images[0].shape(), &[2, 3, s.image_height, s.image_width]);
}

#[test]
fn episodes_too_short_for_the_window_are_an_error() {
    let ds = common::tiny_dataset(1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let len = ds.episodes[0].len();
    assert!(valid_indices(&ds.episodes, len, 1).is_empty());
    assert!(sample_training_batch(&ds, 2, len, 1, &mut rng).is_err());
}

#[test]
fn hands_out_of_contact_carry_only_noise() {
    let ds = common::tiny_dataset(4, 9);
    for ep in &ds.episodes {
        for t in 0..ep.len() {
            let frame = ep.tactile_at(t);
            for hand in 0..2 {
                let peak = frame[hand * TACTILE_PER_HAND..(hand + 1) * TACTILE_PER_HAND].iter().cloned().fold(0.0f32, f32::max);
                if !ep.contact[t][hand] {
                    assert!(peak < htd_core::data::TACTILE_NOISE_MAX, "t = {t}, hand {hand}, peak {peak}");
                }
            }
        }
        assert!(ep.contact.iter().any(|c| c[0] || c[1]));
    }
}

#[test]
fn normalized_channels_are_standardized() {
    let ds: Dataset = common::tiny_dataset(4, 10);
    let s = &ds.schema;
    let rows: Vec<Vec<f64>> = ds
        .episodes
        .iter()
        .flat_map(|ep| (0..ep.len()).map(|t| ds.stats.body.normalize_row(ep.body_at(s, t))).collect::<Vec<_>>())
        .collect();
    for c in 0..s.body_dim {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
        assert!(var < 1e-9 || (var - 1.0).abs() < 1e-6, "channel {c} var {var}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn sampled_indices_are_always_valid(seed in any::<u64>(), h in 1usize..8, tau in 1usize..8) {
        let ds = common::tiny_dataset(2, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = sample_training_batch(&ds, 8, h, tau, &mut rng).unwrap();
        for &(e, t) in &b.index {
            prop_assert!(t + h.max(tau) < ds.episodes[e].len());
        }
    }
}
