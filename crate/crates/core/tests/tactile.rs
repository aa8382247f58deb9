use htd_core::params::{Init, ParamStore, StoreTag};
use htd_core::schema::TACTILE_PER_HAND;
use htd_core::tactile::{ema_update, Region, RegionLayout, TactileEncoder, TactileEncoderConfig, TeacherEncoderState};
use proptest::prelude::*;

#[test]
fn layout_has_seventeen_patches_and_the_expected_region_sizes() {
    let layout = RegionLayout::default();
    assert_eq!(layout.patches.len(), 17);
    let dims: Vec<usize> = Region::ALL.iter().map(|&r| layout.region_range(r).len()).collect();
    assert_eq!(dims, vec![210, 185, 185, 185, 185, 112]);
    assert_eq!(dims.iter().sum::<usize>(), TACTILE_PER_HAND);
    let mut offset = 0;
    for p in &layout.patches {
        assert_eq!(p.offset, offset);
        offset += p.len();
    }
}

#[test]
fn decompose_rejects_wrong_length() {
    let layout = RegionLayout::default();
    assert!(layout.decompose(&vec![0.0; TACTILE_PER_HAND - 1]).is_err());
}

#[test]
fn encoder_output_has_one_latent_per_region() {
    let mut store = ParamStore::new(StoreTag::Tactile, 1);
    let cfg = TactileEncoderConfig { latent_dim: 4, conv_channels: 2, fusion_hidden: 8, ..Default::default() };
    let enc = TactileEncoder::new(&mut store, &cfg, &RegionLayout::default()).unwrap();
    let z = enc.encode_hand(&store, &vec![0.5; TACTILE_PER_HAND]).unwrap();
    assert_eq!(z.len(), 6);
    assert!(z.iter().all(|r| r.len() == 4 && r.iter().all(|v| v.is_finite())));
}

fn pair(seed: u64) -> (ParamStore, ParamStore) {
    let mut a = ParamStore::new(StoreTag::Tactile, seed);
    a.register("w", &[3, 4], Init::Normal(1.0));
    a.register("b", &[5], Init::Uniform(2.0));
    let mut b = ParamStore::new(StoreTag::Tactile, seed + 1);
    b.register("w", &[3, 4], Init::Normal(1.0));
    b.register("b", &[5], Init::Uniform(2.0));
    (a, b)
}

#[test]
fn teacher_starts_as_a_copy() {
    let (student, _) = pair(3);
    let t = TeacherEncoderState::from_student(&student, 0.99).unwrap();
    assert_eq!(t.params.flat(), student.flat());
    assert_eq!(t.params.tag(), StoreTag::Teacher);
}

#[test]
fn ema_rejects_decay_outside_unit_interval() {
    let (student, _) = pair(3);
    for alpha in [0.0, 1.0, -0.5, f64::NAN] {
        assert!(TeacherEncoderState::from_student(&student, alpha).is_err());
    }
}

#[test]
fn ema_update_matches_the_formula_exactly() {
    let (mut teacher, student) = pair(7);
    let before = teacher.flat();
    ema_update(&mut teacher, &student, 0.9).unwrap();
    let expected: Vec<f64> = before.iter().zip(student.flat()).map(|(t, s)| 0.9 * t + (1.0 - 0.9) * s).collect();
    assert_eq!(teacher.flat(), expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn decompose_then_reassemble_is_identity(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..TACTILE_PER_HAND).map(|_| rng.random_range(-10.0..10.0)).collect();
        let layout = RegionLayout::default();
        let groups = layout.decompose(&raw).unwrap();
        prop_assert_eq!(groups.len(), 6);
        prop_assert_eq!(layout.reassemble(&groups).unwrap(), raw);
    }

    #[test]
    fn frozen_student_distance_shrinks_by_alpha(alpha in 0.5f64..0.999, seed in 0u64..1000) {
        let (mut teacher, student) = pair(seed);
        let mut prev = teacher.distance(&student);
        for _ in 0..20 {
            ema_update(&mut teacher, &student, alpha).unwrap();
            let d = teacher.distance(&student);
            prop_assert!(((d / prev) - alpha).abs() <= 1e-6 * alpha);
            prev = d;
        }
    }
}
