use htd_lbc::cases::{parse_cases, run_cases, BUNDLED_CASES};
use htd_lbc::reward::{reward_breakdown, RewardConfig};
use htd_lbc::sampling::{sample_domain_randomization, Range};
use htd_lbc::state::{PROPRIO_DIM, STUDENT_OBS_DIM};
use htd_lbc::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type M3 = [[f64; 3]; 3];

fn matmul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

/// `Rx(r) Ry(p) Rz(y)` built from elementary rotation matrices.
fn matrix_xyz(r: f64, p: f64, y: f64) -> M3 {
    let (sr, cr) = r.sin_cos();
    let (sp, cp) = p.sin_cos();
    let (sy, cy) = y.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
    let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    matmul(&matmul(&rx, &ry), &rz)
}

/// Rotation matrix of a quaternion by rotating the basis vectors with
/// `q v q*`.
fn matrix_of(q: &Quat) -> M3 {
    let conj = Quat([q.0[0], -q.0[1], -q.0[2], -q.0[3]]);
    let mut m = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut e = [0.0; 4];
        e[j + 1] = 1.0;
        let v = q.mul(&Quat(e)).mul(&conj).0;
        for i in 0..3 {
            m[i][j] = v[i + 1];
        }
    }
    m
}

fn euler_from_matrix(m: &M3) -> (f64, f64, f64) {
    (-m[1][2].atan2(m[2][2]), m[0][2].clamp(-1.0, 1.0).asin(), -m[0][1].atan2(m[0][0]))
}

#[test]
fn bundled_cases_pass() {
    let file = parse_cases(BUNDLED_CASES).unwrap();
    assert!(file.cases.len() >= 20);
    let results = run_cases(&file);
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    for name in ["feet_force_950n", "pitch_0_2_intrinsic", "nominal_stance"] {
        assert!(results.iter().any(|r| r.name == name));
    }
}

#[test]
fn corrupted_case_fails_by_name() {
    let text = BUNDLED_CASES.replace("\"feet_force.contribution\": -1.2", "\"feet_force.contribution\": -1.3");
    assert_ne!(text, BUNDLED_CASES);
    let results = run_cases(&parse_cases(&text).unwrap());
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    assert_eq!(failed, vec!["feet_force_950n"]);
}

#[test]
fn empty_case_file_is_rejected() {
    assert!(parse_cases("{\"cases\": []}").is_err());
    assert!(parse_cases("not json").is_err());
}

#[test]
fn pitch_case_matches_matrix_oracle() {
    let q = Quat::from_intrinsic_xyz(0.0, 0.2, 0.0);
    let m = matrix_of(&q);
    let want = matrix_xyz(0.0, 0.2, 0.0);
    for i in 0..3 {
        for j in 0..3 {
            assert!((m[i][j] - want[i][j]).abs() < 1e-12);
        }
    }
    let (_, p, _) = euler_from_matrix(&m);
    let state = RobotState { torso_quat: q, ..Default::default() };
    let e = tracking_errors(&[(state, Command::default())]).unwrap();
    assert!((e.e_p - p).abs() < 1e-12);
    assert!((e.e_p - 0.2).abs() < 1e-12);
}

#[test]
fn nominal_and_force_cases() {
    let cfg = RewardConfig::default();
    let b = reward_breakdown(&RobotState::default(), &Command::default(), &cfg).unwrap();
    assert_eq!(b.total, 6.0);
    let mut s = RobotState::default();
    s.feet[0].force = [0.0, 0.0, 950.0];
    let b = reward_breakdown(&s, &Command::default(), &cfg).unwrap();
    let t = b.term("feet_force").unwrap();
    assert_eq!(t.value, 400.0);
    assert!((t.contribution() + 1.2).abs() < 1e-12);
    let mut s = RobotState::default();
    s.feet[1].force = [60.0, 0.0, 10.0];
    let b = reward_breakdown(&s, &Command::default(), &cfg).unwrap();
    assert_eq!(b.term("feet_stumble").unwrap().contribution(), -2.0);
}

#[test]
fn non_unit_inputs_are_rejected() {
    let cfg = RewardConfig::default();
    let s = RobotState { torso_quat: Quat([1.0, 0.1, 0.0, 0.0]), ..Default::default() };
    assert!(matches!(reward_breakdown(&s, &Command::default(), &cfg), Err(LbcError::NonUnitQuaternion { .. })));
    let s = RobotState { projected_gravity: [0.0, 0.0, -0.9], ..Default::default() };
    assert!(reward_breakdown(&s, &Command::default(), &cfg).is_err());
    assert!(matches!(tracking_errors(&[]), Err(LbcError::EmptyTrajectory)));
}

#[test]
fn observation_layouts() {
    assert_eq!(PROPRIO_DIM, 51);
    assert_eq!(STUDENT_OBS_DIM, 3 * 51 + 7);
    assert_eq!(assemble_proprio(&RobotState { projected_gravity: [0.0; 3], ..Default::default() }), [0.0; 51]);
    let mut s = RobotState::default();
    s.q[0] = 1.0;
    let p = assemble_proprio(&s);
    let lit: Vec<usize> = (0..51).filter(|&i| p[i] == 1.0).collect();
    assert_eq!(lit, vec![6]);
    assert_eq!(p, assemble_proprio(&s));

    let frames: Vec<Vec<f64>> = (0..4).map(|k| vec![k as f64; PROPRIO_DIM]).collect();
    let cmd = Command { vx: 0.3, ..Default::default() };
    let obs = assemble_student_obs(&frames[0..2], &frames[2], &cmd).unwrap();
    assert_eq!(obs.len(), STUDENT_OBS_DIM);
    assert_eq!(&obs[153..], &cmd.to_array());
    let shifted = assemble_student_obs(&frames[1..3], &frames[3], &cmd).unwrap();
    assert_eq!(&shifted[..102], &obs[51..153]);
    assert!(assemble_student_obs(&frames[0..1], &frames[2], &cmd).is_err());
    let same = assemble_student_obs(&[frames[1].clone(), frames[1].clone()], &frames[1], &cmd).unwrap();
    assert!(same[..153].iter().all(|&v| v == 1.0));
}

#[test]
fn dagger_loss_values() {
    let mut s = [0.0; 15];
    s[0] = 3.0;
    s[1] = 4.0;
    assert_eq!(dagger_loss(&s, &[0.0; 15]).unwrap(), 25.0);
    assert_eq!(dagger_loss(&s, &s).unwrap(), 0.0);
    assert!(dagger_loss(&s[..14], &[0.0; 15]).is_err());
}

#[test]
fn command_sampler_bounds_and_mean() {
    let ranges = CommandRanges::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let mut sum_h = 0.0;
    for _ in 0..n {
        let c = sample_command(&mut rng, &ranges).unwrap();
        assert!(ranges.contains(&c));
        assert!(c.vx.abs() <= 0.5);
        sum_h += c.height;
    }
    // uniform on [0.35, 0.8]: std of the mean is 0.45 / sqrt(12 n)
    let sigma = 0.45 / (12.0 * n as f64).sqrt();
    assert!((sum_h / n as f64 - 0.575).abs() < 3.0 * sigma);
}

#[test]
fn sampler_edge_cases() {
    let mut r = CommandRanges::default();
    r.height = Range::new(0.6, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        assert_eq!(sample_command(&mut rng, &r).unwrap().height, 0.6);
    }
    r.vx = Range::new(0.5, -0.5);
    assert!(matches!(sample_command(&mut rng, &r), Err(LbcError::InvertedRange { name: "vx", .. })));
}

#[test]
fn randomization_bounds_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100_000 {
        let d = sample_domain_randomization(&mut rng);
        assert!((0.0..=0.005).contains(&d.restitution));
        assert!(d.joint_pos_noise.iter().all(|v| v.abs() <= 0.01));
    }
    let a = sample_domain_randomization(&mut ChaCha8Rng::seed_from_u64(9));
    let b = sample_domain_randomization(&mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
}

fn arb_state() -> impl Strategy<Value = (RobotState, Command)> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        prop::array::uniform3(-1.0f64..1.0),
        (-3.0f64..3.0, -1.4f64..1.4, -3.0f64..3.0),
        (-3.0f64..3.0, -1.4f64..1.4, -3.0f64..3.0),
        prop::collection::vec(-2.0f64..2.0, 15),
        prop::collection::vec(-900.0f64..900.0, 6),
        0.3f64..0.9,
        (-0.5f64..0.5, -1.5f64..1.5, -0.7f64..0.7, -0.5f64..1.5, -1.5f64..1.5),
    )
        .prop_map(|(v, w, t, p, q, f, h, (vx, wz, roll, pitch, yaw))| {
            let mut s = RobotState {
                base_lin_vel: v,
                base_ang_vel: w,
                torso_quat: Quat::from_intrinsic_xyz(t.0, t.1, t.2),
                pelvis_quat: Quat::from_intrinsic_xyz(p.0, p.1, p.2),
                base_height: h,
                ..Default::default()
            };
            s.q.copy_from_slice(&q);
            s.qd.copy_from_slice(&q);
            s.torque.copy_from_slice(&q);
            s.feet[0].force = [f[0], f[1], f[2]];
            s.feet[1].force = [f[3], f[4], f[5]];
            s.projected_gravity = s.pelvis_quat.projected_gravity();
            (s, Command { vx, vy: 0.0, wz, height: 0.6, roll, pitch, yaw })
        })
}

proptest! {
    #[test]
    fn breakdown_is_consistent((s, c) in arb_state()) {
        let b = reward_breakdown(&s, &c, &RewardConfig::default()).unwrap();
        let recomputed: f64 = b.terms.iter().map(|t| t.weight * t.value).sum();
        prop_assert!((b.total - recomputed).abs() <= 1e-12 * recomputed.abs().max(1.0));
        for t in &b.terms {
            prop_assert!(t.value.is_finite());
        }
        for t in &b.terms[..6] {
            prop_assert!(t.value > 0.0 && t.value <= 1.0);
        }
        let e = step_errors(&s, &c).unwrap();
        for v in [e.e_v, e.e_w, e.e_h, e.e_y, e.e_p, e.e_r] {
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn euler_round_trip_matches_matrix_oracle(r in -3.0f64..3.0, p in -1.5f64..1.5, y in -3.0f64..3.0) {
        let q = Quat::from_intrinsic_xyz(r, p, y);
        let (r1, p1, y1) = q.to_intrinsic_xyz();
        let (r2, p2, y2) = euler_from_matrix(&matrix_xyz(r, p, y));
        prop_assert!((r1 - r2).abs() < 1e-9 && (p1 - p2).abs() < 1e-9 && (y1 - y2).abs() < 1e-9);
        prop_assert!((r1 - r).abs() < 1e-9 && (p1 - p).abs() < 1e-9 && (y1 - y).abs() < 1e-9);
        let g = q.projected_gravity();
        let m = matrix_of(&q);
        for i in 0..3 {
            prop_assert!((g[i] + m[2][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn wrapped_angles_stay_in_range(a in -50.0f64..50.0) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        let k = ((a - w) / (2.0 * std::f64::consts::PI)).round();
        prop_assert!((a - w - k * 2.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn exact_tracking_gives_zero_error(vx in -0.5f64..0.5, h in 0.35f64..0.8, pitch in -0.5f64..1.5, yaw in -1.5f64..1.5) {
        let s = RobotState {
            base_lin_vel: [vx, 0.0, 0.0],
            base_height: h,
            torso_quat: Quat::from_intrinsic_xyz(0.0, pitch, yaw),
            ..Default::default()
        };
        let c = Command { vx, height: h, pitch, yaw, ..Default::default() };
        let e = step_errors(&s, &c).unwrap();
        for v in [e.e_v, e.e_w, e.e_h, e.e_y, e.e_p, e.e_r] {
            prop_assert!(v < 1e-9);
        }
        let b = reward_breakdown(&s, &c, &RewardConfig::default()).unwrap();
        for t in &b.terms[..6] {
            prop_assert!((t.value - 1.0).abs() < 1e-12);
        }
    }
}
