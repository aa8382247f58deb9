//! Scripted contact demonstrations.
//!
//! Every episode runs approach -> contact -> grasp -> transport -> release on a
//! fixed fraction of its length. A scalar contact amplitude drives the tactile
//! bumps, joint forces and finger closure:
//!
//! | phase     | share | amplitude                      |
//! |-----------|-------|--------------------------------|
//! | approach  | 0.25  | 0                              |
//! | contact   | 0.15  | ramps 0.4 -> 1.0               |
//! | grasp     | 0.15  | 1                              |
//! | transport | 0.30  | 1                              |
//! | release   | 0.15  | `max(0, 1 - 2 p)`, p = progress |
//!
//! A hand is labelled in contact when the scenario uses it and the amplitude is
//! positive. Tactile cells outside a bump only carry noise below
//! [`TACTILE_NOISE_MAX`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HtdError, Result};
use crate::schema::{ModalitySchema, IMAGE_VIEWS, TACTILE_PER_HAND};
use crate::tactile::{Region, RegionLayout};

use super::episode::{Episode, EpisodeMeta, Phase, Scenario};

/// Exclusive upper bound of the uniform tactile noise.
pub const TACTILE_NOISE_MAX: f32 = 0.02;
/// Smallest tactile peak counted as a touch when scanning recorded frames.
pub const CONTACT_PEAK_THRESHOLD: f32 = 0.1;
const PHASE_ENDS: [f64; 5] = [0.25, 0.40, 0.55, 0.85, 1.0];
const BUMP_SIGMA: f64 = 1.2;
const MIXING_SEED: u64 = 0x5eed_b0d7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioWeight {
    pub scenario: Scenario,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub schema: ModalitySchema,
    pub episode_len: usize,
    pub scenario_mix: Vec<ScenarioWeight>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            schema: ModalitySchema::default(),
            episode_len: 48,
            scenario_mix: Scenario::ALL.iter().map(|&scenario| ScenarioWeight { scenario, weight: 1.0 }).collect(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.episode_len < 2 {
            return Err(HtdError::Config("episodes need at least two steps".into()));
        }
        let mut total = 0.0;
        for w in &self.scenario_mix {
            if !w.weight.is_finite() || w.weight < 0.0 {
                return Err(HtdError::Config(format!("scenario weight {} is negative or non-finite", w.weight)));
            }
            total += w.weight;
        }
        if total <= 0.0 {
            return Err(HtdError::Config("scenario weights sum to zero".into()));
        }
        Ok(())
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> Scenario {
        let total: f64 = self.scenario_mix.iter().map(|w| w.weight).sum();
        let mut u = rng.random::<f64>() * total;
        for w in &self.scenario_mix {
            if u < w.weight {
                return w.scenario;
            }
            u -= w.weight;
        }
        self.scenario_mix.iter().rev().find(|w| w.weight > 0.0).unwrap().scenario
    }
}

/// Phase and contact amplitude at step `t` of a `len`-step episode.
pub fn phase_profile(t: usize, len: usize) -> (Phase, f64) {
    let u = t as f64 / len as f64;
    let k = PHASE_ENDS.iter().position(|&e| u < e).unwrap_or(4);
    let start = if k == 0 { 0.0 } else { PHASE_ENDS[k - 1] };
    let progress = (u - start) / (PHASE_ENDS[k] - start);
    let phase = Phase::ALL[k];
    let amp = match phase {
        Phase::Approach => 0.0,
        Phase::Contact => 0.4 + 0.6 * progress,
        Phase::Grasp | Phase::Transport => 1.0,
        Phase::Release => (1.0 - 2.0 * progress).max(0.0),
    };
    (phase, amp)
}

/// Hands a scenario touches with.
pub fn scenario_hands(s: Scenario) -> [bool; 2] {
    match s {
        Scenario::PowerGrasp | Scenario::Pinch => [false, true],
        Scenario::BimanualLift => [true, true],
        Scenario::Push => [true, false],
    }
}

/// `(region, patch name)` pairs that receive bumps when the hand is in contact.
pub fn scenario_patches(s: Scenario) -> Vec<(Region, &'static str)> {
    let fingers = [Region::Thumb, Region::Index, Region::Middle, Region::Ring, Region::Pinky];
    match s {
        Scenario::PowerGrasp => {
            let mut v: Vec<_> = fingers.iter().flat_map(|&r| [(r, "tip"), (r, "palm_facing")]).collect();
            v.push((Region::Palm, "palm"));
            v
        }
        Scenario::Pinch => vec![(Region::Thumb, "tip"), (Region::Index, "tip")],
        Scenario::BimanualLift => {
            let mut v: Vec<_> = fingers.iter().map(|&r| (r, "palm_facing")).collect();
            v.push((Region::Palm, "palm"));
            v
        }
        Scenario::Push => vec![(Region::Palm, "palm")],
    }
}

/// Share of each hand joint engaged by a scenario; joints are ordered thumb
/// yaw, thumb pitch, index, middle, ring, pinky and repeat for larger hands.
fn joint_engagement(s: Scenario, j: usize) -> f64 {
    match s {
        Scenario::PowerGrasp | Scenario::BimanualLift => 1.0,
        Scenario::Pinch => {
            if j % 6 < 3 {
                1.0
            } else {
                0.0
            }
        }
        Scenario::Push => 0.3,
    }
}

struct Bump {
    hand: usize,
    offset: usize,
    rows: usize,
    cols: usize,
    r0: f64,
    c0: f64,
    gain: f64,
}

/// Generates `num_episodes` episodes; identical `(seed, config)` gives
/// identical output.
pub fn generate_synthetic_dataset(config: &GeneratorConfig, num_episodes: usize, seed: u64) -> Result<Vec<Episode>> {
    config.validate()?;
    if num_episodes == 0 {
        return Err(HtdError::Config("num_episodes must be at least 1".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let layout = RegionLayout::default();
    let mixing = mixing_matrix(config.schema.body_dim);
    (0..num_episodes)
        .map(|_| {
            let ep_seed: u64 = master.random();
            let scenario = config.pick(&mut master);
            Ok(generate_episode(config, &layout, &mixing, scenario, ep_seed))
        })
        .collect()
}

fn mixing_matrix(body_dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(MIXING_SEED);
    (0..body_dim * 22).map(|_| rng.random_range(-0.5..0.5)).collect()
}

struct Kinematics {
    hand_pos: [[f64; 3]; 2],
    hand_yaw: [f64; 2],
    object: [f64; 3],
    torso: [f64; 4],
    velocity: [f64; 3],
}

fn lerp3(a: [f64; 3], b: [f64; 3], u: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * u, a[1] + (b[1] - a[1]) * u, a[2] + (b[2] - a[2]) * u]
}

struct Script {
    scenario: Scenario,
    object: [f64; 3],
    goal: [f64; 3],
    rest: [[f64; 3]; 2],
    yaw0: [f64; 2],
    yaw_swing: f64,
}

impl Script {
    fn at(&self, t: usize, len: usize) -> Kinematics {
        let (phase, _) = phase_profile(t, len);
        let u = t as f64 / len as f64;
        let hands = scenario_hands(self.scenario);
        // object position: still until transport, carried to the goal, then left there
        let carry = ((u - 0.55) / 0.30).clamp(0.0, 1.0);
        let object = lerp3(self.object, self.goal, carry);
        let reach = (u / 0.25).clamp(0.0, 1.0);
        let mut hand_pos = self.rest;
        let mut hand_yaw = self.yaw0;
        for h in 0..2 {
            if !hands[h] {
                continue;
            }
            let side = if h == 0 { 0.06 } else { -0.06 };
            let grip = [object[0], object[1] + if hands == [true, true] { side } else { 0.0 }, object[2]];
            hand_pos[h] = match phase {
                Phase::Approach => lerp3(self.rest[h], grip, reach),
                Phase::Release => {
                    let back = ((u - 0.85) / 0.15).clamp(0.0, 1.0);
                    lerp3(grip, [grip[0], grip[1], grip[2] + 0.1], back)
                }
                _ => grip,
            };
            hand_yaw[h] = self.yaw0[h] + self.yaw_swing * reach;
        }
        let lean = match phase {
            Phase::Approach => reach * 0.5,
            Phase::Release => 0.5,
            _ => 1.0,
        };
        let transporting = phase == Phase::Transport;
        Kinematics {
            hand_pos,
            hand_yaw,
            object,
            torso: [0.0, 0.2 * lean, 0.05 * (2.0 * std::f64::consts::PI * u).sin(), 0.75 - 0.08 * lean],
            velocity: [if transporting { 0.2 } else { 0.0 }, 0.0, if self.scenario == Scenario::Push && transporting { 0.1 } else { 0.0 }],
        }
    }
}

fn generate_episode(
    config: &GeneratorConfig,
    layout: &RegionLayout,
    mixing: &[f64],
    scenario: Scenario,
    seed: u64,
) -> Episode {
    let schema = &config.schema;
    let len = config.episode_len;
    let jh = schema.hand_joints;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let script = Script {
        scenario,
        object: [rng.random_range(0.35..0.5), rng.random_range(-0.15..0.15), rng.random_range(0.05..0.15)],
        goal: [rng.random_range(0.35..0.5), rng.random_range(-0.2..0.2), rng.random_range(0.2..0.3)],
        rest: [[0.2, 0.25, 0.3], [0.2, -0.25, 0.3]],
        yaw0: [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)],
        yaw_swing: rng.random_range(-0.5..0.5),
    };
    let hands = scenario_hands(scenario);
    let mut bumps = Vec::new();
    for (h, &used) in hands.iter().enumerate() {
        if !used {
            continue;
        }
        for (region, name) in scenario_patches(scenario) {
            let p = layout.patch(region, name).expect("scenario patch exists in layout");
            bumps.push(Bump {
                hand: h,
                offset: p.offset,
                rows: p.rows,
                cols: p.cols,
                r0: rng.random_range(0..p.rows) as f64,
                c0: rng.random_range(0..p.cols) as f64,
                gain: rng.random_range(0.6..1.0),
            });
        }
    }
    let force_gain: Vec<f64> = (0..2 * jh).map(|_| rng.random_range(0.5..1.5)).collect();

    let mut ep = Episode::empty(EpisodeMeta { seed, scenario, len });
    let img_len = schema.image_len();
    ep.images = vec![0.0; len * IMAGE_VIEWS * img_len];
    for t in 0..len {
        let (phase, amp) = phase_profile(t, len);
        let (_, amp_next) = phase_profile((t + 1).min(len - 1), len);
        let now = script.at(t, len);
        let next = script.at((t + 1).min(len - 1), len);
        let contact = [hands[0] && amp > 0.0, hands[1] && amp > 0.0];

        // tactile: noise floor plus Gaussian bumps on the touching patches
        let base = ep.tactile.len();
        ep.tactile.extend((0..2 * TACTILE_PER_HAND).map(|_| rng.random_range(0.0..TACTILE_NOISE_MAX)));
        if amp > 0.0 {
            for b in &bumps {
                for r in 0..b.rows {
                    for c in 0..b.cols {
                        let d2 = (r as f64 - b.r0).powi(2) + (c as f64 - b.c0).powi(2);
                        let v = amp * b.gain * (-d2 / (2.0 * BUMP_SIGMA * BUMP_SIGMA)).exp();
                        ep.tactile[base + b.hand * TACTILE_PER_HAND + b.offset + r * b.cols + c] += v as f32;
                    }
                }
            }
        }

        for h in 0..2 {
            for j in 0..jh {
                let a = if contact[h] { amp * joint_engagement(scenario, j) } else { 0.0 };
                let f = a * force_gain[h * jh + j] + rng.random_range(-0.01..0.01);
                ep.hand_force.push(f as f32);
            }
        }
        for h in 0..2 {
            for j in 0..jh {
                let closure = if hands[h] { amp * joint_engagement(scenario, j) } else { 0.0 };
                ep.hand_proprio.push((0.1 + closure + rng.random_range(-0.01..0.01)) as f32);
            }
        }

        // action: scripted targets for the next step
        let mut action = Vec::with_capacity(schema.actions().total_dim());
        for h in 0..2 {
            action.extend(next.hand_pos[h]);
            let (s, c) = next.hand_yaw[h].sin_cos();
            action.extend([c, s, 0.0, -s, c, 0.0]);
        }
        action.extend(next.torso);
        action.extend(next.velocity);
        for h in 0..2 {
            for j in 0..jh {
                let closure = if hands[h] { amp_next * joint_engagement(scenario, j) } else { 0.0 };
                action.push(0.1 + closure);
            }
        }
        ep.action.extend(action.iter().map(|&v| v as f32));

        // body proprio: fixed mixing of the current pose plus noise
        let mut feat = Vec::with_capacity(22);
        for h in 0..2 {
            feat.extend(now.hand_pos[h]);
            let (s, c) = now.hand_yaw[h].sin_cos();
            feat.extend([c, s, 0.0, -s, c, 0.0]);
        }
        feat.extend(now.torso);
        for i in 0..schema.body_dim {
            let v: f64 = (0..22).map(|k| mixing[i * 22 + k] * feat[k]).sum::<f64>() + rng.random_range(-0.01..0.01);
            ep.body.push(v as f32);
        }

        let frame = &mut ep.images[t * IMAGE_VIEWS * img_len..(t + 1) * IMAGE_VIEWS * img_len];
        render_views(schema, frame, &now, &script.goal, amp);

        ep.contact.push(contact);
        ep.phase.push(phase);
    }
    ep
}

fn paint(img: &mut [f32], schema: &ModalitySchema, row: f64, col: f64, radius: f64, rgb: [f32; 3]) {
    let (h, w) = (schema.image_height as isize, schema.image_width as isize);
    let r = radius.ceil() as isize;
    let (cr, cc) = (row.round() as isize, col.round() as isize);
    for y in (cr - r).max(0)..(cr + r + 1).min(h) {
        for x in (cc - r).max(0)..(cc + r + 1).min(w) {
            let d2 = ((y - cr) * (y - cr) + (x - cc) * (x - cc)) as f64;
            if d2 <= radius * radius {
                let i = ((y * w + x) * 3) as usize;
                img[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }
}

fn render_views(schema: &ModalitySchema, frame: &mut [f32], k: &Kinematics, goal: &[f64; 3], amp: f64) {
    let n = schema.image_len();
    let (hh, ww) = (schema.image_height as f64 - 1.0, schema.image_width as f64 - 1.0);
    let unit = schema.image_width as f64 / 64.0;
    frame.fill(0.1);
    // head views: top-down projection, x forward maps to rows, y left maps to columns
    let project = |p: &[f64; 3], shift: f64| {
        let row = (1.0 - (p[0] - 0.1) / 0.5) * hh;
        let col = (0.5 - p[1] / 0.8) * ww + shift;
        (row, col)
    };
    for (view, shift) in [(0usize, 0.0), (1, -2.0 * unit)] {
        let img = &mut frame[view * n..(view + 1) * n];
        let (r, c) = project(goal, shift);
        paint(img, schema, r, c, 2.0 * unit, [0.9, 0.9, 0.2]);
        let (r, c) = project(&k.object, shift);
        paint(img, schema, r, c, 3.0 * unit + 4.0 * unit * k.object[2], [0.9, 0.15, 0.15]);
        for (h, rgb) in [(0, [0.2, 0.3, 0.9]), (1, [0.2, 0.8, 0.3])] {
            let (r, c) = project(&k.hand_pos[h], shift);
            paint(img, schema, r, c, 2.0 * unit, rgb);
        }
    }
    // wrist views: object relative to each hand, brightened while touching
    for h in 0..2 {
        let img = &mut frame[(2 + h) * n..(3 + h) * n];
        let rel = [k.object[0] - k.hand_pos[h][0], k.object[1] - k.hand_pos[h][1]];
        let row = (0.5 - rel[0] / 0.6) * hh;
        let col = (0.5 - rel[1] / 0.6) * ww;
        let glow = (0.5 + 0.5 * amp) as f32;
        paint(img, schema, row, col, 6.0 * unit, [glow, 0.2, 0.2]);
    }
}
