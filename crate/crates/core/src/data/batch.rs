//! Training samples: observation at `t`, the next `h` actions and the next
//! `tau` force and tactile frames, all normalized.

use rand::Rng;

use crate::error::{HtdError, Result};
use crate::schema::{IMAGE_VIEWS, TACTILE_BOTH_HANDS};
use crate::tensor::Tensor;

use super::episode::Episode;
use super::Dataset;

/// A batch of normalized observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// One `[N, 3, H, W]` tensor per camera view.
    pub images: Vec<Tensor>,
    pub body: Tensor,
    pub hand_proprio: Tensor,
    pub hand_force: Tensor,
    pub tactile: Tensor,
}

impl Observation {
    pub fn batch_size(&self) -> usize {
        self.body.shape()[0]
    }

    /// Copy with the tactile stream replaced by zeros.
    pub fn with_zero_tactile(&self) -> Self {
        let mut o = self.clone();
        o.tactile = Tensor::zeros(self.tactile.shape().to_vec());
        o
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Observation,
    /// `[N, h, A]` actions for steps `t+1 ..= t+h`.
    pub actions: Tensor,
    /// `[N, tau, 2 J]` hand forces for steps `t+1 ..= t+tau`.
    pub future_force: Tensor,
    /// `[N, tau, 2124]` tactile frames for steps `t+1 ..= t+tau`.
    pub future_tactile: Tensor,
    /// `(episode, t)` of every sample.
    pub index: Vec<(usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.actions.shape()[1]
    }

    pub fn dream_horizon(&self) -> usize {
        self.future_force.shape()[1]
    }
}

/// Largest valid start index plus one: `t` is valid when `t + max(h, tau)`
/// is still inside the episode.
pub fn valid_starts(ep: &Episode, h: usize, tau: usize) -> usize {
    (ep.len()).saturating_sub(h.max(tau))
}

/// Every `(episode, t)` pair that has a full action chunk and dream window.
pub fn valid_indices(episodes: &[Episode], h: usize, tau: usize) -> Vec<(usize, usize)> {
    episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..valid_starts(ep, h, tau)).map(move |t| (e, t)))
        .collect()
}

/// Observation for the given `(episode, t)` pairs.
pub fn observation_at(ds: &Dataset, index: &[(usize, usize)]) -> Observation {
    let s = &ds.schema;
    let n = index.len();
    let (hh, ww) = (s.image_height, s.image_width);
    let mut images = Vec::with_capacity(IMAGE_VIEWS);
    for view in 0..IMAGE_VIEWS {
        let mut data = Vec::with_capacity(n * 3 * hh * ww);
        for &(e, t) in index {
            let img = ds.episodes[e].image(s, t, view);
            for c in 0..3 {
                data.extend((0..hh * ww).map(|p| img[p * 3 + c] as f64));
            }
        }
        images.push(Tensor::new([n, 3, hh, ww], data));
    }
    let gather = |width: usize, row: &dyn Fn(&Episode, usize) -> Vec<f64>| {
        let mut data = Vec::with_capacity(n * width);
        for &(e, t) in index {
            data.extend(row(&ds.episodes[e], t));
        }
        Tensor::new([n, width], data)
    };
    let st = &ds.stats;
    Observation {
        images,
        body: gather(s.body_dim, &|ep, t| st.body.normalize_row(ep.body_at(s, t))),
        hand_proprio: gather(s.hand_dim(), &|ep, t| st.hand_proprio.normalize_row(ep.hand_proprio_at(s, t))),
        hand_force: gather(s.hand_dim(), &|ep, t| st.hand_force.normalize_row(ep.hand_force_at(s, t))),
        tactile: gather(TACTILE_BOTH_HANDS, &|ep, t| st.tactile.normalize_row(ep.tactile_at(t))),
    }
}

/// Builds the batch for explicit `(episode, t)` pairs.
pub fn assemble_batch(ds: &Dataset, index: &[(usize, usize)], h: usize, tau: usize) -> Result<Batch> {
    if h == 0 || tau == 0 {
        return Err(HtdError::Config("chunk and dream horizons must be at least 1".into()));
    }
    let s = &ds.schema;
    let st = &ds.stats;
    let a = s.actions().total_dim();
    let hd = s.hand_dim();
    for &(e, t) in index {
        let ep = ds.episodes.get(e).ok_or_else(|| HtdError::Data(format!("no episode {e}")))?;
        if t >= valid_starts(ep, h, tau) {
            return Err(HtdError::Data(format!("t = {t} has no full window in episode {e} of length {}", ep.len())));
        }
    }
    let n = index.len();
    let mut actions = Vec::with_capacity(n * h * a);
    let mut force = Vec::with_capacity(n * tau * hd);
    let mut tactile = Vec::with_capacity(n * tau * TACTILE_BOTH_HANDS);
    for &(e, t) in index {
        let ep = &ds.episodes[e];
        for l in 1..=h {
            actions.extend(st.action.normalize_row(ep.action_at(s, t + l)));
        }
        for l in 1..=tau {
            force.extend(st.hand_force.normalize_row(ep.hand_force_at(s, t + l)));
            tactile.extend(st.tactile.normalize_row(ep.tactile_at(t + l)));
        }
    }
    Ok(Batch {
        obs: observation_at(ds, index),
        actions: Tensor::new([n, h, a], actions),
        future_force: Tensor::new([n, tau, hd], force),
        future_tactile: Tensor::new([n, tau, TACTILE_BOTH_HANDS], tactile),
        index: index.to_vec(),
    })
}

/// Draws `batch_size` pairs uniformly, with replacement, from all valid
/// `(episode, t)` pairs.
pub fn sample_training_batch<R: Rng>(
    ds: &Dataset,
    batch_size: usize,
    h: usize,
    tau: usize,
    rng: &mut R,
) -> Result<Batch> {
    let pairs = valid_indices(&ds.episodes, h, tau);
    if pairs.is_empty() {
        return Err(HtdError::Data(format!(
            "no episode is long enough for h = {h}, tau = {tau}"
        )));
    }
    let index: Vec<(usize, usize)> = (0..batch_size).map(|_| pairs[rng.random_range(0..pairs.len())]).collect();
    assemble_batch(ds, &index, h, tau)
}
