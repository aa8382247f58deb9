use serde::{Deserialize, Serialize};

use crate::schema::ModalitySchema;

use super::episode::Episode;

/// Standard deviations below this are replaced by it before dividing.
pub const STD_FLOOR: f64 = 1e-6;

/// Mean and (floored) standard deviation per channel. A value at flat index
/// `i` of a row belongs to channel `i % mean.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Population statistics over `rows`; identity when there are no rows.
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [f32]> + Clone, channels: usize) -> Self {
        let mut count = vec![0usize; channels];
        let mut sum = vec![0.0f64; channels];
        for row in rows.clone() {
            for (i, &v) in row.iter().enumerate() {
                sum[i % channels] += v as f64;
                count[i % channels] += 1;
            }
        }
        if count.iter().all(|&c| c == 0) {
            return Self::identity(channels);
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect();
        let mut sq = vec![0.0f64; channels];
        for row in rows {
            for (i, &v) in row.iter().enumerate() {
                let d = v as f64 - mean[i % channels];
                sq[i % channels] += d * d;
            }
        }
        let std = sq.iter().zip(&count).map(|(s, &c)| (s / c.max(1) as f64).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn normalize(&self, i: usize, v: f64) -> f64 {
        let c = i % self.mean.len();
        (v - self.mean[c]) / self.std[c]
    }

    pub fn denormalize(&self, i: usize, v: f64) -> f64 {
        let c = i % self.mean.len();
        v * self.std[c] + self.mean[c]
    }

    pub fn normalize_row(&self, row: &[f32]) -> Vec<f64> {
        row.iter().enumerate().map(|(i, &v)| self.normalize(i, v as f64)).collect()
    }
}

/// Statistics for every non-image stream. Tactile uses one shared channel so
/// untouched cells, which only carry sensor noise, are not blown up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub body: ChannelStats,
    pub hand_proprio: ChannelStats,
    pub hand_force: ChannelStats,
    pub tactile: ChannelStats,
    pub action: ChannelStats,
}

impl NormalizationStats {
    pub fn compute(schema: &ModalitySchema, episodes: &[Episode]) -> Self {
        let a = schema.actions().total_dim();
        let hd = schema.hand_dim();
        let rows = |f: fn(&Episode) -> &Vec<f32>, w: usize| {
            episodes.iter().flat_map(move |e| f(e).chunks(w))
        };
        Self {
            body: ChannelStats::from_rows(rows(|e| &e.body, schema.body_dim), schema.body_dim),
            hand_proprio: ChannelStats::from_rows(rows(|e| &e.hand_proprio, hd), hd),
            hand_force: ChannelStats::from_rows(rows(|e| &e.hand_force, hd), hd),
            tactile: ChannelStats::from_rows(rows(|e| &e.tactile, 1), 1),
            action: ChannelStats::from_rows(rows(|e| &e.action, a), a),
        }
    }
}
