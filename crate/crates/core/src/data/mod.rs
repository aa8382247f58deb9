//! Demonstration episodes, the synthetic generator, the on-disk dataset
//! format, normalization and batch sampling.

mod batch;
mod episode;
mod io;
mod norm;
mod synth;

pub use batch::{
    assemble_batch, observation_at, sample_training_batch, valid_indices, valid_starts, Batch, Observation,
};
pub use episode::{Episode, EpisodeMeta, Phase, Scenario};
pub use io::{read_dataset, read_manifest, write_dataset, DatasetManifest, EpisodeEntry, MANIFEST_FILE};
pub use norm::{ChannelStats, NormalizationStats, STD_FLOOR};
pub use synth::{
    generate_synthetic_dataset, phase_profile, scenario_hands, scenario_patches, GeneratorConfig, ScenarioWeight,
    CONTACT_PEAK_THRESHOLD, TACTILE_NOISE_MAX,
};

use crate::error::Result;
use crate::schema::ModalitySchema;

/// Episodes plus the statistics used to normalize them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: ModalitySchema,
    pub episodes: Vec<Episode>,
    pub stats: NormalizationStats,
}

impl Dataset {
    /// Validates every episode and computes statistics over all of them.
    pub fn new(schema: ModalitySchema, episodes: Vec<Episode>) -> Result<Self> {
        schema.validate()?;
        for ep in &episodes {
            ep.validate(&schema)?;
        }
        let stats = NormalizationStats::compute(&schema, &episodes);
        Ok(Self { schema, episodes, stats })
    }

    /// Generates and wraps a synthetic dataset.
    pub fn synthetic(config: &GeneratorConfig, num_episodes: usize, seed: u64) -> Result<Self> {
        let episodes = generate_synthetic_dataset(config, num_episodes, seed)?;
        Self::new(config.schema.clone(), episodes)
    }
}
