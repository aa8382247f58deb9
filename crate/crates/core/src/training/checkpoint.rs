//! Checkpoint directory format.
//!
//! ```text
//! <dir>/manifest.json  config, schema, step, sampler position, normalization
//!                      statistics and the parameter registry
//! <dir>/params.bin     little-endian f64: policy, tactile, teacher, then the
//!                      Adam m and v buffers of the policy and tactile stores
//! ```

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::NormalizationStats;
use crate::error::{HtdError, Result};
use crate::params::ParamStore;
use crate::schema::{ModalitySchema, SCHEMA_VERSION};

use super::config::TrainConfig;
use super::state::TrainState;

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_PARAMS: &str = "params.bin";
const FORMAT: &str = "htd-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f64 values from the start of the section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    /// Offset in f64 values from the start of `params.bin`.
    pub offset: usize,
    pub len: usize,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position, decimal.
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub schema_version: u32,
    pub step: u64,
    pub config: TrainConfig,
    pub schema: ModalitySchema,
    pub normalization: Option<NormalizationStats>,
    pub sampler: SamplerState,
    pub sections: Vec<Section>,
}

fn registry(store: &ParamStore) -> Vec<TensorEntry> {
    let mut off = 0;
    store
        .ids()
        .map(|id| {
            let shape = store.get(id).shape().to_vec();
            let e = TensorEntry { name: store.name(id).to_string(), shape, offset: off };
            off += store.get(id).len();
            e
        })
        .collect()
}

fn sampler_state(rng: &ChaCha8Rng) -> SamplerState {
    SamplerState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
}

fn restore_sampler(s: &SamplerState) -> Result<ChaCha8Rng> {
    use rand::SeedableRng;
    let pos: u128 = s
        .word_pos
        .parse()
        .map_err(|e| HtdError::Checkpoint(format!("bad sampler position {:?}: {e}", s.word_pos)))?;
    let mut rng = ChaCha8Rng::from_seed(s.seed);
    rng.set_stream(s.stream);
    rng.set_word_pos(pos);
    Ok(rng)
}

/// Writes `state` into `dir`, creating it if needed. Files are written to
/// temporary names first and renamed into place.
pub fn save_checkpoint(state: &TrainState, stats: Option<&NormalizationStats>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HtdError::io(dir, e))?;
    let buffers: [(&str, Vec<f64>, Option<&ParamStore>); 7] = [
        ("policy", state.params.policy.flat(), Some(&state.params.policy)),
        ("tactile", state.params.tactile.flat(), Some(&state.params.tactile)),
        ("teacher", state.teacher.params.flat(), Some(&state.teacher.params)),
        ("adam_m_policy", state.moments_policy.m.clone(), None),
        ("adam_v_policy", state.moments_policy.v.clone(), None),
        ("adam_m_tactile", state.moments_tactile.m.clone(), None),
        ("adam_v_tactile", state.moments_tactile.v.clone(), None),
    ];
    let mut bytes = Vec::new();
    let mut sections = Vec::new();
    let mut off = 0;
    for (name, values, store) in &buffers {
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        sections.push(Section {
            name: name.to_string(),
            offset: off,
            len: values.len(),
            tensors: store.map(registry).unwrap_or_default(),
        });
        off += values.len();
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        step: state.step,
        config: state.config.clone(),
        schema: state.policy.schema().clone(),
        normalization: stats.cloned(),
        sampler: sampler_state(&state.rng),
        sections,
    };
    write_atomic(&dir.join(CHECKPOINT_PARAMS), &bytes)?;
    write_atomic(&dir.join(CHECKPOINT_MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| HtdError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HtdError::io(path, e))
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| HtdError::io(&path, e))?;
    let m: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| HtdError::Checkpoint(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT {
        return Err(HtdError::Checkpoint(format!("unknown checkpoint format {:?}", m.format)));
    }
    if m.schema_version != SCHEMA_VERSION {
        return Err(HtdError::Checkpoint(format!(
            "checkpoint schema version {} but this build reads version {SCHEMA_VERSION}",
            m.schema_version
        )));
    }
    Ok(m)
}

/// Rebuilds the model from the stored config and loads every buffer.
pub fn load_checkpoint(dir: &Path) -> Result<(TrainState, CheckpointManifest)> {
    let manifest = read_checkpoint_manifest(dir)?;
    let path = dir.join(CHECKPOINT_PARAMS);
    let bytes = fs::read(&path).map_err(|e| HtdError::io(&path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(HtdError::Checkpoint(format!("{} is not a whole number of f64 values", path.display())));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut state = TrainState::new(manifest.config.clone(), &manifest.schema)?;
    let section = |name: &str| -> Result<&[f64]> {
        let s = manifest
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| HtdError::Checkpoint(format!("missing section {name}")))?;
        values
            .get(s.offset..s.offset + s.len)
            .ok_or_else(|| HtdError::Checkpoint(format!("section {name} runs past the end of params.bin")))
    };
    let check_registry = |name: &str, store: &ParamStore| -> Result<()> {
        let s = manifest.sections.iter().find(|s| s.name == name).unwrap();
        if s.tensors != registry(store) {
            return Err(HtdError::Checkpoint(format!("section {name} does not match the model built from its config")));
        }
        Ok(())
    };
    check_registry("policy", &state.params.policy)?;
    check_registry("tactile", &state.params.tactile)?;
    check_registry("teacher", &state.teacher.params)?;
    let load = |store: &mut ParamStore, vals: &[f64]| store.load_flat(vals).map_err(|e| HtdError::Checkpoint(e.to_string()));
    load(&mut state.params.policy, section("policy")?)?;
    load(&mut state.params.tactile, section("tactile")?)?;
    load(&mut state.teacher.params, section("teacher")?)?;
    let moments = |vals: &[f64], n: usize, name: &str| -> Result<Vec<f64>> {
        if vals.len() != n {
            return Err(HtdError::Checkpoint(format!("section {name} has {} values, expected {n}", vals.len())));
        }
        Ok(vals.to_vec())
    };
    let (np, nt) = (state.params.policy.num_scalars(), state.params.tactile.num_scalars());
    state.moments_policy.m = moments(section("adam_m_policy")?, np, "adam_m_policy")?;
    state.moments_policy.v = moments(section("adam_v_policy")?, np, "adam_v_policy")?;
    state.moments_tactile.m = moments(section("adam_m_tactile")?, nt, "adam_m_tactile")?;
    state.moments_tactile.v = moments(section("adam_v_tactile")?, nt, "adam_v_tactile")?;
    state.step = manifest.step;
    state.rng = restore_sampler(&manifest.sampler)?;
    Ok((state, manifest))
}
