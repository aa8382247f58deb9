//! Dataset directory format.
//!
//! ```text
//! <dir>/manifest.json   schema version, field order and shapes, region layout,
//!                       episode index, normalization statistics
//! <dir>/ep_<k>.bin      little-endian f32 records, one per timestep, fields in
//!                       manifest order
//! ```
//!
//! Labels are stored as floats too: contact flags as 0/1 and the phase as its
//! index in approach, contact, grasp, transport, release.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HtdError, Result};
use crate::schema::{FieldSpec, ModalitySchema, IMAGE_VIEWS, SCHEMA_VERSION, TACTILE_PER_HAND};
use crate::tactile::RegionLayout;

use super::episode::{Episode, EpisodeMeta, Phase};
use super::norm::NormalizationStats;
use super::Dataset;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "htd-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub file: String,
    pub meta: EpisodeMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub schema_version: u32,
    pub dtype: String,
    pub schema: ModalitySchema,
    pub record_fields: Vec<FieldSpec>,
    pub record_len: usize,
    pub region_layout: RegionLayout,
    pub episodes: Vec<EpisodeEntry>,
    pub normalization: NormalizationStats,
}

impl DatasetManifest {
    /// Rejects manifests this build cannot read.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(HtdError::Schema(format!("unknown dataset format {:?}", self.format)));
        }
        if self.schema_version != SCHEMA_VERSION {
            return Err(HtdError::Schema(format!(
                "dataset schema version {} but this build reads version {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.dtype != "f32-le" {
            return Err(HtdError::Schema(format!("unsupported dtype {:?}", self.dtype)));
        }
        self.schema.validate()?;
        if let Some(t) = self.record_fields.iter().find(|f| f.name == "tactile") {
            if t.shape != [2, TACTILE_PER_HAND] {
                return Err(HtdError::Schema(format!(
                    "tactile field has shape {:?}, expected [2, {TACTILE_PER_HAND}]",
                    t.shape
                )));
            }
        }
        let expected = self.schema.record_fields();
        if self.record_fields != expected {
            return Err(HtdError::Schema("record fields disagree with the declared modality schema".into()));
        }
        if self.record_len != self.schema.record_len() {
            return Err(HtdError::Schema(format!(
                "record length {} but fields sum to {}",
                self.record_len,
                self.schema.record_len()
            )));
        }
        self.region_layout.validate()?;
        if self.region_layout != RegionLayout::default() {
            return Err(HtdError::Schema("tactile region layout differs from the built-in layout".into()));
        }
        Ok(())
    }
}

fn episode_file(k: usize) -> String {
    format!("ep_{k}.bin")
}

fn encode_episode(schema: &ModalitySchema, ep: &Episode) -> Vec<u8> {
    let mut out = Vec::with_capacity(ep.len() * schema.record_len() * 4);
    let mut put = |vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for t in 0..ep.len() {
        for view in 0..IMAGE_VIEWS {
            put(ep.image(schema, t, view));
        }
        put(ep.body_at(schema, t));
        put(ep.hand_proprio_at(schema, t));
        put(ep.hand_force_at(schema, t));
        put(ep.tactile_at(t));
        put(ep.action_at(schema, t));
        let c = ep.contact[t];
        put(&[c[0] as u8 as f32, c[1] as u8 as f32, ep.phase[t].code()]);
    }
    out
}

fn decode_episode(schema: &ModalitySchema, meta: EpisodeMeta, bytes: &[u8]) -> Result<Episode> {
    let floats: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let mut ep = Episode::empty(meta);
    let fields = schema.record_fields();
    for rec in floats.chunks_exact(schema.record_len()) {
        let mut off = 0;
        let mut take = |n: usize| {
            let s = &rec[off..off + n];
            off += n;
            s
        };
        ep.images.extend_from_slice(take(IMAGE_VIEWS * schema.image_len()));
        ep.body.extend_from_slice(take(fields[4].len()));
        ep.hand_proprio.extend_from_slice(take(fields[5].len()));
        ep.hand_force.extend_from_slice(take(fields[6].len()));
        ep.tactile.extend_from_slice(take(fields[7].len()));
        ep.action.extend_from_slice(take(fields[8].len()));
        let labels = take(3);
        let flag = |v: f32| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(HtdError::Data(format!("invalid contact flag {v}"))),
        };
        ep.contact.push([flag(labels[0])?, flag(labels[1])?]);
        ep.phase.push(Phase::from_code(labels[2])?);
    }
    ep.validate(schema)?;
    Ok(ep)
}

/// Writes the manifest and one blob per episode into `dir` (created if needed).
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| HtdError::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.episodes.len());
    for (k, ep) in dataset.episodes.iter().enumerate() {
        ep.validate(&dataset.schema)?;
        let file = episode_file(k);
        let path = dir.join(&file);
        fs::write(&path, encode_episode(&dataset.schema, ep)).map_err(|e| HtdError::io(&path, e))?;
        entries.push(EpisodeEntry { file, meta: ep.meta.clone() });
    }
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        dtype: "f32-le".into(),
        schema: dataset.schema.clone(),
        record_fields: dataset.schema.record_fields(),
        record_len: dataset.schema.record_len(),
        region_layout: RegionLayout::default(),
        episodes: entries,
        normalization: dataset.stats.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| HtdError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| HtdError::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| HtdError::Schema(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Reads a dataset written by [`write_dataset`], checking every blob length
/// against the manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let schema = manifest.schema.clone();
    let mut episodes = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| HtdError::io(&path, e))?;
        let expected = entry.meta.len * manifest.record_len * 4;
        if bytes.len() != expected {
            return Err(HtdError::Data(format!(
                "{} holds {} bytes, manifest implies {expected}",
                path.display(),
                bytes.len()
            )));
        }
        episodes.push(decode_episode(&schema, entry.meta.clone(), &bytes)?);
    }
    Ok(Dataset { schema, episodes, stats: manifest.normalization })
}
