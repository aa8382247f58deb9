//! Offline dream evaluation: open-loop dream traces, force error, latent
//! similarity, latent heatmaps, a representation-collapse score and ablation
//! tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{observation_at, Dataset};
use crate::error::{HtdError, Result};
use crate::params::ParamStore;
use crate::policy::{Policy, PolicyParams, Variant};
use crate::schema::TACTILE_BOTH_HANDS;
use crate::tactile::{RegionId, TactileEncoder};
use crate::tensor::Tensor;
use crate::training::LossBreakdown;

/// `1 / (1 + |a - b|)`: 1 for identical vectors, falling towards 0 with distance.
pub fn latent_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "latent_similarity: length mismatch");
    let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    1.0 / (1.0 + d)
}

/// Mean absolute error per hand. Rows are `[left J, right J]` force vectors.
pub fn force_mae(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<[f64; 2]> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(HtdError::Shape(format!("force series lengths {} vs {}", pred.len(), target.len())));
    }
    let width = target[0].len();
    if width % 2 != 0 || pred.iter().chain(target).any(|r| r.len() != width) {
        return Err(HtdError::Shape("force rows must share one even width".into()));
    }
    let j = width / 2;
    let mut sums = [0.0; 2];
    for (p, t) in pred.iter().zip(target) {
        for k in 0..width {
            sums[k / j] += (p[k] - t[k]).abs();
        }
    }
    let n = (pred.len() * j) as f64;
    Ok([sums[0] / n, sums[1] / n])
}

/// Dreamed futures for `tau` steps after `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DreamChunk {
    /// `tau` rows of raw (denormalized) hand forces.
    pub force: Vec<Vec<f64>>,
    /// `tau` rows of `12 * d_z` latents, when the source dreams latents.
    pub latents: Option<Vec<Vec<f64>>>,
}

pub trait DreamSource {
    fn dream(&self, ds: &Dataset, episode: usize, t: usize, tau: usize) -> Result<DreamChunk>;
}

/// Encoder and parameters used to turn recorded tactile frames into latent
/// targets.
#[derive(Clone, Copy)]
pub struct LatentTargets<'a> {
    pub encoder: &'a TactileEncoder,
    pub params: &'a ParamStore,
}

impl LatentTargets<'_> {
    /// Latents `[frames][12 * d_z]` for normalized steps `range` of an episode.
    pub fn encode_episode(&self, ds: &Dataset, episode: usize) -> Vec<Vec<f64>> {
        let ep = &ds.episodes[episode];
        let mut data = Vec::with_capacity(ep.len() * TACTILE_BOTH_HANDS);
        for t in 0..ep.len() {
            data.extend(ds.stats.tactile.normalize_row(ep.tactile_at(t)));
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([ep.len(), TACTILE_BOTH_HANDS], data));
        let z = self.encoder.forward(&mut g, self.params, x);
        let w = RegionId::COUNT * self.encoder.latent_dim();
        g.value(z).data().chunks(w).map(<[f64]>::to_vec).collect()
    }
}

/// Dreams from a trained policy.
pub struct PolicyDreams<'a> {
    pub policy: &'a Policy,
    pub params: &'a PolicyParams,
}

impl DreamSource for PolicyDreams<'_> {
    fn dream(&self, ds: &Dataset, episode: usize, t: usize, tau: usize) -> Result<DreamChunk> {
        if tau != self.policy.config().dream_horizon {
            return Err(HtdError::Config(format!(
                "policy dreams {} steps, {tau} requested",
                self.policy.config().dream_horizon
            )));
        }
        let obs = observation_at(ds, &[(episode, t)]);
        let mut g = Graph::new();
        let vars = Policy::observation_vars(&mut g, &obs);
        let out = self.policy.forward(&mut g, self.params, &vars);
        let d = out
            .dreams
            .ok_or_else(|| HtdError::Config(format!("variant {} has no dream heads", self.policy.config().variant)))?;
        let f = g.value(d.force);
        let width = f.shape()[2];
        let force = f
            .data()
            .chunks(width)
            .map(|row| row.iter().enumerate().map(|(i, &v)| ds.stats.hand_force.denormalize(i, v)).collect())
            .collect();
        let latents = d.latent.map(|z| {
            let w = RegionId::COUNT * self.policy.config().tactile.latent_dim;
            g.value(z).data().chunks(w).map(<[f64]>::to_vec).collect()
        });
        Ok(DreamChunk { force, latents })
    }
}

/// Returns the recorded future: zero error by construction.
pub struct OracleDreams<'a> {
    pub targets: Option<LatentTargets<'a>>,
}

impl DreamSource for OracleDreams<'_> {
    fn dream(&self, ds: &Dataset, episode: usize, t: usize, tau: usize) -> Result<DreamChunk> {
        let ep = &ds.episodes[episode];
        let force = (1..=tau).map(|l| ep.hand_force_at(&ds.schema, t + l).iter().map(|&v| v as f64).collect()).collect();
        let latents = self.targets.map(|tg| {
            let all = tg.encode_episode(ds, episode);
            (1..=tau).map(|l| all[t + l].clone()).collect()
        });
        Ok(DreamChunk { force, latents })
    }
}

/// Predicts zero force and zero latents.
pub struct ZeroDreams {
    pub latent_width: Option<usize>,
}

impl DreamSource for ZeroDreams {
    fn dream(&self, ds: &Dataset, _episode: usize, _t: usize, tau: usize) -> Result<DreamChunk> {
        Ok(DreamChunk {
            force: vec![vec![0.0; ds.schema.hand_dim()]; tau],
            latents: self.latent_width.map(|w| vec![vec![0.0; w]; tau]),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Absolute episode step this entry describes.
    pub step: usize,
    /// Start of the chunk the prediction came from.
    pub chunk_start: usize,
    pub pred_force: Vec<f64>,
    pub true_force: Vec<f64>,
    pub pred_latent: Option<Vec<f64>>,
    pub true_latent: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DreamTrace {
    pub episode: usize,
    pub steps: Vec<TraceStep>,
    pub force_mae: [f64; 2],
    /// Per step, similarity of each of the 12 region latents.
    pub similarity: Vec<Option<[f64; RegionId::COUNT]>>,
}

impl DreamTrace {
    pub fn mean_similarity(&self) -> Option<f64> {
        let vals: Vec<f64> = self.similarity.iter().flatten().flat_map(|s| s.iter().copied()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Open-loop rollout: every `stride` steps a chunk of `tau` dreams is
/// requested and aligned against the recorded future. Where chunks overlap
/// the most recent one wins.
pub fn rollout_dream_trace(
    source: &dyn DreamSource,
    ds: &Dataset,
    episode: usize,
    stride: usize,
    tau: usize,
    targets: Option<LatentTargets<'_>>,
) -> Result<DreamTrace> {
    let ep = ds.episodes.get(episode).ok_or_else(|| HtdError::Data(format!("no episode {episode}")))?;
    if stride == 0 || tau == 0 {
        return Err(HtdError::Config("stride and tau must be at least 1".into()));
    }
    if ep.len() <= tau {
        return Err(HtdError::Data(format!("episode {episode} has {} steps, needs more than tau = {tau}", ep.len())));
    }
    let true_latents = targets.map(|tg| tg.encode_episode(ds, episode));
    let mut slots: Vec<Option<TraceStep>> = vec![None; ep.len()];
    let mut t = 0;
    while t + tau < ep.len() {
        let chunk = source.dream(ds, episode, t, tau)?;
        if chunk.force.len() != tau {
            return Err(HtdError::Shape(format!("dream chunk has {} steps, expected {tau}", chunk.force.len())));
        }
        for l in 1..=tau {
            let k = t + l;
            let pred_latent = chunk.latents.as_ref().map(|z| z[l - 1].clone());
            slots[k] = Some(TraceStep {
                step: k,
                chunk_start: t,
                pred_force: chunk.force[l - 1].clone(),
                true_force: ep.hand_force_at(&ds.schema, k).iter().map(|&v| v as f64).collect(),
                true_latent: true_latents.as_ref().filter(|_| pred_latent.is_some()).map(|z| z[k].clone()),
                pred_latent,
            });
        }
        t += stride;
    }
    let steps: Vec<TraceStep> = slots.into_iter().flatten().collect();
    let pred: Vec<Vec<f64>> = steps.iter().map(|s| s.pred_force.clone()).collect();
    let truth: Vec<Vec<f64>> = steps.iter().map(|s| s.true_force.clone()).collect();
    let force_mae = force_mae(&pred, &truth)?;
    let similarity = steps
        .iter()
        .map(|s| match (&s.pred_latent, &s.true_latent) {
            (Some(p), Some(q)) => {
                let d = p.len() / RegionId::COUNT;
                let mut out = [0.0; RegionId::COUNT];
                for (r, o) in out.iter_mut().enumerate() {
                    *o = latent_similarity(&p[r * d..(r + 1) * d], &q[r * d..(r + 1) * d]);
                }
                Some(out)
            }
            _ => None,
        })
        .collect();
    Ok(DreamTrace { episode, steps, force_mae, similarity })
}

/// Row-major `(rows, cols)` grid for a latent of `dim` values: the most
/// square factorisation with `rows <= cols`.
pub fn heatmap_grid(dim: usize) -> (usize, usize) {
    let mut rows = (dim as f64).sqrt().floor() as usize;
    while rows > 1 && dim % rows != 0 {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, dim / rows)
}

/// Per-frame min-max scaling to `[0, 1]`; a constant frame maps to 0.5.
pub fn normalize_frame(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 || !(hi - lo).is_finite() {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

const HEATMAP_CELL_PX: usize = 16;

/// Writes `<stem>.png` (grayscale, min-max normalized, each value a
/// 16-pixel square) and `<stem>.csv` (raw values on the grid).
pub fn export_latent_heatmap(latent: &[f64], dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HtdError::io(dir, e))?;
    let (rows, cols) = heatmap_grid(latent.len());
    let norm = normalize_frame(latent);
    let (w, h) = (cols * HEATMAP_CELL_PX, rows * HEATMAP_CELL_PX);
    let mut pixels = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = norm[(y / HEATMAP_CELL_PX) * cols + x / HEATMAP_CELL_PX];
            pixels[y * w + x] = (v * 255.0).round() as u8;
        }
    }
    let png_path = dir.join(format!("{stem}.png"));
    let file = fs::File::create(&png_path).map_err(|e| HtdError::io(&png_path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&pixels)?;
    writer.finish()?;

    let csv_path = dir.join(format!("{stem}.csv"));
    let mut out = String::new();
    for r in 0..rows {
        let row: Vec<String> = latent[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(&csv_path, out).map_err(|e| HtdError::io(&csv_path, e))?;
    Ok(())
}

/// Reads back the raw values written by [`export_latent_heatmap`].
pub fn read_heatmap_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| HtdError::io(path, e))?;
    text.lines()
        .flat_map(|l| l.split(','))
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|e| HtdError::Data(format!("{s:?}: {e}"))))
        .collect()
}

/// How well latents separate contact from no-contact frames.
///
/// For every (hand, region) slot whose hand is seen both in and out of
/// contact, the between-group variance `sum_g (n_g / n) |mu_g - mu|^2` is
/// divided by the mean squared latent norm; the score is the mean over those
/// slots. Latents that no longer depend on the input score near zero.
pub fn collapse_metric(latents: &[Vec<f64>], contact: &[[bool; 2]]) -> Result<f64> {
    if latents.len() != contact.len() || latents.is_empty() {
        return Err(HtdError::Shape(format!("{} latent frames vs {} labels", latents.len(), contact.len())));
    }
    let width = latents[0].len();
    let d = width / RegionId::COUNT;
    let mut scores = Vec::new();
    for slot in 0..RegionId::COUNT {
        let hand = RegionId::from_slot(slot).hand.position();
        let n_in = contact.iter().filter(|c| c[hand]).count();
        if n_in == 0 || n_in == contact.len() {
            continue;
        }
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        let mut all = vec![0.0; d];
        let mut sq_norm = 0.0;
        for (z, c) in latents.iter().zip(contact) {
            let v = &z[slot * d..(slot + 1) * d];
            let gi = c[hand] as usize;
            for k in 0..d {
                mean[gi][k] += v[k];
                all[k] += v[k];
            }
            sq_norm += v.iter().map(|x| x * x).sum::<f64>();
        }
        let n = contact.len() as f64;
        let counts = [(contact.len() - n_in) as f64, n_in as f64];
        let mut between = 0.0;
        for gi in 0..2 {
            for k in 0..d {
                let diff = mean[gi][k] / counts[gi] - all[k] / n;
                between += counts[gi] / n * diff * diff;
            }
        }
        let mean_sq = sq_norm / n;
        scores.push(if mean_sq > 0.0 { between / mean_sq } else { 0.0 });
    }
    if scores.is_empty() {
        return Err(HtdError::Data("no hand is observed both in and out of contact".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Collapse score of `params`' encodings over every frame of the dataset.
pub fn dataset_collapse_metric(ds: &Dataset, targets: LatentTargets<'_>) -> Result<f64> {
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    for (e, ep) in ds.episodes.iter().enumerate() {
        latents.extend(targets.encode_episode(ds, e));
        labels.extend(ep.contact.iter().copied());
    }
    collapse_metric(&latents, &labels)
}

/// End-of-run numbers for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub steps: u64,
    pub initial: LossBreakdown,
    pub last: LossBreakdown,
    /// Dream force MAE (raw units), mean of both hands over all episodes.
    pub dream_force_mae: Option<f64>,
    pub latent_similarity: Option<f64>,
    pub collapse_metric: Option<f64>,
}

pub const SUMMARY_FILE: &str = "summary.json";

impl RunSummary {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SUMMARY_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| HtdError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HtdError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<(Variant, RunSummary)>,
    pub missing: Vec<Variant>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl AblationReport {
    /// Tab-separated table, one row per variant present, followed by a line
    /// naming any missing variants.
    pub fn render(&self) -> String {
        let mut out = String::from(
            "variant\tsteps\tfinal_bc\tfinal_force\tfinal_tact\tfinal_total\tdream_force_mae\tlatent_similarity\tcollapse_metric\n",
        );
        for (v, s) in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\n",
                v,
                s.steps,
                s.last.bc(),
                s.last.force,
                s.last.tact,
                s.last.total,
                fmt_opt(s.dream_force_mae),
                fmt_opt(s.latent_similarity),
                fmt_opt(s.collapse_metric)
            ));
        }
        if !self.missing.is_empty() {
            let names: Vec<&str> = self.missing.iter().map(|v| v.name()).collect();
            out.push_str(&format!("# missing: {}\n", names.join(", ")));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| HtdError::io(path, e))?;
        f.write_all(self.render().as_bytes()).map_err(|e| HtdError::io(path, e))
    }
}

/// Groups run summaries by variant (last one wins) and lists variants with no
/// run.
pub fn ablation_report(runs: &[RunSummary]) -> AblationReport {
    let mut by: BTreeMap<usize, RunSummary> = BTreeMap::new();
    for r in runs {
        let i = Variant::ALL.iter().position(|&v| v == r.variant).unwrap();
        by.insert(i, r.clone());
    }
    let rows = by.into_iter().map(|(i, s)| (Variant::ALL[i], s)).collect();
    let missing = Variant::ALL.iter().copied().filter(|v| !runs.iter().any(|r| r.variant == *v)).collect();
    AblationReport { rows, missing }
}
