//! Per-region tactile encoder and its EMA teacher.
//!
//! Every patch gets its own small CNN branch: patches with at most
//! `small_patch_max` cells use one 3x3 convolution, larger ones two. Branch
//! outputs are pooled to a 2x2 grid, flattened, concatenated per region and
//! fused by an MLP into a `d_z` latent. Both hands share the same weights.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{HtdError, Result};
use crate::nn::{Conv2d, Mlp};
use crate::params::{ParamStore, StoreTag};
use crate::schema::{TACTILE_BOTH_HANDS, TACTILE_PER_HAND};
use crate::tensor::Tensor;

use super::layout::{Region, RegionId, RegionLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TactileEncoderConfig {
    pub latent_dim: usize,
    pub conv_channels: usize,
    pub fusion_hidden: usize,
    pub small_patch_max: usize,
    pub pool: usize,
}

impl Default for TactileEncoderConfig {
    fn default() -> Self {
        Self { latent_dim: 64, conv_channels: 8, fusion_hidden: 128, small_patch_max: 50, pool: 2 }
    }
}

#[derive(Clone, Debug)]
struct PatchBranch {
    rows: usize,
    cols: usize,
    offset: usize,
    convs: Vec<Conv2d>,
}

#[derive(Clone, Debug)]
struct RegionBranch {
    patches: Vec<PatchBranch>,
    fusion: Mlp,
}

#[derive(Clone, Debug)]
pub struct TactileEncoder {
    config: TactileEncoderConfig,
    layout: RegionLayout,
    regions: Vec<RegionBranch>,
}

impl TactileEncoder {
    /// Registers all encoder parameters in `store`.
    pub fn new(store: &mut ParamStore, config: &TactileEncoderConfig, layout: &RegionLayout) -> Result<Self> {
        layout.validate()?;
        if config.latent_dim == 0 || config.conv_channels == 0 || config.pool == 0 {
            return Err(HtdError::Config("tactile encoder sizes must be positive".into()));
        }
        let c = config.conv_channels;
        let feat = c * config.pool * config.pool;
        let mut regions = Vec::new();
        for region in Region::ALL {
            let mut patches = Vec::new();
            for p in layout.patches_of(region) {
                let name = format!("tactile.{}.{}", region.name(), p.name);
                let mut convs = vec![Conv2d::new(store, &format!("{name}.conv0"), 1, c, 3, 1, 1)];
                if p.len() > config.small_patch_max {
                    convs.push(Conv2d::new(store, &format!("{name}.conv1"), c, c, 3, 1, 1));
                }
                patches.push(PatchBranch { rows: p.rows, cols: p.cols, offset: p.offset, convs });
            }
            let fusion = Mlp::new(
                store,
                &format!("tactile.{}.fusion", region.name()),
                &[patches.len() * feat, config.fusion_hidden, config.latent_dim],
            );
            regions.push(RegionBranch { patches, fusion });
        }
        Ok(Self { config: config.clone(), layout: layout.clone(), regions })
    }

    pub fn config(&self) -> &TactileEncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &RegionLayout {
        &self.layout
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Number of convolution layers in the branch of each patch, in layout order.
    pub fn branch_depths(&self) -> Vec<usize> {
        self.regions.iter().flat_map(|r| r.patches.iter().map(|p| p.convs.len())).collect()
    }

    /// One region of a batch of hands: `hands [M, 1062] -> [M, d_z]`.
    pub fn encode_region(&self, g: &mut Graph, p: &ParamStore, region: Region, hands: Var) -> Var {
        let m = g.shape(hands)[0];
        let branch = &self.regions[region.position()];
        let pool = self.config.pool;
        let mut feats = Vec::with_capacity(branch.patches.len());
        for pb in &branch.patches {
            let x = g.narrow(hands, 1, pb.offset, pb.rows * pb.cols);
            let mut x = g.reshape(x, &[m, 1, pb.rows, pb.cols]);
            for conv in &pb.convs {
                x = conv.forward(g, p, x);
                x = g.gelu(x);
            }
            let x = g.adaptive_avg_pool2d(x, pool, pool);
            feats.push(g.reshape(x, &[m, self.config.conv_channels * pool * pool]));
        }
        let x = if feats.len() == 1 { feats[0] } else { g.concat(&feats, 1) };
        branch.fusion.forward(g, p, x)
    }

    /// All six regions of a batch of hands: `hands [M, 1062] -> [M, 6, d_z]`.
    pub fn encode_hands(&self, g: &mut Graph, p: &ParamStore, hands: Var) -> Var {
        assert_eq!(g.shape(hands)[1], TACTILE_PER_HAND);
        let m = g.shape(hands)[0];
        let d = self.config.latent_dim;
        let per_region: Vec<Var> = Region::ALL
            .iter()
            .map(|&r| {
                let z = self.encode_region(g, p, r, hands);
                g.reshape(z, &[m, 1, d])
            })
            .collect();
        g.concat(&per_region, 1)
    }

    /// Both hands: `tactile [N, 2124] -> [N, 12, d_z]`, left regions first.
    pub fn forward(&self, g: &mut Graph, p: &ParamStore, tactile: Var) -> Var {
        let n = g.shape(tactile)[0];
        assert_eq!(g.shape(tactile)[1], TACTILE_BOTH_HANDS);
        let hands = g.reshape(tactile, &[2 * n, TACTILE_PER_HAND]);
        let z = self.encode_hands(g, p, hands);
        g.reshape(z, &[n, RegionId::COUNT, self.config.latent_dim])
    }

    /// Value-only encoding of a single hand into six `d_z` latents.
    pub fn encode_hand(&self, p: &ParamStore, raw: &[f64]) -> Result<Vec<Vec<f64>>> {
        if raw.len() != TACTILE_PER_HAND {
            return Err(HtdError::Shape(format!("hand tactile has {} entries, expected {TACTILE_PER_HAND}", raw.len())));
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([1, TACTILE_PER_HAND], raw.to_vec()));
        let z = self.encode_hands(&mut g, p, x);
        Ok(g.value(z).data().chunks(self.config.latent_dim).map(<[f64]>::to_vec).collect())
    }

    /// Encodes with the teacher copy and detaches the result. The teacher
    /// parameters enter the graph as ordinary leaves, so any gradient reaching
    /// them would show up in [`crate::autograd::Gradients`]; the detach
    /// guarantees none does.
    pub fn teacher_encode(&self, g: &mut Graph, teacher: &TeacherEncoderState, tactile: Var) -> Var {
        let z = self.forward(g, &teacher.params, tactile);
        g.detach(z)
    }
}

/// EMA copy of the student tactile encoder parameters.
#[derive(Clone, Debug)]
pub struct TeacherEncoderState {
    pub params: ParamStore,
    pub alpha: f64,
}

impl TeacherEncoderState {
    /// Starts as an exact copy of the student.
    pub fn from_student(student: &ParamStore, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { params: student.retagged(StoreTag::Teacher), alpha })
    }

    pub fn update(&mut self, student: &ParamStore) -> Result<()> {
        ema_update(&mut self.params, student, self.alpha)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HtdError::Config(format!("EMA decay must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `teacher <- alpha * teacher + (1 - alpha) * student`, element-wise.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, alpha: f64) -> Result<()> {
    check_alpha(alpha)?;
    teacher.check_same_layout(student)?;
    let ids: Vec<_> = teacher.ids().collect();
    for id in ids {
        let s = student.get(id).data();
        for (t, &sv) in teacher.get_mut(id).data_mut().iter_mut().zip(s) {
            *t = alpha * *t + (1.0 - alpha) * sv;
        }
    }
    Ok(())
}
