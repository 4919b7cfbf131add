//! Assembling pre-trained visual representations: layer selection and
//! concatenation, temporal (flare) fusion, goal-image concatenation, and the
//! ground-truth oracle adapter.

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, Layer};
use crate::env::armreach::ArmReachState;
use crate::env::gridnav::GridNavState;
use crate::env::{ArmReach, EnvId, GridNav};
use crate::frame::{frames_to_batch, ImageFrame};
use crate::{Error, Result};

/// How embeddings are combined before the policy input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Latest embedding plus two latent differences (temporal stack of 3).
    Flare3,
    /// Current-view embedding concatenated with the goal-view embedding.
    GoalConcat,
    /// The per-step embedding alone.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    Frozen,
    Finetune,
}

/// A callable embedding function over one or more backbone taps.
#[derive(Debug, Clone)]
pub struct Pvr {
    pub backbone: Backbone,
    /// Ascending, deduplicated tap selection.
    pub layers: Vec<Layer>,
    pub fusion: Fusion,
    pub finetune_mode: FinetuneMode,
}

/// Validates layer selection and freeze state and wraps the backbone.
pub fn assemble_pvr(
    backbone: Backbone,
    layers: &[Layer],
    fusion: Fusion,
    finetune_mode: FinetuneMode,
) -> Result<Pvr> {
    if layers.is_empty() {
        return Err(Error::InvalidSpec("PVR needs at least one layer".into()));
    }
    let mut sorted: Vec<Layer> = layers.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() > 1 {
        for &l in &sorted {
            if l != Layer::L5 && !backbone.has_compression(l) {
                return Err(Error::InvalidSpec(format!(
                    "multi-layer PVR requires compression at {l}"
                )));
            }
        }
    }
    match finetune_mode {
        FinetuneMode::Frozen => {
            if !backbone.frozen {
                return Err(Error::InvalidSpec("frozen-mode PVR needs a frozen backbone".into()));
            }
        }
        FinetuneMode::Finetune => {
            if backbone.frozen {
                return Err(Error::FrozenViolation(
                    "finetune-mode PVR needs an unfrozen backbone".into(),
                ));
            }
        }
    }
    Ok(Pvr { backbone, layers: sorted, fusion, finetune_mode })
}

impl Pvr {
    /// Output length: sum of per-layer pooled dimensions.
    pub fn embed_dim(&self) -> usize {
        self.layers.iter().map(|&l| self.backbone.embed_dim(l)).sum()
    }

    /// Batched embedding, layers concatenated in ascending order.
    pub fn embed_batch(&self, x: &Array4<f32>) -> Result<Array2<f32>> {
        let parts: Vec<Array2<f32>> = self
            .layers
            .iter()
            .map(|&l| self.backbone.embed_batch(x, l))
            .collect::<Result<_>>()?;
        let views: Vec<_> = parts.iter().map(Array2::view).collect();
        Ok(ndarray::concatenate(Axis(1), &views).unwrap())
    }

    pub fn embed_frame(&self, frame: &ImageFrame) -> Result<Vec<f32>> {
        let e = self.embed_batch(&frames_to_batch(&[frame]))?;
        Ok(e.row(0).to_vec())
    }
}

/// [z_t ‖ (z_t − z_{t−1}) ‖ (z_{t−1} − z_{t−2})], arguments oldest first.
pub fn flare_fuse(z_t2: &[f32], z_t1: &[f32], z_t: &[f32]) -> Result<Vec<f32>> {
    let d = z_t.len();
    if z_t1.len() != d || z_t2.len() != d {
        return Err(Error::InvalidInput("flare inputs must have equal lengths".into()));
    }
    let mut out = Vec::with_capacity(3 * d);
    out.extend_from_slice(z_t);
    for i in 0..d {
        out.push(z_t[i] - z_t1[i]);
    }
    for i in 0..d {
        out.push(z_t1[i] - z_t2[i]);
    }
    Ok(out)
}

/// [z_current ‖ z_goal]; the order is normative.
pub fn goal_concat(z_current: &[f32], z_goal: &[f32]) -> Result<Vec<f32>> {
    if z_current.len() != z_goal.len() {
        return Err(Error::InvalidInput("goal_concat inputs must have equal lengths".into()));
    }
    let mut out = Vec::with_capacity(2 * z_current.len());
    out.extend_from_slice(z_current);
    out.extend_from_slice(z_goal);
    Ok(out)
}

/// Simulator-state feature view of an environment.
#[derive(Debug)]
pub enum EnvState<'a> {
    Gridnav(&'a GridNavState),
    Armreach(&'a ArmReachState),
}

/// Reads compact features from simulator state, never from pixels.
pub fn ground_truth_features(state: &EnvState<'_>) -> Vec<f32> {
    match state {
        EnvState::Gridnav(s) => GridNav.ground_truth(s),
        EnvState::Armreach(s) => ArmReach.ground_truth(s),
    }
}

/// Fixed per-env layout metadata for the oracle features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthAdapter {
    pub env_id: EnvId,
}

impl GroundTruthAdapter {
    pub fn dim(&self) -> usize {
        self.env_id.gt_dim()
    }

    /// (field name, width) pairs in output order.
    pub fn feature_layout(&self) -> Vec<(&'static str, usize)> {
        match self.env_id {
            EnvId::Gridnav => vec![
                ("agent_xy", 2),
                ("heading_one_hot", 4),
                ("goal_xy", 2),
                ("maze_id", 1),
            ],
            EnvId::Armreach => vec![
                ("joint1_sincos", 2),
                ("joint2_sincos", 2),
                ("joint_velocities", 2),
                ("target_xy", 2),
            ],
        }
    }
}
