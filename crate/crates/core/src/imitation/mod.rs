//! Behavior-cloning trainers: a recurrent policy for goal-directed
//! navigation and a feed-forward policy for continuous control, each usable
//! with a frozen PVR, an end-to-end fine-tuned encoder, a from-scratch random
//! encoder, or ground-truth simulator features.

pub mod control;
pub mod nav;

pub use control::{bc_train_control, ControlBc, ControlPolicy, ControlPolicyConfig};
pub use nav::{bc_train_nav, NavBc, NavPolicy, NavPolicyConfig};

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array4};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{build_random_features, Backbone, Layer, RandomFeatures, RandomVariant};
use crate::checkpoint::{load_tensors, save_tensors, tensor_map, NamedTensor};
use crate::env::EnvId;
use crate::frame::{frames_to_batch, ImageFrame};
use crate::nn::{BatchNorm1d, Linear, Lstm, Param};
use crate::pvr::{assemble_pvr, FinetuneMode, Fusion, GroundTruthAdapter, Pvr};
use crate::{Error, Result};

/// How the encoder participates in behavior cloning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Encoder parameters excluded from the optimizer.
    Frozen,
    /// Pretrained encoder trained end-to-end with the policy.
    Finetune,
    /// Randomly initialized encoder trained as part of the policy.
    FromScratch,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Frozen => "frozen",
            TrainMode::Finetune => "finetune",
            TrainMode::FromScratch => "from_scratch",
        }
    }
}

/// The perception front-end feeding the policy.
#[derive(Debug, Clone)]
pub enum Perception {
    Pvr(Pvr),
    Random(RandomFeatures),
    GroundTruth(GroundTruthAdapter),
}

impl Perception {
    pub fn is_gt(&self) -> bool {
        matches!(self, Perception::GroundTruth(_))
    }

    /// Width of the per-frame feature vector (oracle dim for GT).
    pub fn frame_dim(&self) -> usize {
        match self {
            Perception::Pvr(p) => p.embed_dim(),
            Perception::Random(r) => r.out_dim(),
            Perception::GroundTruth(a) => a.dim(),
        }
    }

    /// Parameter checksum of the encoder; `None` for ground truth.
    pub fn checksum(&self) -> Option<String> {
        match self {
            Perception::Pvr(p) => Some(p.backbone.checksum()),
            Perception::Random(r) => Some(r.checksum()),
            Perception::GroundTruth(_) => None,
        }
    }

    /// Batched embedding without caches, chunked to bound peak memory.
    pub fn embed_batch_eval(&self, x: &Array4<f32>) -> Result<Array2<f32>> {
        let n = x.shape()[0];
        let d = self.frame_dim();
        let mut out = Array2::zeros((n, d));
        let chunk = 128;
        let mut i = 0;
        while i < n {
            let j = (i + chunk).min(n);
            let part = x.slice(ndarray::s![i..j, .., .., ..]).to_owned();
            let z = match self {
                Perception::Pvr(p) => p.embed_batch(&part)?,
                Perception::Random(r) => r.embed_batch_eval(&part),
                Perception::GroundTruth(_) => {
                    return Err(Error::InvalidInput(
                        "ground-truth perception does not embed frames".into(),
                    ))
                }
            };
            out.slice_mut(ndarray::s![i..j, ..]).assign(&z);
            i = j;
        }
        Ok(out)
    }

    pub fn embed_frames_eval(&self, frames: &[&ImageFrame]) -> Result<Array2<f32>> {
        self.embed_batch_eval(&frames_to_batch(frames))
    }

    /// Training-mode embedding with caches for [`Self::encoder_backward`].
    pub(crate) fn embed_batch_train(
        &mut self,
        x: &Array4<f32>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<f32>> {
        match self {
            Perception::Pvr(p) => p.backbone.pooled_l5_forward_train(x),
            Perception::Random(r) => Ok(r.embed_batch(x, true, rng)),
            Perception::GroundTruth(_) => Err(Error::InvalidInput(
                "ground-truth perception does not embed frames".into(),
            )),
        }
    }

    pub(crate) fn encoder_backward(&mut self, d: &Array2<f32>) {
        match self {
            Perception::Pvr(p) => p.backbone.pooled_l5_backward(d),
            Perception::Random(r) => r.backward(d),
            Perception::GroundTruth(_) => {}
        }
    }

    pub(crate) fn encoder_params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Perception::Pvr(p) => p.backbone.stage_params_mut(),
            Perception::Random(r) => r.params_mut(),
            Perception::GroundTruth(_) => Vec::new(),
        }
    }

    fn meta(&self) -> PerceptionMeta {
        match self {
            Perception::Pvr(p) => PerceptionMeta {
                kind: "pvr".into(),
                backbone_checksum: Some(p.backbone.checksum()),
                layers: Some(p.layers.clone()),
                fusion: Some(p.fusion),
                finetune_mode: Some(p.finetune_mode),
                variant: None,
                seed: None,
                frozen: Some(p.backbone.frozen),
                env_id: None,
            },
            Perception::Random(r) => PerceptionMeta {
                kind: "random".into(),
                backbone_checksum: Some(r.checksum()),
                layers: None,
                fusion: None,
                finetune_mode: None,
                variant: Some(r.variant),
                seed: Some(r.seed),
                frozen: Some(r.frozen),
                env_id: None,
            },
            Perception::GroundTruth(a) => PerceptionMeta {
                kind: "ground_truth".into(),
                backbone_checksum: None,
                layers: None,
                fusion: None,
                finetune_mode: None,
                variant: None,
                seed: None,
                frozen: None,
                env_id: Some(a.env_id),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PerceptionMeta {
    kind: String,
    backbone_checksum: Option<String>,
    layers: Option<Vec<Layer>>,
    fusion: Option<Fusion>,
    finetune_mode: Option<FinetuneMode>,
    variant: Option<RandomVariant>,
    seed: Option<u64>,
    frozen: Option<bool>,
    env_id: Option<EnvId>,
}

/// A validated (perception, mode) pair ready to hand to a trainer.
#[derive(Debug, Clone)]
pub struct TrainerSetup {
    pub perception: Perception,
    pub mode: TrainMode,
}

/// Validates a perception/mode combination.
///
/// Fine-tuning runs the encoder end-to-end and is supported for single-tap
/// L5 PVRs only; from-scratch training requires a random-features encoder.
pub fn set_mode(perception: Perception, mode: TrainMode) -> Result<TrainerSetup> {
    match (&perception, mode) {
        (Perception::GroundTruth(_), TrainMode::Frozen) => {}
        (Perception::GroundTruth(_), _) => {
            return Err(Error::InvalidConfig(
                "ground-truth features have no encoder to train".into(),
            ))
        }
        (Perception::Pvr(p), TrainMode::Frozen) => {
            if p.finetune_mode != FinetuneMode::Frozen {
                return Err(Error::InvalidConfig(
                    "frozen training needs a PVR assembled in frozen mode".into(),
                ));
            }
        }
        (Perception::Pvr(p), TrainMode::Finetune) => {
            if p.backbone.frozen {
                return Err(Error::FrozenViolation(
                    "fine-tuning a frozen backbone; thaw it explicitly first".into(),
                ));
            }
            if p.finetune_mode != FinetuneMode::Finetune {
                return Err(Error::InvalidConfig(
                    "fine-tuning needs a PVR assembled in finetune mode".into(),
                ));
            }
            if p.layers != vec![Layer::L5] {
                return Err(Error::Unsupported(
                    "end-to-end fine-tuning supports the single L5 tap only".into(),
                ));
            }
        }
        (Perception::Pvr(_), TrainMode::FromScratch) => {
            return Err(Error::InvalidConfig(
                "from_scratch requires a random-features encoder, not a pretrained backbone"
                    .into(),
            ))
        }
        (Perception::Random(r), TrainMode::Frozen) => {
            if !r.frozen {
                return Err(Error::InvalidConfig(
                    "frozen training needs a frozen random-features encoder".into(),
                ));
            }
        }
        (Perception::Random(r), TrainMode::FromScratch) => {
            if r.frozen {
                return Err(Error::FrozenViolation(
                    "from-scratch training needs an unfrozen encoder".into(),
                ));
            }
        }
        (Perception::Random(_), TrainMode::Finetune) => {
            return Err(Error::InvalidConfig(
                "fine-tuning applies to pretrained backbones only".into(),
            ))
        }
    }
    Ok(TrainerSetup { perception, mode })
}

/// One training-log entry (per nav update or control epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f32,
    pub wall_time_s: f64,
}

/// Appends rows to a CSV training log, writing the header on first use.
pub fn append_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let new = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if new {
        writeln!(f, "step,loss,grad_norm,wall_time_s")?;
    }
    for r in rows {
        writeln!(f, "{},{},{},{}", r.step, r.loss, r.grad_norm, r.wall_time_s)?;
    }
    Ok(())
}

/// The policy network of a finished run.
#[derive(Debug, Clone)]
pub enum PolicyNet {
    Nav(NavPolicy),
    Control(ControlPolicy),
}

/// A behavior-cloned policy with its perception, mode, and training log.
#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub env_id: EnvId,
    pub net: PolicyNet,
    pub perception: Perception,
    pub mode: TrainMode,
    pub config: serde_json::Value,
    pub log: Vec<LogRow>,
    /// Encoder checksum before training (absent for ground truth).
    pub pre_checksum: Option<String>,
    /// Encoder checksum after training; equals `pre_checksum` when frozen.
    pub post_checksum: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyMeta {
    env_id: EnvId,
    mode: TrainMode,
    config: serde_json::Value,
    perception: PerceptionMeta,
    pre_checksum: Option<String>,
    post_checksum: Option<String>,
    net_kind: String,
}

impl TrainedPolicy {
    /// Writes the policy checkpoint (manifest plus one array file per
    /// tensor). A random-features encoder is embedded under `enc.`; a PVR
    /// backbone is checkpointed separately and re-supplied at load time.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut tensors = match &self.net {
            PolicyNet::Nav(n) => n.export_tensors(),
            PolicyNet::Control(c) => c.export_tensors(),
        };
        if let Perception::Random(r) = &self.perception {
            tensors.extend(r.export_tensors("enc."));
        }
        let meta = PolicyMeta {
            env_id: self.env_id,
            mode: self.mode,
            config: self.config.clone(),
            perception: self.perception.meta(),
            pre_checksum: self.pre_checksum.clone(),
            post_checksum: self.post_checksum.clone(),
            net_kind: match self.net {
                PolicyNet::Nav(_) => "nav".into(),
                PolicyNet::Control(_) => "control".into(),
            },
        };
        save_tensors(dir, "policy", serde_json::to_value(&meta)?, &tensors)
    }

    /// Loads a policy checkpoint. `backbone` must be supplied (already in the
    /// right freeze state) when the checkpoint references a PVR perception.
    pub fn load(dir: &Path, backbone: Option<Backbone>) -> Result<TrainedPolicy> {
        let (meta_value, tensors) = load_tensors(dir, "policy")?;
        let meta: PolicyMeta = serde_json::from_value(meta_value)?;
        let map = tensor_map(tensors);

        let perception = match meta.perception.kind.as_str() {
            "pvr" => {
                let bb = backbone.ok_or_else(|| {
                    Error::InvalidInput("policy checkpoint needs its backbone".into())
                })?;
                let expected = meta.perception.backbone_checksum.as_deref().unwrap_or("");
                if bb.checksum() != expected {
                    return Err(Error::InvalidInput(format!(
                        "backbone checksum mismatch: {} vs {}",
                        bb.checksum(),
                        expected
                    )));
                }
                Perception::Pvr(assemble_pvr(
                    bb,
                    meta.perception.layers.as_deref().unwrap_or(&[Layer::L5]),
                    meta.perception.fusion.unwrap_or(Fusion::Single),
                    meta.perception.finetune_mode.unwrap_or(FinetuneMode::Frozen),
                )?)
            }
            "random" => {
                let mut r = build_random_features(
                    meta.perception.variant.ok_or_else(|| {
                        Error::InvalidInput("random perception without variant".into())
                    })?,
                    meta.perception.seed.unwrap_or(0),
                );
                r.import_tensors("enc.", &map)?;
                if meta.perception.frozen == Some(true) {
                    r.freeze();
                }
                Perception::Random(r)
            }
            "ground_truth" => Perception::GroundTruth(GroundTruthAdapter {
                env_id: meta.perception.env_id.unwrap_or(meta.env_id),
            }),
            other => {
                return Err(Error::InvalidInput(format!("unknown perception kind {other}")))
            }
        };

        let net = match meta.net_kind.as_str() {
            "nav" => {
                let cfg: NavPolicyConfig = serde_json::from_value(meta.config.clone())?;
                let mut n = NavPolicy::build(&perception, &cfg);
                n.import_tensors(&map)?;
                PolicyNet::Nav(n)
            }
            "control" => {
                let cfg: ControlPolicyConfig = serde_json::from_value(meta.config.clone())?;
                let mut c = ControlPolicy::build(&perception, &cfg, meta.env_id)?;
                c.import_tensors(&map)?;
                PolicyNet::Control(c)
            }
            other => return Err(Error::InvalidInput(format!("unknown net kind {other}"))),
        };

        Ok(TrainedPolicy {
            env_id: meta.env_id,
            net,
            perception,
            mode: meta.mode,
            config: meta.config,
            log: Vec::new(),
            pre_checksum: meta.pre_checksum,
            post_checksum: meta.post_checksum,
        })
    }
}

// named-tensor helpers shared by both policy nets

pub(crate) fn export_param(out: &mut Vec<NamedTensor>, name: &str, p: &Param) {
    out.push(NamedTensor::new(name, p.value.shape().to_vec(), p.value.iter().copied().collect()));
}

pub(crate) fn export_vec1(out: &mut Vec<NamedTensor>, name: &str, v: &Array1<f32>) {
    out.push(NamedTensor::new(name, vec![v.len()], v.to_vec()));
}

pub(crate) fn import_param(
    map: &BTreeMap<String, NamedTensor>,
    name: &str,
    p: &mut Param,
) -> Result<()> {
    let t = map
        .get(name)
        .ok_or_else(|| Error::InvalidInput(format!("missing tensor {name}")))?;
    if t.shape != p.value.shape() {
        return Err(Error::InvalidInput(format!("tensor {name} has the wrong shape")));
    }
    p.value = ndarray::ArrayD::from_shape_vec(t.shape.clone(), t.data.clone()).unwrap();
    p.grad = ndarray::ArrayD::zeros(p.value.raw_dim());
    Ok(())
}

pub(crate) fn import_vec1(
    map: &BTreeMap<String, NamedTensor>,
    name: &str,
    v: &mut Array1<f32>,
) -> Result<()> {
    let t = map
        .get(name)
        .ok_or_else(|| Error::InvalidInput(format!("missing tensor {name}")))?;
    if t.shape != [v.len()] {
        return Err(Error::InvalidInput(format!("tensor {name} has the wrong shape")));
    }
    *v = Array1::from_vec(t.data.clone());
    Ok(())
}

pub(crate) fn export_linear(out: &mut Vec<NamedTensor>, prefix: &str, l: &Linear) {
    export_param(out, &format!("{prefix}.weight"), &l.weight);
    export_param(out, &format!("{prefix}.bias"), &l.bias);
}

pub(crate) fn import_linear(
    map: &BTreeMap<String, NamedTensor>,
    prefix: &str,
    l: &mut Linear,
) -> Result<()> {
    import_param(map, &format!("{prefix}.weight"), &mut l.weight)?;
    import_param(map, &format!("{prefix}.bias"), &mut l.bias)
}

pub(crate) fn export_bn1(out: &mut Vec<NamedTensor>, prefix: &str, b: &BatchNorm1d) {
    export_param(out, &format!("{prefix}.gamma"), &b.gamma);
    export_param(out, &format!("{prefix}.beta"), &b.beta);
    export_vec1(out, &format!("{prefix}.running_mean"), &b.running_mean);
    export_vec1(out, &format!("{prefix}.running_var"), &b.running_var);
}

pub(crate) fn import_bn1(
    map: &BTreeMap<String, NamedTensor>,
    prefix: &str,
    b: &mut BatchNorm1d,
) -> Result<()> {
    import_param(map, &format!("{prefix}.gamma"), &mut b.gamma)?;
    import_param(map, &format!("{prefix}.beta"), &mut b.beta)?;
    import_vec1(map, &format!("{prefix}.running_mean"), &mut b.running_mean)?;
    import_vec1(map, &format!("{prefix}.running_var"), &mut b.running_var)
}

pub(crate) fn export_lstm(out: &mut Vec<NamedTensor>, prefix: &str, l: &Lstm) {
    for (i, layer) in l.layers.iter().enumerate() {
        export_param(out, &format!("{prefix}.l{i}.w_ih"), &layer.w_ih);
        export_param(out, &format!("{prefix}.l{i}.w_hh"), &layer.w_hh);
        export_param(out, &format!("{prefix}.l{i}.bias"), &layer.bias);
    }
}

pub(crate) fn import_lstm(
    map: &BTreeMap<String, NamedTensor>,
    prefix: &str,
    l: &mut Lstm,
) -> Result<()> {
    for (i, layer) in l.layers.iter_mut().enumerate() {
        import_param(map, &format!("{prefix}.l{i}.w_ih"), &mut layer.w_ih)?;
        import_param(map, &format!("{prefix}.l{i}.w_hh"), &mut layer.w_hh)?;
        import_param(map, &format!("{prefix}.l{i}.bias"), &mut layer.bias)?;
    }
    Ok(())
}

/// Cross-entropy over masked step logits. `logits` is (N, A), `labels` (N,),
/// `mask` (N,) with 1 for real steps. Returns (mean loss over unmasked steps,
/// d(logits)); masked rows contribute exactly zero to both.
pub(crate) fn masked_ce(
    logits: &Array2<f32>,
    labels: &[u32],
    mask: &[f32],
) -> (f64, Array2<f32>) {
    let (n, a) = logits.dim();
    let m: f64 = mask.iter().map(|&v| v as f64).sum();
    let denom = m.max(1.0);
    let mut d = Array2::zeros((n, a));
    let mut loss = 0.0f64;
    for i in 0..n {
        if mask[i] == 0.0 {
            continue;
        }
        let row = logits.row(i);
        let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let z: f64 = row.iter().map(|&l| ((l as f64) - mx).exp()).sum();
        let li = labels[i] as usize;
        loss += mx + z.ln() - logits[[i, li]] as f64;
        for j in 0..a {
            let p = ((logits[[i, j]] as f64 - mx).exp() / z) as f32;
            let y = if j == li { 1.0 } else { 0.0 };
            d[[i, j]] = (p - y) / denom as f32;
        }
    }
    (loss / denom, d)
}
