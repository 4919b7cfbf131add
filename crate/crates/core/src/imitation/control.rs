//! Feed-forward behavior cloning for continuous control: flare-fused frame
//! embeddings (or ground-truth state) feed a 3-layer ReLU MLP with a linear
//! action head, trained with mean-squared error.

use std::time::Instant;

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::NamedTensor;
use crate::env::demos::DemoDataset;
use crate::env::EnvId;
use crate::frame::frames_to_batch;
use crate::nn::{grad_global_norm, Adam, BatchNorm1d, Linear, Optimizer, Relu};
use crate::pvr::Fusion;
use crate::{derive_seed, Error, Result};

use super::{
    export_bn1, export_linear, import_bn1, import_linear, LogRow, Perception, PolicyNet,
    TrainMode, TrainedPolicy, TrainerSetup,
};

/// Feed-forward control policy hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicyConfig {
    /// Batch-normalize the policy input; always skipped for ground truth.
    pub input_norm: bool,
    pub hidden: usize,
    pub depth: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    /// Optional cap on minibatches per epoch (epoch subsampling for
    /// expensive end-to-end encoders); `None` runs the full pass.
    #[serde(default)]
    pub max_batches_per_epoch: Option<usize>,
}

impl Default for ControlPolicyConfig {
    fn default() -> Self {
        Self {
            input_norm: true,
            hidden: 256,
            depth: 3,
            batch_size: 256,
            epochs: 100,
            learning_rate: 1e-3,
            max_batches_per_epoch: None,
        }
    }
}

/// input-norm -> depth x (linear + ReLU) -> linear action head.
#[derive(Debug, Clone)]
pub struct ControlPolicy {
    pub input_dim: usize,
    pub action_dim: usize,
    pub bn: Option<BatchNorm1d>,
    pub mlp: Vec<(Linear, Relu)>,
    pub head: Linear,
}

impl ControlPolicy {
    pub fn init(
        rng: &mut ChaCha8Rng,
        input_dim: usize,
        action_dim: usize,
        use_bn: bool,
        cfg: &ControlPolicyConfig,
    ) -> Self {
        let mut mlp = Vec::with_capacity(cfg.depth);
        let mut din = input_dim;
        for _ in 0..cfg.depth {
            mlp.push((Linear::new(rng, din, cfg.hidden), Relu::new()));
            din = cfg.hidden;
        }
        Self {
            input_dim,
            action_dim,
            bn: use_bn.then(|| BatchNorm1d::new(input_dim)),
            mlp,
            head: Linear::new(rng, din, action_dim),
        }
    }

    /// Architecture for a given perception; weights are placeholders until
    /// imported (used by checkpoint loading).
    pub fn build(
        perception: &Perception,
        cfg: &ControlPolicyConfig,
        env_id: EnvId,
    ) -> Result<Self> {
        let input_dim = control_input_dim(perception);
        let use_bn = cfg.input_norm && !perception.is_gt();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(Self::init(&mut rng, input_dim, env_id.action_dim(), use_bn, cfg))
    }

    pub fn forward_train(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let mut h = match &mut self.bn {
            Some(bn) => bn.forward(x, true),
            None => x.clone(),
        };
        for (l, r) in self.mlp.iter_mut() {
            h = r.forward2(&l.forward(&h, true), true);
        }
        self.head.forward(&h, true)
    }

    pub fn backward(&mut self, dout: &Array2<f32>) -> Array2<f32> {
        let mut d = self.head.backward(dout);
        for (l, r) in self.mlp.iter_mut().rev() {
            d = l.backward(&r.backward2(&d));
        }
        match &mut self.bn {
            Some(bn) => bn.backward(&d),
            None => d,
        }
    }

    /// Deterministic eval-mode actions (running batch-norm statistics).
    pub fn act(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut h = match &self.bn {
            Some(bn) => bn.forward_eval(x),
            None => x.clone(),
        };
        for (l, _) in &self.mlp {
            h = l.forward_no_cache(&h).mapv(|v| v.max(0.0));
        }
        self.head.forward_no_cache(&h)
    }

    pub fn params_mut(&mut self) -> Vec<&mut crate::nn::Param> {
        let mut out = Vec::new();
        if let Some(bn) = &mut self.bn {
            out.extend(bn.params_mut());
        }
        for (l, _) in self.mlp.iter_mut() {
            out.extend(l.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn export_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        if let Some(bn) = &self.bn {
            export_bn1(&mut out, "bn", bn);
        }
        for (i, (l, _)) in self.mlp.iter().enumerate() {
            export_linear(&mut out, &format!("mlp{i}"), l);
        }
        export_linear(&mut out, "head", &self.head);
        out
    }

    pub fn import_tensors(
        &mut self,
        map: &std::collections::BTreeMap<String, NamedTensor>,
    ) -> Result<()> {
        if let Some(bn) = &mut self.bn {
            import_bn1(map, "bn", bn)?;
        }
        for (i, (l, _)) in self.mlp.iter_mut().enumerate() {
            import_linear(map, &format!("mlp{i}"), l)?;
        }
        import_linear(map, "head", &mut self.head)
    }
}

pub(crate) fn control_input_dim(perception: &Perception) -> usize {
    if perception.is_gt() {
        perception.frame_dim()
    } else {
        3 * perception.frame_dim()
    }
}

/// [z_t ‖ z_t − z_{t−1} ‖ z_{t−1} − z_{t−2}] built from a cached embedding
/// sequence with the first two steps repeating the initial frame.
fn flare_row(z: &Array2<f32>, t: usize, out: &mut ndarray::ArrayViewMut1<f32>) {
    let fd = z.ncols();
    let zt = z.row(t);
    let zt1 = z.row(t.saturating_sub(1));
    let zt2 = z.row(t.saturating_sub(2));
    for j in 0..fd {
        out[j] = zt[j];
        out[fd + j] = zt[j] - zt1[j];
        out[2 * fd + j] = zt1[j] - zt2[j];
    }
}

/// Incremental control BC trainer; evaluation harnesses interleave
/// [`ControlBc::train_epoch`] with rollouts.
pub struct ControlBc {
    pub policy: ControlPolicy,
    pub perception: Perception,
    pub mode: TrainMode,
    pub cfg: ControlPolicyConfig,
    pub log: Vec<LogRow>,
    pub epochs_done: usize,
    rng: ChaCha8Rng,
    opt: Adam,
    /// Per-trajectory per-step frame embeddings (frozen) or GT rows.
    feats: Option<Vec<Array2<f32>>>,
    samples: Vec<(usize, usize)>,
    start: Instant,
    pre_checksum: Option<String>,
}

impl ControlBc {
    pub fn new(
        dataset: &DemoDataset,
        setup: TrainerSetup,
        cfg: &ControlPolicyConfig,
        seed: u64,
    ) -> Result<Self> {
        if dataset.env_id != EnvId::Armreach {
            return Err(Error::InvalidInput("control BC needs an ArmReach dataset".into()));
        }
        if dataset.trajectories.is_empty() || dataset.total_steps() == 0 {
            return Err(Error::InvalidInput("empty demonstration dataset".into()));
        }
        let TrainerSetup { perception, mode } = setup;
        if let Perception::Pvr(p) = &perception {
            if p.fusion != Fusion::Flare3 {
                return Err(Error::InvalidConfig("control BC needs flare fusion".into()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "bc-control"));
        let use_bn = cfg.input_norm && !perception.is_gt();
        let policy = ControlPolicy::init(
            &mut rng,
            control_input_dim(&perception),
            dataset.env_id.action_dim(),
            use_bn,
            cfg,
        );

        let trainable_encoder = mode != TrainMode::Frozen && !perception.is_gt();
        let feats = if trainable_encoder {
            None
        } else {
            let mut out = Vec::with_capacity(dataset.trajectories.len());
            for traj in &dataset.trajectories {
                if perception.is_gt() {
                    let d = traj.gt_states[0].len();
                    let mut m = Array2::zeros((traj.len(), d));
                    for (t, s) in traj.gt_states.iter().enumerate() {
                        m.row_mut(t).assign(&ndarray::ArrayView1::from(&s[..]));
                    }
                    out.push(m);
                } else {
                    let frames: Vec<&crate::ImageFrame> =
                        traj.observations.iter().map(|o| &o.frames[0]).collect();
                    out.push(perception.embed_frames_eval(&frames)?);
                }
            }
            Some(out)
        };
        let samples: Vec<(usize, usize)> = dataset
            .trajectories
            .iter()
            .enumerate()
            .flat_map(|(ti, traj)| (0..traj.len()).map(move |t| (ti, t)))
            .collect();
        let pre_checksum = perception.checksum();
        Ok(Self {
            policy,
            perception,
            mode,
            cfg: cfg.clone(),
            log: Vec::new(),
            epochs_done: 0,
            rng,
            opt: Adam::new(cfg.learning_rate),
            feats,
            samples,
            start: Instant::now(),
            pre_checksum,
        })
    }

    /// One pass over all (trajectory, step) samples in shuffled order.
    pub fn train_epoch(&mut self, dataset: &DemoDataset) -> Result<&LogRow> {
        let mut order = self.samples.clone();
        order.shuffle(&mut self.rng);
        if let Some(max_batches) = self.cfg.max_batches_per_epoch {
            order.truncate(max_batches * self.cfg.batch_size);
        }
        let a_dim = self.policy.action_dim;
        let d = self.policy.input_dim;
        let mut total = 0.0f64;
        let mut count = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let bsz = chunk.len();
            let mut x = Array2::<f32>::zeros((bsz, d));
            let mut target = Array2::<f32>::zeros((bsz, a_dim));
            for (i, &(ti, t)) in chunk.iter().enumerate() {
                let act = &dataset.trajectories[ti].actions[t];
                target.row_mut(i).assign(&ndarray::ArrayView1::from(&act[..]));
            }

            let enc_fd = if let Some(feats) = &self.feats {
                for (i, &(ti, t)) in chunk.iter().enumerate() {
                    if self.perception.is_gt() {
                        x.row_mut(i).assign(&feats[ti].row(t));
                    } else {
                        flare_row(&feats[ti], t, &mut x.row_mut(i));
                    }
                }
                None
            } else {
                let fd = self.perception.frame_dim();
                let mut frames = Vec::with_capacity(3 * bsz);
                for &(ti, t) in chunk {
                    let obs = &dataset.trajectories[ti].observations;
                    frames.push(&obs[t.saturating_sub(2)].frames[0]);
                    frames.push(&obs[t.saturating_sub(1)].frames[0]);
                    frames.push(&obs[t].frames[0]);
                }
                let batch: Array4<f32> = frames_to_batch(&frames);
                let z = self.perception.embed_batch_train(&batch, &mut self.rng)?;
                for i in 0..bsz {
                    let (zt2, zt1, zt) = (z.row(3 * i), z.row(3 * i + 1), z.row(3 * i + 2));
                    let mut row = x.row_mut(i);
                    for j in 0..fd {
                        row[j] = zt[j];
                        row[fd + j] = zt[j] - zt1[j];
                        row[2 * fd + j] = zt1[j] - zt2[j];
                    }
                }
                Some(fd)
            };

            let pred = self.policy.forward_train(&x);
            let diff = &pred - &target;
            let numel = (bsz * a_dim) as f64;
            let loss = diff.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / numel;
            let dpred = diff.mapv(|v| 2.0 * v / numel as f32);

            for p in self.policy.params_mut() {
                p.zero_grad();
            }
            for p in self.perception.encoder_params_mut() {
                p.zero_grad();
            }
            let dx = self.policy.backward(&dpred);
            if let Some(fd) = enc_fd {
                // flare backward: rows ordered (t-2, t-1, t) per sample
                let mut dz = Array2::<f32>::zeros((3 * bsz, fd));
                for i in 0..bsz {
                    let row = dx.row(i);
                    for j in 0..fd {
                        let (b0, b1, b2) = (row[j], row[fd + j], row[2 * fd + j]);
                        dz[[3 * i, j]] = -b2;
                        dz[[3 * i + 1, j]] = b2 - b1;
                        dz[[3 * i + 2, j]] = b0 + b1;
                    }
                }
                self.perception.encoder_backward(&dz);
            }

            let mut params = self.policy.params_mut();
            params.extend(self.perception.encoder_params_mut());
            self.opt.step(&mut params);

            total += loss * bsz as f64;
            count += bsz;
        }

        // epoch-mean loss plus the gradient norm of the last minibatch
        let mut params = self.policy.params_mut();
        params.extend(self.perception.encoder_params_mut());
        let grad_norm = grad_global_norm(&params);
        self.epochs_done += 1;
        self.log.push(LogRow {
            step: self.epochs_done as u64,
            loss: total / count.max(1) as f64,
            grad_norm,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        });
        Ok(self.log.last().unwrap())
    }

    /// Runs the remaining epochs up to `cfg.epochs`.
    pub fn run(&mut self, dataset: &DemoDataset) -> Result<()> {
        while self.epochs_done < self.cfg.epochs {
            self.train_epoch(dataset)?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainedPolicy {
        let post_checksum = self.perception.checksum();
        TrainedPolicy {
            env_id: EnvId::Armreach,
            net: PolicyNet::Control(self.policy),
            perception: self.perception,
            mode: self.mode,
            config: serde_json::to_value(&self.cfg).unwrap(),
            log: self.log,
            pre_checksum: self.pre_checksum,
            post_checksum,
        }
    }
}

/// Trains a control policy to completion and returns it with its log.
pub fn bc_train_control(
    dataset: &DemoDataset,
    setup: TrainerSetup,
    cfg: &ControlPolicyConfig,
    seed: u64,
) -> Result<TrainedPolicy> {
    let mut bc = ControlBc::new(dataset, setup, cfg, seed)?;
    bc.run(dataset)?;
    Ok(bc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_backbone, build_random_features, BackboneSpec, Layer, RandomVariant};
    use crate::env::demos::{collect_demos, StepObs, Trajectory};
    use crate::imitation::set_mode;
    use crate::pvr::{assemble_pvr, FinetuneMode, GroundTruthAdapter};
    use crate::ImageFrame;
    use rand::Rng;

    fn gt_setup() -> TrainerSetup {
        set_mode(
            Perception::GroundTruth(GroundTruthAdapter { env_id: EnvId::Armreach }),
            TrainMode::Frozen,
        )
        .unwrap()
    }

    fn fake_gt_dataset(n_traj: usize, len: usize, seed: u64) -> DemoDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajectories = (0..n_traj)
            .map(|i| Trajectory {
                env_id: EnvId::Armreach,
                seed: i as u64,
                observations: (0..len)
                    .map(|_| StepObs { frames: vec![ImageFrame::new(1, 1)] })
                    .collect(),
                actions: (0..len).map(|_| vec![0.3, -0.2]).collect(),
                rewards: vec![0.0; len],
                gt_states: (0..len)
                    .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
                success: false,
            })
            .collect();
        DemoDataset { env_id: EnvId::Armreach, expert_id: "test".into(), seed, trajectories }
    }

    #[test]
    fn defaults_match_recipe() {
        let cfg = ControlPolicyConfig::default();
        assert_eq!(cfg.hidden, 256);
        assert_eq!(cfg.depth, 3);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.learning_rate, 1e-3);
    }

    #[test]
    fn constant_action_mse_vanishes() {
        let ds = fake_gt_dataset(2, 100, 1);
        let cfg = ControlPolicyConfig {
            hidden: 32,
            batch_size: 50,
            epochs: 100,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let policy = bc_train_control(&ds, gt_setup(), &cfg, 3).unwrap();
        assert_eq!(policy.log.len(), 100);
        let last = policy.log.last().unwrap().loss;
        assert!(last < 1e-3, "final MSE {last}");
        assert!(policy.log.iter().all(|r| r.loss.is_finite() && r.loss >= 0.0));
    }

    #[test]
    fn frozen_flare_path() {
        let ds = collect_demos(EnvId::Armreach, 1, 21).unwrap();
        let spec =
            BackboneSpec { stage_channels: vec![4, 4, 4, 4, 8], seed: 3, ..Default::default() };
        let mut bb = build_backbone(&spec).unwrap();
        bb.freeze();
        let pvr = assemble_pvr(bb, &[Layer::L5], Fusion::Flare3, FinetuneMode::Frozen).unwrap();
        let setup = set_mode(Perception::Pvr(pvr), TrainMode::Frozen).unwrap();
        let cfg = ControlPolicyConfig { hidden: 16, batch_size: 64, epochs: 2, ..Default::default() };
        let policy = bc_train_control(&ds, setup, &cfg, 4).unwrap();
        assert_eq!(policy.pre_checksum, policy.post_checksum);
        assert_eq!(policy.log.len(), 2);
        assert!(policy.log.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn from_scratch_trains_encoder() {
        let mut ds = collect_demos(EnvId::Armreach, 1, 22).unwrap();
        let traj = &mut ds.trajectories[0];
        traj.observations.truncate(24);
        traj.actions.truncate(24);
        traj.rewards.truncate(24);
        traj.gt_states.truncate(24);
        let rf = build_random_features(RandomVariant::Control, 5);
        let setup = set_mode(Perception::Random(rf), TrainMode::FromScratch).unwrap();
        let cfg = ControlPolicyConfig { hidden: 16, batch_size: 8, epochs: 1, ..Default::default() };
        let policy = bc_train_control(&ds, setup, &cfg, 6).unwrap();
        assert_ne!(policy.pre_checksum, policy.post_checksum);
    }

    #[test]
    fn rejects_wrong_env_and_fusion() {
        let ds = fake_gt_dataset(1, 10, 0);
        let nav_ds = DemoDataset {
            env_id: EnvId::Gridnav,
            expert_id: "test".into(),
            seed: 0,
            trajectories: Vec::new(),
        };
        assert!(ControlBc::new(&nav_ds, gt_setup(), &ControlPolicyConfig::default(), 0).is_err());

        let spec =
            BackboneSpec { stage_channels: vec![4, 4, 4, 4, 8], seed: 3, ..Default::default() };
        let mut bb = build_backbone(&spec).unwrap();
        bb.freeze();
        let pvr =
            assemble_pvr(bb, &[Layer::L5], Fusion::GoalConcat, FinetuneMode::Frozen).unwrap();
        let setup = set_mode(Perception::Pvr(pvr), TrainMode::Frozen).unwrap();
        assert!(ControlBc::new(&ds, setup, &ControlPolicyConfig::default(), 0).is_err());
    }
}
