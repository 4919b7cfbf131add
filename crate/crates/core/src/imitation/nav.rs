//! Recurrent behavior cloning for goal-directed navigation: per-step
//! goal-concat features feed an MLP, a two-layer LSTM, and a softmax head
//! over the four discrete actions. Windows of consecutive steps are sampled
//! per update with truncated backprop inside the window.

use std::time::Instant;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::NamedTensor;
use crate::env::demos::DemoDataset;
use crate::env::EnvId;
use crate::frame::frames_to_batch;
use crate::nn::{clip_grad_norm, BatchNorm1d, Linear, Lstm, LstmState, Optimizer, Relu, RmsProp};
use crate::pvr::Fusion;
use crate::{derive_seed, Error, Result};

use super::{
    export_bn1, export_linear, export_lstm, import_bn1, import_linear, import_lstm, masked_ce,
    LogRow, Perception, PolicyNet, TrainMode, TrainedPolicy, TrainerSetup,
};

pub const NAV_ACTIONS: usize = 4;

/// Recurrent navigation policy hyperparameters.
///
/// `total_updates` defaults to the desk-scale 5,000 (the full-scale reference
/// run uses 125,000).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavPolicyConfig {
    /// Batch-normalize the policy input. Always skipped for ground-truth
    /// features regardless of this flag.
    pub input_norm: bool,
    pub mlp_hidden: usize,
    pub lstm_hidden: usize,
    /// Windows per gradient update.
    pub windows_per_update: usize,
    /// Consecutive steps per window; shorter trajectories are padded with
    /// their terminal step under a loss mask.
    pub window_len: usize,
    pub total_updates: usize,
    pub learning_rate: f32,
    pub grad_clip_norm: f32,
}

impl Default for NavPolicyConfig {
    fn default() -> Self {
        Self {
            input_norm: true,
            mlp_hidden: 1024,
            lstm_hidden: 1024,
            windows_per_update: 16,
            window_len: 100,
            total_updates: 5_000,
            learning_rate: 1e-4,
            grad_clip_norm: 40.0,
        }
    }
}

/// input-norm -> 2-layer ReLU MLP -> 2-layer LSTM -> linear action logits.
#[derive(Debug, Clone)]
pub struct NavPolicy {
    pub input_dim: usize,
    pub bn: Option<BatchNorm1d>,
    pub fc1: Linear,
    r1: Relu,
    pub fc2: Linear,
    r2: Relu,
    pub lstm: Lstm,
    pub head: Linear,
}

impl NavPolicy {
    pub fn init(rng: &mut ChaCha8Rng, input_dim: usize, use_bn: bool, cfg: &NavPolicyConfig) -> Self {
        Self {
            input_dim,
            bn: use_bn.then(|| BatchNorm1d::new(input_dim)),
            fc1: Linear::new(rng, input_dim, cfg.mlp_hidden),
            r1: Relu::new(),
            fc2: Linear::new(rng, cfg.mlp_hidden, cfg.mlp_hidden),
            r2: Relu::new(),
            lstm: Lstm::new(rng, cfg.mlp_hidden, cfg.lstm_hidden, 2),
            head: Linear::new(rng, cfg.lstm_hidden, NAV_ACTIONS),
        }
    }

    /// Architecture for a given perception; weights are placeholders until
    /// imported (used by checkpoint loading).
    pub fn build(perception: &Perception, cfg: &NavPolicyConfig) -> Self {
        let input_dim = nav_input_dim(perception);
        let use_bn = cfg.input_norm && !perception.is_gt();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Self::init(&mut rng, input_dim, use_bn, cfg)
    }

    /// Training forward over a (T, B, D) window batch from zero recurrent
    /// state; returns (T, B, A) logits.
    pub fn forward_train(&mut self, x: &Array3<f32>) -> Array3<f32> {
        let (t, b, d) = x.dim();
        let flat = x.to_owned().into_shape_with_order((t * b, d)).unwrap();
        let mut h = match &mut self.bn {
            Some(bn) => bn.forward(&flat, true),
            None => flat,
        };
        h = self.r1.forward2(&self.fc1.forward(&h, true), true);
        h = self.r2.forward2(&self.fc2.forward(&h, true), true);
        let hm = h.shape()[1];
        let seq = h.into_shape_with_order((t, b, hm)).unwrap();
        let out = self.lstm.forward_seq(&seq, true);
        let hl = out.shape()[2];
        let flat_out = out.into_shape_with_order((t * b, hl)).unwrap();
        let logits = self.head.forward(&flat_out, true);
        logits.into_shape_with_order((t, b, NAV_ACTIONS)).unwrap()
    }

    /// Backward from (T, B, A) logit gradients; returns d(input) (T, B, D).
    pub fn backward(&mut self, dlogits: &Array3<f32>) -> Array3<f32> {
        let (t, b, a) = dlogits.dim();
        let flat = dlogits.to_owned().into_shape_with_order((t * b, a)).unwrap();
        let dtop = self.head.backward(&flat);
        let hl = dtop.shape()[1];
        let dseq = dtop.into_shape_with_order((t, b, hl)).unwrap();
        let dmlp = self.lstm.backward_seq(&dseq);
        let hm = dmlp.shape()[2];
        let mut d = dmlp.into_shape_with_order((t * b, hm)).unwrap();
        d = self.fc2.backward(&self.r2.backward2(&d));
        d = self.fc1.backward(&self.r1.backward2(&d));
        if let Some(bn) = &mut self.bn {
            d = bn.backward(&d);
        }
        d.into_shape_with_order((t, b, self.input_dim)).unwrap()
    }

    /// Greedy actions for one step of a rollout batch, advancing `state`.
    /// Uses running batch-norm statistics.
    pub fn act_step(&self, x: &Array2<f32>, state: &mut LstmState) -> Vec<usize> {
        let mut h = match &self.bn {
            Some(bn) => bn.forward_eval(x),
            None => x.clone(),
        };
        h = self.fc1.forward_no_cache(&h).mapv(|v| v.max(0.0));
        h = self.fc2.forward_no_cache(&h).mapv(|v| v.max(0.0));
        let out = self.lstm.forward_step(&h, state);
        let logits = self.head.forward_no_cache(&out);
        logits
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            })
            .collect()
    }

    pub fn zero_state(&self, batch: usize) -> LstmState {
        LstmState::zeros(self.lstm.layers.len(), batch, self.lstm.hidden)
    }

    pub fn params_mut(&mut self) -> Vec<&mut crate::nn::Param> {
        let mut out = Vec::new();
        if let Some(bn) = &mut self.bn {
            out.extend(bn.params_mut());
        }
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out.extend(self.lstm.params_mut());
        out.extend(self.head.params_mut());
        out
    }

    pub fn export_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        if let Some(bn) = &self.bn {
            export_bn1(&mut out, "bn", bn);
        }
        export_linear(&mut out, "fc1", &self.fc1);
        export_linear(&mut out, "fc2", &self.fc2);
        export_lstm(&mut out, "lstm", &self.lstm);
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
        import_linear(map, "fc1", &mut self.fc1)?;
        import_linear(map, "fc2", &mut self.fc2)?;
        import_lstm(map, "lstm", &mut self.lstm)?;
        import_linear(map, "head", &mut self.head)
    }
}

pub(crate) fn nav_input_dim(perception: &Perception) -> usize {
    if perception.is_gt() {
        perception.frame_dim()
    } else {
        2 * perception.frame_dim()
    }
}

/// Incremental navigation BC trainer; evaluation harnesses interleave
/// [`NavBc::update`] with rollouts.
pub struct NavBc {
    pub policy: NavPolicy,
    pub perception: Perception,
    pub mode: TrainMode,
    pub cfg: NavPolicyConfig,
    pub log: Vec<LogRow>,
    pub updates_done: usize,
    rng: ChaCha8Rng,
    opt: RmsProp,
    /// Per-trajectory per-step policy inputs, precomputed for frozen/GT runs.
    feats: Option<Vec<Array2<f32>>>,
    labels: Vec<Vec<u32>>,
    start: Instant,
    pre_checksum: Option<String>,
}

impl NavBc {
    pub fn new(
        dataset: &DemoDataset,
        setup: TrainerSetup,
        cfg: &NavPolicyConfig,
        seed: u64,
    ) -> Result<Self> {
        if dataset.env_id != EnvId::Gridnav {
            return Err(Error::InvalidInput("nav BC needs a GridNav dataset".into()));
        }
        if dataset.trajectories.is_empty() || dataset.total_steps() == 0 {
            return Err(Error::InvalidInput("empty demonstration dataset".into()));
        }
        let TrainerSetup { perception, mode } = setup;
        if let Perception::Pvr(p) = &perception {
            if p.fusion != Fusion::GoalConcat {
                return Err(Error::InvalidConfig("nav BC needs goal-concat fusion".into()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "bc-nav"));
        let use_bn = cfg.input_norm && !perception.is_gt();
        let policy = NavPolicy::init(&mut rng, nav_input_dim(&perception), use_bn, cfg);

        let labels: Vec<Vec<u32>> = dataset
            .trajectories
            .iter()
            .map(|t| t.actions.iter().map(|a| a[0] as u32).collect())
            .collect();

        let trainable_encoder = mode != TrainMode::Frozen && !perception.is_gt();
        let feats = if trainable_encoder {
            None
        } else {
            Some(precompute_nav_feats(&perception, dataset)?)
        };
        let pre_checksum = perception.checksum();
        Ok(Self {
            policy,
            perception,
            mode,
            cfg: cfg.clone(),
            log: Vec::new(),
            updates_done: 0,
            rng,
            opt: RmsProp::new(cfg.learning_rate),
            feats,
            labels,
            start: Instant::now(),
            pre_checksum,
        })
    }

    /// One gradient update over freshly sampled windows.
    pub fn update(&mut self, dataset: &DemoDataset) -> Result<&LogRow> {
        let t_len = self.cfg.window_len;
        let b = self.cfg.windows_per_update;
        let n_traj = dataset.trajectories.len();

        let mut windows = Vec::with_capacity(b);
        for _ in 0..b {
            let ti = self.rng.gen_range(0..n_traj);
            let len = dataset.trajectories[ti].len();
            let start = if len > t_len { self.rng.gen_range(0..=len - t_len) } else { 0 };
            windows.push((ti, start));
        }

        let d = self.policy.input_dim;
        let mut x = Array3::<f32>::zeros((t_len, b, d));
        let mut labels = vec![0u32; t_len * b];
        let mut mask = vec![0.0f32; t_len * b];
        for (bi, &(ti, start)) in windows.iter().enumerate() {
            let len = dataset.trajectories[ti].len();
            for t in 0..t_len {
                let step = (start + t).min(len - 1);
                if start + t < len {
                    labels[t * b + bi] = self.labels[ti][step];
                    mask[t * b + bi] = 1.0;
                }
                if let Some(feats) = &self.feats {
                    x.slice_mut(ndarray::s![t, bi, ..]).assign(&feats[ti].row(step));
                }
            }
        }

        // trainable encoders embed window frames with caches for backprop
        let enc_layout = if self.feats.is_none() {
            let fd = self.perception.frame_dim();
            let mut frames = Vec::with_capacity(t_len * b + b);
            for t in 0..t_len {
                for &(ti, start) in &windows {
                    let traj = &dataset.trajectories[ti];
                    let step = (start + t).min(traj.len() - 1);
                    frames.push(&traj.observations[step].frames[0]);
                }
            }
            for &(ti, _) in &windows {
                frames.push(&dataset.trajectories[ti].observations[0].frames[1]);
            }
            let batch: Array4<f32> = frames_to_batch(&frames);
            let z = self.perception.embed_batch_train(&batch, &mut self.rng)?;
            for t in 0..t_len {
                for bi in 0..b {
                    x.slice_mut(ndarray::s![t, bi, 0..fd]).assign(&z.row(t * b + bi));
                    x.slice_mut(ndarray::s![t, bi, fd..]).assign(&z.row(t_len * b + bi));
                }
            }
            Some((fd, t_len * b + b))
        } else {
            None
        };

        let logits = self.policy.forward_train(&x);
        let flat = logits.into_shape_with_order((t_len * b, NAV_ACTIONS)).unwrap();
        let (loss, dflat) = masked_ce(&flat, &labels, &mask);
        let dlogits = dflat.into_shape_with_order((t_len, b, NAV_ACTIONS)).unwrap();

        for p in self.policy.params_mut() {
            p.zero_grad();
        }
        for p in self.perception.encoder_params_mut() {
            p.zero_grad();
        }
        let dx = self.policy.backward(&dlogits);
        if let Some((fd, n_enc)) = enc_layout {
            let mut dz = Array2::<f32>::zeros((n_enc, fd));
            for t in 0..t_len {
                for bi in 0..b {
                    let row = dx.slice(ndarray::s![t, bi, ..]);
                    dz.row_mut(t * b + bi).assign(&row.slice(ndarray::s![0..fd]));
                    let mut goal_row = dz.row_mut(t_len * b + bi);
                    goal_row += &row.slice(ndarray::s![fd..]);
                }
            }
            self.perception.encoder_backward(&dz);
        }

        let mut params = self.policy.params_mut();
        params.extend(self.perception.encoder_params_mut());
        let grad_norm = clip_grad_norm(&mut params, self.cfg.grad_clip_norm);
        self.opt.step(&mut params);

        self.updates_done += 1;
        self.log.push(LogRow {
            step: self.updates_done as u64,
            loss,
            grad_norm,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        });
        Ok(self.log.last().unwrap())
    }

    /// Runs the remaining updates up to `cfg.total_updates`.
    pub fn run(&mut self, dataset: &DemoDataset) -> Result<()> {
        while self.updates_done < self.cfg.total_updates {
            self.update(dataset)?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainedPolicy {
        let post_checksum = self.perception.checksum();
        TrainedPolicy {
            env_id: EnvId::Gridnav,
            net: PolicyNet::Nav(self.policy),
            perception: self.perception,
            mode: self.mode,
            config: serde_json::to_value(&self.cfg).unwrap(),
            log: self.log,
            pre_checksum: self.pre_checksum,
            post_checksum,
        }
    }
}

fn precompute_nav_feats(
    perception: &Perception,
    dataset: &DemoDataset,
) -> Result<Vec<Array2<f32>>> {
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
            let fd = perception.frame_dim();
            let cur: Vec<&crate::ImageFrame> =
                traj.observations.iter().map(|o| &o.frames[0]).collect();
            let z_cur = perception.embed_frames_eval(&cur)?;
            let z_goal = perception.embed_frames_eval(&[&traj.observations[0].frames[1]])?;
            let mut m = Array2::zeros((traj.len(), 2 * fd));
            for t in 0..traj.len() {
                m.slice_mut(ndarray::s![t, 0..fd]).assign(&z_cur.row(t));
                m.slice_mut(ndarray::s![t, fd..]).assign(&z_goal.row(0));
            }
            out.push(m);
        }
    }
    Ok(out)
}

/// Trains a navigation policy to completion and returns it with its log.
pub fn bc_train_nav(
    dataset: &DemoDataset,
    setup: TrainerSetup,
    cfg: &NavPolicyConfig,
    seed: u64,
) -> Result<TrainedPolicy> {
    let mut bc = NavBc::new(dataset, setup, cfg, seed)?;
    bc.run(dataset)?;
    Ok(bc.finish())
}
