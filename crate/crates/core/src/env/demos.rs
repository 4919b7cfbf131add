//! Expert demonstration collection and the on-disk trajectory format.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::frame::ImageFrame;
use crate::{derive_seed, Error, Result};

use super::armreach::{arm_expert, ArmReach};
use super::gridnav::{gridnav_expert, GridNav};
use super::{EnvId, FRAME_SIZE};

pub const FORMAT_VERSION: u32 = 1;

/// Observation at one step: GridNav stores (current, goal) frames, ArmReach a
/// single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StepObs {
    pub frames: Vec<ImageFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub env_id: EnvId,
    pub seed: u64,
    pub observations: Vec<StepObs>,
    /// One action per observation; discrete actions stored as a single index.
    pub actions: Vec<Vec<f32>>,
    /// Per-step rewards (ArmReach); empty for GridNav.
    pub rewards: Vec<f32>,
    pub gt_states: Vec<Vec<f32>>,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.observations.len();
        if self.actions.len() != n || self.gt_states.len() != n {
            return Err(Error::InvalidInput("trajectory length mismatch".into()));
        }
        let frames_per_step = self.env_id.frames_per_step();
        for o in &self.observations {
            if o.frames.len() != frames_per_step {
                return Err(Error::InvalidInput("wrong frame count per step".into()));
            }
        }
        match self.env_id {
            EnvId::Gridnav => {
                if !self.rewards.is_empty() {
                    return Err(Error::InvalidInput("gridnav carries no rewards".into()));
                }
            }
            EnvId::Armreach => {
                if self.rewards.len() != n {
                    return Err(Error::InvalidInput("armreach rewards length mismatch".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoManifest {
    pub format_version: u32,
    pub env_id: EnvId,
    pub expert_id: String,
    pub seed: u64,
    pub n_traj: usize,
    pub frame_size: usize,
    pub frames_per_step: usize,
    pub action_dim: usize,
    pub gt_dim: usize,
    pub has_rewards: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub env_id: EnvId,
    pub expert_id: String,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl EnvId {
    pub fn frames_per_step(&self) -> usize {
        match self {
            EnvId::Gridnav => 2,
            EnvId::Armreach => 1,
        }
    }
}

impl DemoDataset {
    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = DemoManifest {
            format_version: FORMAT_VERSION,
            env_id: self.env_id,
            expert_id: self.expert_id.clone(),
            seed: self.seed,
            n_traj: self.trajectories.len(),
            frame_size: FRAME_SIZE,
            frames_per_step: self.env_id.frames_per_step(),
            action_dim: self.env_id.action_dim(),
            gt_dim: self.env_id.gt_dim(),
            has_rewards: self.env_id == EnvId::Armreach,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        for (i, traj) in self.trajectories.iter().enumerate() {
            traj.validate()?;
            let mut buf = Vec::new();
            buf.extend_from_slice(&traj.seed.to_le_bytes());
            buf.extend_from_slice(&(traj.len() as u32).to_le_bytes());
            for t in 0..traj.len() {
                for f in &traj.observations[t].frames {
                    buf.extend_from_slice(&f.data);
                }
                for &a in &traj.actions[t] {
                    buf.extend_from_slice(&a.to_le_bytes());
                }
                if manifest.has_rewards {
                    buf.extend_from_slice(&traj.rewards[t].to_le_bytes());
                }
                for &g in &traj.gt_states[t] {
                    buf.extend_from_slice(&g.to_le_bytes());
                }
            }
            buf.push(traj.success as u8);
            fs::write(dir.join(format!("traj_{i:05}.bin")), &buf)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<DemoDataset> {
        let manifest: DemoManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported demo format version {}",
                manifest.format_version
            )));
        }
        let frame_bytes = manifest.frame_size * manifest.frame_size * 3;
        let mut trajectories = Vec::with_capacity(manifest.n_traj);
        for i in 0..manifest.n_traj {
            let mut file = fs::File::open(dir.join(format!("traj_{i:05}.bin")))?;
            let mut buf = Vec::new();
            file.read_to_end(&mut buf)?;
            let mut pos = 0usize;
            let seed = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap());
            let steps = u32::from_le_bytes(take(&buf, &mut pos, 4)?.try_into().unwrap()) as usize;
            let mut traj = Trajectory {
                env_id: manifest.env_id,
                seed,
                observations: Vec::with_capacity(steps),
                actions: Vec::with_capacity(steps),
                rewards: Vec::new(),
                gt_states: Vec::with_capacity(steps),
                success: false,
            };
            for _ in 0..steps {
                let mut frames = Vec::with_capacity(manifest.frames_per_step);
                for _ in 0..manifest.frames_per_step {
                    let data = take(&buf, &mut pos, frame_bytes)?.to_vec();
                    frames.push(ImageFrame::from_data(manifest.frame_size, manifest.frame_size, data));
                }
                traj.observations.push(StepObs { frames });
                traj.actions.push(read_f32s(&buf, &mut pos, manifest.action_dim)?);
                if manifest.has_rewards {
                    traj.rewards.push(read_f32s(&buf, &mut pos, 1)?[0]);
                }
                traj.gt_states.push(read_f32s(&buf, &mut pos, manifest.gt_dim)?);
            }
            traj.success = take(&buf, &mut pos, 1)?[0] != 0;
            if pos != buf.len() {
                return Err(Error::InvalidInput("trailing bytes in trajectory file".into()));
            }
            traj.validate()?;
            trajectories.push(traj);
        }
        Ok(DemoDataset {
            env_id: manifest.env_id,
            expert_id: manifest.expert_id,
            seed: manifest.seed,
            trajectories,
        })
    }
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    if *pos + n > buf.len() {
        return Err(Error::InvalidInput("truncated trajectory file".into()));
    }
    let s = &buf[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn read_f32s(buf: &[u8], pos: &mut usize, n: usize) -> Result<Vec<f32>> {
    let s = take(buf, pos, 4 * n)?;
    Ok(s.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Rolls out the scripted expert `n_traj` times. Episode seeds derive from
/// `seed`, so the dataset is a pure function of (env, n_traj, seed).
pub fn collect_demos(env_id: EnvId, n_traj: usize, seed: u64) -> Result<DemoDataset> {
    if n_traj == 0 {
        return Err(Error::InvalidInput("n_traj must be at least 1".into()));
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let traj = match env_id {
            EnvId::Gridnav => collect_gridnav(derive_seed(seed, &format!("demo-{i}")))?,
            EnvId::Armreach => collect_armreach(derive_seed(seed, &format!("demo-{i}")))?,
        };
        trajectories.push(traj);
    }
    Ok(DemoDataset {
        env_id,
        expert_id: match env_id {
            EnvId::Gridnav => "bfs".into(),
            EnvId::Armreach => "pd-ik".into(),
        },
        seed,
        trajectories,
    })
}

fn collect_gridnav(episode_seed: u64) -> Result<Trajectory> {
    let env = GridNav;
    // mazes are connected by construction, so the expert plan always exists;
    // retries guard against a degenerate draw all the same
    for attempt in 0..8u64 {
        let (mut state, mut cur, goal) = env.reset(derive_seed(episode_seed, &format!("try-{attempt}")));
        let mut traj = Trajectory {
            env_id: EnvId::Gridnav,
            seed: episode_seed,
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            gt_states: Vec::new(),
            success: false,
        };
        let mut ok = true;
        loop {
            let action = match gridnav_expert(&state) {
                Ok(a) => a,
                Err(Error::NoPath) => {
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            };
            traj.observations.push(StepObs { frames: vec![cur.clone(), goal.clone()] });
            traj.actions.push(vec![action.index() as f32]);
            traj.gt_states.push(env.ground_truth(&state));
            let (next, done, success) = env.step(&mut state, action)?;
            cur = next;
            if done {
                traj.success = success;
                break;
            }
        }
        if ok {
            debug_assert!(traj.success, "expert gridnav episode must succeed");
            return Ok(traj);
        }
    }
    Err(Error::NoPath)
}

fn collect_armreach(episode_seed: u64) -> Result<Trajectory> {
    let env = ArmReach;
    let (mut state, mut frame) = env.reset(episode_seed);
    let mut traj = Trajectory {
        env_id: EnvId::Armreach,
        seed: episode_seed,
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        gt_states: Vec::new(),
        success: false,
    };
    loop {
        let action = arm_expert(&state);
        traj.observations.push(StepObs { frames: vec![frame.clone()] });
        traj.actions.push(action.to_vec());
        traj.gt_states.push(env.ground_truth(&state));
        let (next, reward, done) = env.step(&mut state, action)?;
        traj.rewards.push(reward);
        frame = next;
        if done {
            traj.success = state.on_target();
            break;
        }
    }
    Ok(traj)
}
