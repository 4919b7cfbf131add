//! Two deterministic pixel-rendered environments with scripted experts,
//! demonstration collection, and the on-disk trajectory format.

pub mod armreach;
pub mod demos;
pub mod gridnav;

pub use armreach::{arm_expert, ArmAction, ArmReach, ArmReachState};
pub use demos::{collect_demos, DemoDataset, StepObs, Trajectory};
pub use gridnav::{gridnav_expert, GridNav, GridNavState, Heading, NavAction};

use serde::{Deserialize, Serialize};

/// Identifies one of the two desk environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Gridnav,
    Armreach,
}

impl EnvId {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::Gridnav => "gridnav",
            EnvId::Armreach => "armreach",
        }
    }

    /// Length of the ground-truth feature vector.
    pub fn gt_dim(&self) -> usize {
        match self {
            EnvId::Gridnav => 9,
            EnvId::Armreach => 8,
        }
    }

    /// Action dimensionality as stored in trajectory records (discrete
    /// actions are stored as a single index).
    pub fn action_dim(&self) -> usize {
        match self {
            EnvId::Gridnav => 1,
            EnvId::Armreach => 2,
        }
    }
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EnvId {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "gridnav" => Ok(EnvId::Gridnav),
            "armreach" => Ok(EnvId::Armreach),
            other => Err(crate::Error::InvalidInput(format!("unknown env id: {other}"))),
        }
    }
}

/// Frame side length used by both environments.
pub const FRAME_SIZE: usize = 64;
